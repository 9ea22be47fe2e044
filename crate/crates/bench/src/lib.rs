//! Shared fixtures for the criterion benchmarks in `benches/`.

use hgnn_core::synth::{generate_dataset, SynthConfig};
use hgnn_core::{DeviceLog, ModelConfig};

/// Device logs from the default generator, `users` users with two devices each.
pub fn sample_logs(users: usize, mean_len: usize) -> Vec<DeviceLog> {
    let cfg = SynthConfig {
        n_users: users,
        mean_log_len: mean_len,
        seed: 3,
        ..SynthConfig::default()
    };
    generate_dataset(&cfg).expect("valid synth config").logs
}

/// Default model sized for the default generator's token space.
pub fn model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: SynthConfig::default().token_vocab_size(),
        ..ModelConfig::default()
    }
}

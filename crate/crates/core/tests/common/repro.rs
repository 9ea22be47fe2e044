//! Two identically configured single-threaded runs must agree bit for bit.

use std::path::Path;

use hgnn_core::eval::write_sweep_csv;
use hgnn_core::io::write_loss_history;
use hgnn_core::model::init_params;
use hgnn_core::synth::{generate_dataset, holdout_split, SynthConfig};
use hgnn_core::{build_graphs, checkpoint, evaluate, pr_curve_export, train, ModelConfig, OptimizerConfig, ScoreMode};

const FILES: [&str; 5] = [
    "model.ckpt",
    "loss_history.csv",
    "pr_curve.csv",
    "f1_threshold.csv",
    "threshold_sweep.csv",
];

/// Full pipeline (generate, train, evaluate) into `out`.
fn pipeline(out: &Path) {
    let synth = SynthConfig {
        n_users: 12,
        mean_log_len: 30,
        vocab_size: 128,
        profile_dim: 8,
        seed: 21,
        ..SynthConfig::default()
    };
    let ds = generate_dataset(&synth).unwrap();
    let (train_pairs, test_pairs) = holdout_split(&ds, 0.25, 1.0, 5).unwrap();
    let cfg = ModelConfig {
        dim: 12,
        pool_dim: 8,
        vocab_size: synth.token_vocab_size(),
        seed: 9,
        ..ModelConfig::default()
    };
    let opt = OptimizerConfig {
        epochs: 3,
        batch_size: 6,
        shuffle_seed: 1,
        dropout_seed: 2,
        ..OptimizerConfig::default()
    };
    let graphs = build_graphs(&ds.logs, cfg.k).unwrap();
    let mut store = init_params(&cfg).unwrap();
    let hist = train(&mut store, &cfg, &opt, &graphs, &train_pairs, Some(&test_pairs)).unwrap();
    checkpoint::save(&store, &out.join(FILES[0])).unwrap();
    write_loss_history(&out.join(FILES[1]), &hist).unwrap();
    let report = evaluate(&store, &cfg, &graphs, &test_pairs, ScoreMode::Ordered).unwrap();
    pr_curve_export(&report, out).unwrap();
    write_sweep_csv(&report, &out.join(FILES[4])).unwrap();
}

pub fn single_threaded_runs_are_bit_identical() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pool.install(|| {
        pipeline(a.path());
        pipeline(b.path());
    });
    for f in FILES {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, y, "{f} differs between runs");
    }
}

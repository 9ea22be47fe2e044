//! Run configuration: defaults, then the JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hgnn_core::matcher::ScoreMode;
use hgnn_core::seed::{self, derive_seed};
use hgnn_core::{ModelConfig, OptimizerConfig, SynthConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component seed is a named sub-stream of it.
    pub seed: u64,
    pub threads: Option<usize>,
    pub walk_len: usize,
    pub walks_per_node: usize,
    /// Fraction of users held out for validation by `train`.
    pub holdout: f64,
    pub score_mode: ScoreMode,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub optim: OptimizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            walk_len: 4,
            walks_per_node: 1,
            holdout: 0.0,
            score_mode: ScoreMode::Ordered,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            optim: OptimizerConfig::default(),
        }
    }
}

/// Flag values that may override the file. `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub dim: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub epochs: Option<usize>,
    pub dropout: Option<f64>,
    pub walk_len: Option<usize>,
    pub threads: Option<usize>,
    pub users: Option<usize>,
    pub devices: Option<usize>,
    pub noise: Option<f64>,
    pub holdout: Option<f64>,
}

/// A resolved configuration plus the file it came from, if any.
pub struct Resolved {
    pub cfg: RunConfig,
    pub source: Option<PathBuf>,
}

pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Resolved> {
    let (mut cfg, file) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let raw: Value = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?;
            let cfg: RunConfig = serde_json::from_value(raw.clone())
                .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?;
            (cfg, Some(raw))
        }
        None => (RunConfig::default(), None),
    };
    let file = file.as_ref();

    apply(&mut cfg.seed, flags.seed, "/seed", "--seed", file);
    apply(&mut cfg.model.k, flags.k, "/model/k", "--K", file);
    apply(&mut cfg.model.dim, flags.dim, "/model/dim", "--dim", file);
    apply(&mut cfg.optim.lr, flags.lr, "/optim/lr", "--lr", file);
    apply(&mut cfg.optim.batch_size, flags.batch, "/optim/batch_size", "--batch", file);
    apply(&mut cfg.optim.epochs, flags.epochs, "/optim/epochs", "--epochs", file);
    apply(&mut cfg.model.dropout, flags.dropout, "/model/dropout", "--dropout", file);
    apply(&mut cfg.walk_len, flags.walk_len, "/walk_len", "--walk-len", file);
    apply(&mut cfg.synth.n_users, flags.users, "/synth/n_users", "--users", file);
    apply(&mut cfg.synth.devices_per_user, flags.devices, "/synth/devices_per_user", "--devices", file);
    apply(&mut cfg.synth.noise, flags.noise, "/synth/noise", "--noise", file);
    apply(&mut cfg.holdout, flags.holdout, "/holdout", "--holdout", file);
    if let Some(t) = flags.threads {
        apply(&mut cfg.threads, Some(Some(t)), "/threads", "--threads", file);
    }

    derive_seeds(&mut cfg, file);
    validate(&cfg)?;
    Ok(Resolved {
        cfg,
        source: path.map(Path::to_path_buf),
    })
}

fn apply<T>(slot: &mut T, flag: Option<T>, pointer: &str, name: &str, file: Option<&Value>)
where
    T: PartialEq + Serialize + std::fmt::Debug,
{
    let Some(v) = flag else { return };
    if let Some(old) = file.and_then(|f| f.pointer(pointer)) {
        if serde_json::to_value(&v).ok().as_ref() != Some(old) {
            log::warn!("{name} {v:?} overrides config file value {old}");
        }
    }
    *slot = v;
}

/// Sub-seeds always follow the root seed; an explicit, different value in
/// the file is reported and replaced.
fn derive_seeds(cfg: &mut RunConfig, file: Option<&Value>) {
    let root = cfg.seed;
    let targets: [(&str, &mut u64, &str); 4] = [
        ("/synth/seed", &mut cfg.synth.seed, seed::DATA),
        ("/model/seed", &mut cfg.model.seed, seed::INIT),
        ("/optim/shuffle_seed", &mut cfg.optim.shuffle_seed, seed::SHUFFLE),
        ("/optim/dropout_seed", &mut cfg.optim.dropout_seed, seed::DROPOUT),
    ];
    for (pointer, slot, stream) in targets {
        let derived = derive_seed(root, stream);
        if let Some(old) = file.and_then(|f| f.pointer(pointer)).and_then(Value::as_u64) {
            if old != derived {
                log::warn!("config value {pointer} = {old} replaced by the `{stream}` stream of root seed {root}");
            }
        }
        *slot = derived;
    }
}

pub fn walk_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, seed::WALKS)
}

pub fn split_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, seed::SPLIT)
}

fn validate(cfg: &RunConfig) -> Result<()> {
    let bad = |m: String| Err(UsageError(m).into());
    if cfg.model.k == 0 {
        return bad("--K must be >= 1".into());
    }
    if cfg.model.dim == 0 {
        return bad("--dim must be >= 1".into());
    }
    if !(cfg.optim.lr.is_finite() && cfg.optim.lr >= 0.0) {
        return bad(format!("--lr must be finite and >= 0, got {}", cfg.optim.lr));
    }
    if cfg.optim.batch_size == 0 {
        return bad("--batch must be >= 1".into());
    }
    if !(0.0..1.0).contains(&cfg.model.dropout) {
        return bad(format!("--dropout must lie in [0, 1), got {}", cfg.model.dropout));
    }
    if cfg.walk_len == 0 || cfg.walks_per_node == 0 {
        return bad("--walk-len and walks_per_node must be >= 1".into());
    }
    if !(0.0..1.0).contains(&cfg.holdout) {
        return bad(format!("--holdout must lie in [0, 1), got {}", cfg.holdout));
    }
    if cfg.threads == Some(0) {
        return bad("--threads must be >= 1".into());
    }
    Ok(())
}

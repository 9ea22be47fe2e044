//! Hierarchical graph neural network with cross-attention for cross-device
//! user matching.
//!
//! Each device's browsing log becomes a two-level graph: one fine node per
//! distinct URL, linked by observed transitions, and one coarse node per
//! window of `K` consecutive visits. An encoder alternates GRU message
//! passing on the fine level with attention between fine and coarse nodes.
//! Two encoded devices are then compared through cross-attention, a learned
//! per-node filter and a pooled distance, and a small classifier outputs the
//! probability that both devices belong to one user.
//!
//! Everything runs on a small reverse-mode autodiff tape over dense `f64`
//! matrices ([`Tape`]).

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod io;
pub mod matcher;
pub mod model;
pub mod optim;
pub mod params;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod tiers;
pub mod train;

pub use autodiff::{ElementwiseKind, Gradients, Tape, Var};
pub use error::{DataError, Error, GraphError, Result, TensorError};
pub use eval::{evaluate_threshold_sweep, pr_curve_export, EvalReport, ThresholdRow};
pub use graph::{
    build_coarse_level, build_fine_graph, build_shortcut_graph, graph_stats, DeviceLog, Event, FineGraph,
    HierGraph, ShortcutGraph, StatsReport, UrlKey,
};
pub use io::{load_logs, read_pairs, write_logs, write_pairs, DevicePair};
pub use matcher::{forward_pair, score_pair, score_pair_with, ScoreMode};
pub use model::{encode_device, init_params, CrossScore, MatchHead, ModelConfig};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::ParamStore;
pub use synth::{generate_dataset, sample_pairs, SynthConfig, SynthDataset};
pub use tensor::Tensor;
pub use train::{build_graphs, evaluate, score_pairs, train, train_with_hook, EpochStats, GraphSet};

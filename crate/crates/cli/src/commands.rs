use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use hgnn_core::io::{write_json, write_loss_history, write_scores};
use hgnn_core::matcher::ScoreMode;
use hgnn_core::synth::generate_dataset;
use hgnn_core::train::split_by_user;
use hgnn_core::{
    build_graphs, checkpoint, eval, evaluate, graph_stats, load_logs, pr_curve_export, read_pairs, score_pairs, tiers,
    train, write_logs, write_pairs, DeviceLog, DevicePair, HierGraph,
};
use rayon::prelude::*;

use crate::config::{self, Overrides, RunConfig};
use crate::{Command, Common, UsageError};

pub const CONFIG_FILE: &str = "config.json";

pub fn run(cmd: Command, common: &Common) -> Result<()> {
    let mut flags = Overrides {
        seed: common.seed,
        k: common.k,
        dim: common.dim,
        lr: common.lr,
        batch: common.batch,
        epochs: common.epochs,
        dropout: common.dropout,
        walk_len: common.walk_len,
        threads: common.threads,
        ..Overrides::default()
    };
    let config_path = match &cmd {
        // Scoring needs the architecture the checkpoint was trained with.
        Command::Eval { checkpoint, .. } | Command::ScorePairs { checkpoint, .. } if common.config.is_none() => {
            let beside = checkpoint.with_file_name(CONFIG_FILE);
            beside.exists().then_some(beside)
        }
        _ => common.config.clone(),
    };
    match &cmd {
        Command::GenData { users, devices, noise } => {
            flags.users = *users;
            flags.devices = *devices;
            flags.noise = *noise;
        }
        Command::Train { holdout, .. } => flags.holdout = *holdout,
        _ => {}
    }
    let resolved = config::load(config_path.as_deref(), &flags)?;
    if let Some(src) = &resolved.source {
        log::info!("configuration from {}", src.display());
    }
    let mut cfg = resolved.cfg;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = common.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    match cmd {
        Command::GenData { .. } => gen_data(&cfg, out),
        Command::BuildGraph { logs } => build_graph(&cfg, &logs, out),
        Command::Train {
            logs, pairs, val_pairs, ..
        } => run_train(&mut cfg, &logs, &pairs, val_pairs.as_deref(), out),
        Command::Eval {
            checkpoint,
            pairs,
            logs,
        } => run_eval(&cfg, &checkpoint, &pairs, &logs, out),
        Command::CompareTiers {
            logs,
            walks_per_node,
            time,
        } => {
            cfg.walks_per_node = walks_per_node;
            compare_tiers(&cfg, &logs, time, out)
        }
        Command::ScorePairs {
            checkpoint,
            pairs,
            logs,
            symmetric,
        } => {
            if symmetric {
                cfg.score_mode = ScoreMode::Symmetric;
            }
            run_score(&cfg, &checkpoint, &pairs, &logs, out)
        }
    }
}

fn save_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_json(&out.join(CONFIG_FILE), cfg)?;
    Ok(())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = generate_dataset(&cfg.synth)?;
    write_logs(&out.join("logs.jsonl"), &ds.logs)?;
    write_pairs(&out.join("pairs.csv"), &ds.pairs)?;
    let path = out.join("devices.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| path.display().to_string())?);
    writeln!(f, "device_id,user_id")?;
    for (d, u) in &ds.user_of {
        writeln!(f, "{d},{u}")?;
    }
    f.flush()?;
    save_config(cfg, out)?;
    log::info!(
        "wrote {} device logs and {} pairs to {}",
        ds.logs.len(),
        ds.pairs.len(),
        out.display()
    );
    Ok(())
}

fn build_graph(cfg: &RunConfig, logs: &Path, out: &Path) -> Result<()> {
    let logs = load_logs(logs)?;
    let k = cfg.model.k;
    let rows: Vec<(String, hgnn_core::StatsReport)> = logs
        .par_iter()
        .map(|l| Ok((l.device_id.clone(), graph_stats(&HierGraph::from_log(l, k)?, None))))
        .collect::<hgnn_core::Result<_>>()?;
    let path = out.join("graph_stats.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path).with_context(|| path.display().to_string())?);
    writeln!(f, "device_id,seq_len,fine_nodes,fine_edges,coarse_nodes,membership_edges")?;
    for (id, s) in &rows {
        writeln!(
            f,
            "{id},{},{},{},{},{}",
            s.seq_len, s.fine_nodes, s.fine_edges, s.coarse_nodes, s.membership_edges
        )?;
    }
    f.flush()?;
    save_config(cfg, out)?;
    log::info!("built {} graphs with K = {k}", rows.len());
    Ok(())
}

fn max_token(logs: &[DeviceLog]) -> Option<u32> {
    logs.iter()
        .flat_map(|l| l.events.iter().flat_map(|e| e.tokens.iter().copied()))
        .max()
}

fn run_train(cfg: &mut RunConfig, logs: &Path, pairs: &Path, val: Option<&Path>, out: &Path) -> Result<()> {
    let logs = load_logs(logs)?;
    let pairs = read_pairs(pairs)?;
    let needed = max_token(&logs).map_or(1, |t| t as usize + 1);
    if cfg.model.vocab_size < needed {
        if cfg.model.vocab_size > 1 {
            log::warn!(
                "model.vocab_size {} is below the largest token id in the logs; using {needed}",
                cfg.model.vocab_size
            );
        }
        cfg.model.vocab_size = needed;
    }
    let (train_pairs, val_pairs) = match val {
        Some(v) => (pairs, Some(read_pairs(v)?)),
        None if cfg.holdout > 0.0 => {
            let (t, v) = split_by_user(&pairs, cfg.holdout, config::split_seed(cfg))?;
            (t, Some(v))
        }
        None => (pairs, None),
    };
    log::info!(
        "training on {} pairs ({} validation), {} epochs",
        train_pairs.len(),
        val_pairs.as_ref().map_or(0, Vec::len),
        cfg.optim.epochs
    );
    let graphs = build_graphs(&logs, cfg.model.k)?;
    let mut store = hgnn_core::init_params(&cfg.model)?;
    save_config(cfg, out)?;
    let history = train(
        &mut store,
        &cfg.model,
        &cfg.optim,
        &graphs,
        &train_pairs,
        val_pairs.as_deref(),
    )?;
    checkpoint::save(&store, &out.join("model.ckpt"))?;
    write_loss_history(&out.join("loss_history.csv"), &history)?;
    if let Some(last) = history.last() {
        log::info!("final mean loss {:.5}", last.mean_loss);
    }
    Ok(())
}

/// Loads the checkpoint and the graphs of the devices referenced by `pairs`.
fn load_scoring(
    cfg: &RunConfig,
    ckpt: &Path,
    pairs: &[DevicePair],
    logs: &Path,
) -> Result<(hgnn_core::ParamStore, hgnn_core::GraphSet)> {
    let mut store = hgnn_core::init_params(&cfg.model)?;
    let loaded = checkpoint::load(ckpt)?;
    let unused = checkpoint::restore_into(&mut store, &loaded)?;
    if !unused.is_empty() {
        log::warn!("checkpoint tensors not used by this model: {}", unused.join(", "));
    }
    let wanted: std::collections::BTreeSet<&str> =
        pairs.iter().flat_map(|p| [p.device_a.as_str(), p.device_b.as_str()]).collect();
    let logs: Vec<DeviceLog> = load_logs(logs)?
        .into_iter()
        .filter(|l| wanted.contains(l.device_id.as_str()))
        .collect();
    Ok((store, build_graphs(&logs, cfg.model.k)?))
}

fn run_eval(cfg: &RunConfig, ckpt: &Path, pairs: &Path, logs: &Path, out: &Path) -> Result<()> {
    let pairs = read_pairs(pairs)?;
    if pairs.iter().any(|p| p.label.is_none()) {
        return Err(UsageError("eval needs a labelled pair file (device_a,device_b,label)".into()).into());
    }
    let (store, graphs) = load_scoring(cfg, ckpt, &pairs, logs)?;
    let report = evaluate(&store, &cfg.model, &graphs, &pairs, cfg.score_mode)?;
    pr_curve_export(&report, out)?;
    eval::write_sweep_csv(&report, &out.join("threshold_sweep.csv"))?;
    let metrics: BTreeMap<&str, f64> = [
        ("best_f1", report.best_f1),
        ("best_threshold", report.best_threshold),
        ("pairs", pairs.len() as f64),
    ]
    .into();
    write_json(&out.join("metrics.json"), &metrics)?;
    save_config(cfg, out)?;
    log::info!("best F1 {:.4} at threshold {}", report.best_f1, report.best_threshold);
    Ok(())
}

fn run_score(cfg: &RunConfig, ckpt: &Path, pairs: &Path, logs: &Path, out: &Path) -> Result<()> {
    let pairs = read_pairs(pairs)?;
    let (store, graphs) = load_scoring(cfg, ckpt, &pairs, logs)?;
    let scores = score_pairs(&store, &cfg.model, &graphs, &pairs, cfg.score_mode)?;
    write_scores(&out.join("scores.csv"), &pairs, &scores)?;
    save_config(cfg, out)?;
    log::info!("scored {} pairs", pairs.len());
    Ok(())
}

fn compare_tiers(cfg: &RunConfig, logs: &Path, time: bool, out: &Path) -> Result<()> {
    let logs = load_logs(logs)?;
    let (k, walk, walks) = (cfg.model.k, cfg.walk_len, cfg.walks_per_node);
    let built = tiers::tier_rows(&logs, k, walk, walks, config::walk_seed(cfg))?;
    let timing = if time {
        Some(tiers::time_tier_forward(&built, cfg.model.dim, cfg.model.seed)?)
    } else {
        None
    };
    let rows: Vec<tiers::TierRow> = built.into_iter().map(|(r, _, _)| r).collect();
    tiers::write_tier_csv(&out.join("tiers.csv"), &rows)?;
    let summary = tiers::summarize(&rows, k, walk, walks, timing);
    write_json(&out.join("tier_summary.json"), &summary)?;
    save_config(cfg, out)?;
    log::info!(
        "mean shortcut/membership edge ratio {:.3} over {} devices",
        summary.mean_ratio,
        summary.devices
    );
    Ok(())
}

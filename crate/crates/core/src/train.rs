//! Mini-batch training, batch scoring and user-level splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{DataError, Error, Result};
use crate::eval::{evaluate_threshold_sweep, EvalReport};
use crate::graph::{DeviceLog, HierGraph};
use crate::io::DevicePair;
use crate::matcher::{forward_pair, score_pair_with, ScoreMode};
use crate::model::ModelConfig;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Device graphs keyed by device id.
pub type GraphSet = HashMap<String, HierGraph>;

pub fn build_graphs(logs: &[DeviceLog], k: usize) -> Result<GraphSet> {
    let built: Vec<(String, HierGraph)> = logs
        .par_iter()
        .map(|log| Ok((log.device_id.clone(), HierGraph::from_log(log, k)?)))
        .collect::<Result<_>>()?;
    let mut out = GraphSet::with_capacity(built.len());
    for (id, g) in built {
        if out.insert(id.clone(), g).is_some() {
            return Err(DataError::Invalid(format!("duplicate device id `{id}`")).into());
        }
    }
    Ok(out)
}

fn lookup<'a>(graphs: &'a GraphSet, id: &str) -> Result<&'a HierGraph> {
    graphs
        .get(id)
        .ok_or_else(|| DataError::Invalid(format!("pair references unknown device `{id}`")).into())
}

fn label_of(p: &DevicePair) -> Result<bool> {
    p.label.ok_or_else(|| {
        DataError::Invalid(format!("pair ({}, {}) has no label", p.device_a, p.device_b)).into()
    })
}

/// Gradients keyed by parameter name.
pub type NamedGrads = Vec<(String, Tensor)>;

/// Binary cross-entropy of one pair and the gradient of every parameter it
/// reaches.
pub fn pair_loss_and_grads(
    store: &ParamStore,
    cfg: &ModelConfig,
    gv: &HierGraph,
    gw: &HierGraph,
    label: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, NamedGrads)> {
    let mut tape = Tape::new();
    let out = forward_pair(&mut tape, store, cfg, gv, gw, rng)?;
    let loss = tape.bce(out.y_hat, if label { 1.0 } else { 0.0 })?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let mut named = Vec::with_capacity(tape.bound_params().len());
    for (name, var) in tape.bound_params() {
        if let Some(g) = grads.take(*var) {
            named.push((name.clone(), g));
        }
    }
    Ok((value, named))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_best_f1: Option<f64>,
    pub val_best_threshold: Option<f64>,
}

/// Trains `store` in place with mini-batch gradient descent on the mean BCE.
///
/// Per-pair gradients are computed in parallel but summed in batch order, so
/// the result does not depend on the thread count. Validation (when given)
/// runs after every epoch.
pub fn train(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
    graphs: &GraphSet,
    train_pairs: &[DevicePair],
    val_pairs: Option<&[DevicePair]>,
) -> Result<Vec<EpochStats>> {
    train_with_hook(store, cfg, opt, graphs, train_pairs, val_pairs, |_, _| Ok(()))
}

/// [`train`], calling `on_epoch` with each epoch's statistics and the
/// updated parameters.
pub fn train_with_hook(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    opt: &OptimizerConfig,
    graphs: &GraphSet,
    train_pairs: &[DevicePair],
    val_pairs: Option<&[DevicePair]>,
    mut on_epoch: impl FnMut(&EpochStats, &ParamStore) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if train_pairs.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if opt.batch_size == 0 {
        return Err(Error::config("batch size must be >= 1"));
    }
    if !opt.lr.is_finite() || opt.lr < 0.0 {
        return Err(Error::config(format!("learning rate must be finite and >= 0, got {}", opt.lr)));
    }
    let labels: Vec<bool> = train_pairs.iter().map(label_of).collect::<Result<_>>()?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        log::warn!(
            "training set has a single class ({} of {} pairs positive)",
            positives,
            labels.len()
        );
    }
    let resolved: Vec<(&HierGraph, &HierGraph)> = train_pairs
        .iter()
        .map(|p| Ok((lookup(graphs, &p.device_a)?, lookup(graphs, &p.device_b)?)))
        .collect::<Result<_>>()?;

    let mut optimizer = Optimizer::new(opt.clone());
    let mut history = Vec::with_capacity(opt.epochs);
    let n = train_pairs.len();
    for epoch in 1..=opt.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(opt.shuffle_seed);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(opt.batch_size).enumerate() {
            let base = ((epoch - 1) * n + b * opt.batch_size) as u64;
            let frozen: &ParamStore = store;
            let results: Vec<Result<(f64, NamedGrads)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opt.dropout_seed);
                    rng.set_stream(base + j as u64);
                    let (gv, gw) = resolved[i];
                    pair_loss_and_grads(frozen, cfg, gv, gw, labels[i], Some(&mut rng))
                })
                .collect();
            store.zero_grads();
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(Error::NumericalAbort(format!(
                        "non-finite loss in epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                loss_sum += loss;
                for (name, g) in &grads {
                    store.add_grad(name, g)?;
                }
            }
            store.scale_grads(1.0 / batch.len() as f64);
            optimizer.step(store);
            if let Some((name, _)) = store.iter().find(|(_, t)| !t.is_finite()) {
                return Err(Error::NumericalAbort(format!(
                    "parameter `{name}` became non-finite in epoch {epoch}, batch {}",
                    b + 1
                )));
            }
        }
        let mean_loss = loss_sum / n as f64;
        let (val_best_f1, val_best_threshold) = match val_pairs {
            Some(v) if !v.is_empty() => {
                let r = evaluate(store, cfg, graphs, v, ScoreMode::Ordered)?;
                (Some(r.best_f1), Some(r.best_threshold))
            }
            _ => (None, None),
        };
        match val_best_f1 {
            Some(f1) => log::info!("epoch {epoch}: mean loss {mean_loss:.5}, val best F1 {f1:.4}"),
            None => log::info!("epoch {epoch}: mean loss {mean_loss:.5}"),
        }
        let stats = EpochStats {
            epoch,
            mean_loss,
            val_best_f1,
            val_best_threshold,
        };
        on_epoch(&stats, store)?;
        history.push(stats);
    }
    Ok(history)
}

/// Inference-mode scores for `pairs`, in order.
pub fn score_pairs(
    store: &ParamStore,
    cfg: &ModelConfig,
    graphs: &GraphSet,
    pairs: &[DevicePair],
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|p| {
            let gv = lookup(graphs, &p.device_a)?;
            let gw = lookup(graphs, &p.device_b)?;
            score_pair_with(store, cfg, gv, gw, mode)
        })
        .collect()
}

/// Scores labelled pairs and sweeps thresholds.
pub fn evaluate(
    store: &ParamStore,
    cfg: &ModelConfig,
    graphs: &GraphSet,
    pairs: &[DevicePair],
    mode: ScoreMode,
) -> Result<EvalReport> {
    let labels: Vec<bool> = pairs.iter().map(label_of).collect::<Result<_>>()?;
    let scores = score_pairs(store, cfg, graphs, pairs, mode)?;
    evaluate_threshold_sweep(&scores, &labels)
}

/// Groups devices into users: connected components of positive pairs.
/// Component ids follow the sorted order of their smallest device id.
pub fn users_from_pairs(pairs: &[DevicePair]) -> BTreeMap<String, usize> {
    let mut ids: BTreeSet<&str> = BTreeSet::new();
    for p in pairs {
        ids.insert(&p.device_a);
        ids.insert(&p.device_b);
    }
    let ids: Vec<&str> = ids.into_iter().collect();
    let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for p in pairs.iter().filter(|p| p.label == Some(true)) {
        let a = find(&mut parent, pos[p.device_a.as_str()]);
        let b = find(&mut parent, pos[p.device_b.as_str()]);
        // Keep the smaller index as root so ids follow sorted order.
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        parent[hi] = lo;
    }
    let mut comp_id: HashMap<usize, usize> = HashMap::new();
    let mut out = BTreeMap::new();
    for (i, &d) in ids.iter().enumerate() {
        let root = find(&mut parent, i);
        let next = comp_id.len();
        let c = *comp_id.entry(root).or_insert(next);
        out.insert(d.to_string(), c);
    }
    out
}

/// Splits labelled pairs so that no user appears on both sides.
///
/// Users (see [`users_from_pairs`]) are shuffled and the first
/// `ceil(holdout · users)` go to validation. Pairs spanning both sides are
/// dropped. Validation negatives are topped up with random cross-user pairs
/// of held-out devices until they match the validation positives.
pub fn split_by_user(pairs: &[DevicePair], holdout: f64, seed: u64) -> Result<(Vec<DevicePair>, Vec<DevicePair>)> {
    if !(0.0..1.0).contains(&holdout) {
        return Err(Error::config(format!("holdout fraction must lie in [0, 1), got {holdout}")));
    }
    let users = users_from_pairs(pairs);
    let n_users = users.values().copied().max().map_or(0, |m| m + 1);
    let mut order: Vec<usize> = (0..n_users).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = (holdout * n_users as f64).ceil() as usize;
    let val_users: BTreeSet<usize> = order[..n_val.min(n_users)].iter().copied().collect();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for p in pairs {
        let (ua, ub) = (users[&p.device_a], users[&p.device_b]);
        match (val_users.contains(&ua), val_users.contains(&ub)) {
            (false, false) => train.push(p.clone()),
            (true, true) => {
                seen.insert((p.device_a.clone(), p.device_b.clone()));
                val.push(p.clone());
            }
            _ => {}
        }
    }
    let val_devices: Vec<&String> = users
        .iter()
        .filter(|(_, u)| val_users.contains(u))
        .map(|(d, _)| d)
        .collect();
    let pos = val.iter().filter(|p| p.label == Some(true)).count();
    let mut neg = val.len() - pos;
    let mut attempts = 0;
    while neg < pos && val_devices.len() > 1 && attempts < 100 * pos.max(1) {
        attempts += 1;
        let a = val_devices[rng.random_range(0..val_devices.len())];
        let b = val_devices[rng.random_range(0..val_devices.len())];
        if users[a] == users[b] || !seen.insert((a.clone(), b.clone())) {
            continue;
        }
        val.push(DevicePair::labeled(a, b, false));
        neg += 1;
    }
    Ok((train, val))
}

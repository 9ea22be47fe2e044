//! Hierarchical coarse tier vs. random-walk shortcut tier: edge counts and
//! second-tier propagation cost.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::Result;
use crate::graph::{build_shortcut_graph, graph_stats, DeviceLog, HierGraph, ShortcutGraph};
use crate::gru::{self, GruParams};
use crate::model::{coarse_update, fine_hetero_update, neighbor_gru_round};
use crate::params::ParamStore;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRow {
    pub device_id: String,
    pub seq_len: usize,
    pub fine_nodes: usize,
    pub coarse_nodes: usize,
    pub membership_edges: usize,
    pub shortcut_edges: usize,
    /// `shortcut_edges / membership_edges`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub devices: usize,
    pub k: usize,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub mean_ratio: f64,
    pub max_membership_over_len: f64,
    /// Shortcut-tier forward time divided by hierarchical-tier forward time.
    /// Wall-clock, so informational only.
    pub forward_time_ratio: Option<f64>,
}

/// Builds both tiers for every log. Walk seeds derive from `seed` and the
/// device's position.
pub fn tier_rows(
    logs: &[DeviceLog],
    k: usize,
    walk_length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Result<Vec<(TierRow, HierGraph, ShortcutGraph)>> {
    logs.iter()
        .enumerate()
        .map(|(i, log)| {
            let g = HierGraph::from_log(log, k)?;
            let s = build_shortcut_graph(
                &g.fine_edges,
                g.fine_count(),
                walk_length,
                walks_per_node,
                derive_seed(seed, &format!("walks.{i}")),
            )?;
            let st = graph_stats(&g, Some(&s));
            let row = TierRow {
                device_id: log.device_id.clone(),
                seq_len: st.seq_len,
                fine_nodes: st.fine_nodes,
                coarse_nodes: st.coarse_nodes,
                membership_edges: st.membership_edges,
                shortcut_edges: st.shortcut_edges.unwrap_or(0),
                ratio: st.ratio.unwrap_or(0.0),
            };
            Ok((row, g, s))
        })
        .collect()
}

/// Undirected neighbour lists of the shortcut tier.
pub fn shortcut_neighbors(s: &ShortcutGraph) -> Vec<Vec<usize>> {
    let mut n = vec![Vec::new(); s.node_count];
    for &(a, b) in &s.shortcut_edges {
        n[a].push(b);
        n[b].push(a);
    }
    n
}

/// Times one second-tier propagation per device: a coarse update plus
/// fine/coarse attention for the hierarchy, and a recurrent aggregation over
/// shortcut neighbours for the shortcut tier. Returns
/// `(hierarchical_seconds, shortcut_seconds)`.
pub fn time_tier_forward(graphs: &[(TierRow, HierGraph, ShortcutGraph)], dim: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(seed);
    gru::init_params(&mut store, &mut rng, "tier.gru", dim)?;
    for w in ["w1", "w2", "w3"] {
        store.insert_uniform(&mut rng, &format!("tier.{w}"), dim, dim)?;
    }
    let features: Vec<Tensor> = graphs
        .iter()
        .map(|(_, g, _)| {
            let data = (0..g.fine_count() * dim)
                .map(|i| ((i as f64) * 0.37).sin())
                .collect();
            Tensor::matrix(g.fine_count(), dim, data)
        })
        .collect::<Result<_, _>>()?;

    let start = Instant::now();
    for ((_, g, _), x) in graphs.iter().zip(&features) {
        let mut tape = Tape::new();
        let x = tape.constant(x.clone());
        let w1 = tape.param(&store, "tier.w1")?;
        let w2 = tape.param(&store, "tier.w2")?;
        let w3 = tape.param(&store, "tier.w3")?;
        let c = coarse_update(&mut tape, g, x, w1)?;
        fine_hetero_update(&mut tape, g, x, c, w2, w3)?;
    }
    let hier = start.elapsed().as_secs_f64();

    let start = Instant::now();
    for ((_, _, s), x) in graphs.iter().zip(&features) {
        let mut tape = Tape::new();
        let x = tape.constant(x.clone());
        let p = GruParams::bind(&mut tape, &store, "tier.gru")?;
        neighbor_gru_round(&mut tape, &shortcut_neighbors(s), x, &p)?;
    }
    let shortcut = start.elapsed().as_secs_f64();
    Ok((hier, shortcut))
}

pub fn summarize(rows: &[TierRow], k: usize, walk_length: usize, walks_per_node: usize, timing: Option<(f64, f64)>) -> TierSummary {
    let n = rows.len().max(1) as f64;
    TierSummary {
        devices: rows.len(),
        k,
        walk_length,
        walks_per_node,
        mean_ratio: rows.iter().map(|r| r.ratio).sum::<f64>() / n,
        max_membership_over_len: rows
            .iter()
            .map(|r| r.membership_edges as f64 / r.seq_len as f64)
            .fold(0.0, f64::max),
        forward_time_ratio: timing.and_then(|(h, s)| (h > 0.0).then(|| s / h)),
    }
}

pub fn write_tier_csv(path: &std::path::Path, rows: &[TierRow]) -> Result<()> {
    let io = |source| crate::error::DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(std::io::Error::other(e)))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(std::io::Error::other(e)))?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

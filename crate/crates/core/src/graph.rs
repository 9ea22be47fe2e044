//! Hierarchical device graphs built from event sequences.
//!
//! The fine level has one node per distinct URL and a directed edge for each
//! distinct consecutive transition (a repeated URL yields a self-loop). The
//! coarse level partitions the raw sequence into consecutive windows of `K`
//! positions; each window becomes a coarse node linked to the distinct fine
//! nodes visited inside it.
//!
//! [`build_shortcut_graph`] builds the random-walk shortcut tier used as the
//! structural baseline: every fine node is linked (undirected) to all nodes
//! reached by random walks started from it.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GraphError;

/// A URL identified by its token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UrlKey(pub Vec<u32>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub ts: i64,
    pub tokens: Vec<u32>,
}

/// One device's time-ordered URL visits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceLog {
    pub device_id: String,
    pub events: Vec<Event>,
}

impl DeviceLog {
    pub fn validate(&self) -> Result<(), GraphError> {
        if self.events.is_empty() {
            return Err(GraphError::EmptyLog(self.device_id.clone()));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.tokens.is_empty() {
                return Err(GraphError::EmptyTokens {
                    device: self.device_id.clone(),
                    index: i,
                });
            }
            if i > 0 && e.ts < self.events[i - 1].ts {
                return Err(GraphError::TimestampOrder {
                    device: self.device_id.clone(),
                    index: i,
                });
            }
        }
        Ok(())
    }

    /// Convenience constructor: one single-token URL per event, timestamps
    /// `0, 1, 2, …`.
    pub fn from_tokens(device_id: &str, tokens: &[u32]) -> Self {
        DeviceLog {
            device_id: device_id.to_string(),
            events: tokens
                .iter()
                .enumerate()
                .map(|(i, &t)| Event {
                    ts: i as i64,
                    tokens: vec![t],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Fine level of a device graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGraph {
    /// Distinct URLs in order of first visit.
    pub nodes: Vec<UrlKey>,
    /// Distinct directed transitions in order of first occurrence.
    pub edges: Vec<(usize, usize)>,
    /// Distinct in-neighbours of each node, ordered by the sequence position
    /// of their first transition into it.
    pub in_neighbors: Vec<Vec<usize>>,
    /// Fine node index of each sequence position.
    pub positions: Vec<usize>,
}

/// Two-level heterogeneous device graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierGraph {
    pub fine_nodes: Vec<UrlKey>,
    pub fine_edges: Vec<(usize, usize)>,
    pub in_neighbors: Vec<Vec<usize>>,
    pub coarse_count: usize,
    /// Member fine nodes of each coarse node, ascending.
    pub membership: Vec<Vec<usize>>,
    /// Coarse nodes containing each fine node, ascending.
    pub coarse_of: Vec<Vec<usize>>,
    pub seq_len: usize,
    pub k: usize,
}

impl HierGraph {
    pub fn from_log(log: &DeviceLog, k: usize) -> Result<Self, GraphError> {
        build_coarse_level(build_fine_graph(log)?, k)
    }

    pub fn fine_count(&self) -> usize {
        self.fine_nodes.len()
    }

    pub fn membership_edge_count(&self) -> usize {
        self.membership.iter().map(Vec::len).sum()
    }
}

pub fn build_fine_graph(log: &DeviceLog) -> Result<FineGraph, GraphError> {
    log.validate()?;
    let mut ids: HashMap<&[u32], usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut positions = Vec::with_capacity(log.events.len());
    for e in &log.events {
        let next = nodes.len();
        let id = *ids.entry(e.tokens.as_slice()).or_insert(next);
        if id == next {
            nodes.push(UrlKey(e.tokens.clone()));
        }
        positions.push(id);
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    let mut in_neighbors = vec![Vec::new(); nodes.len()];
    for w in positions.windows(2) {
        let (src, dst) = (w[0], w[1]);
        if seen.insert((src, dst)) {
            edges.push((src, dst));
            in_neighbors[dst].push(src);
        }
    }
    Ok(FineGraph {
        nodes,
        edges,
        in_neighbors,
        positions,
    })
}

pub fn build_coarse_level(fine: FineGraph, k: usize) -> Result<HierGraph, GraphError> {
    if k < 1 {
        return Err(GraphError::InvalidK(k));
    }
    let n = fine.positions.len();
    let mut membership = Vec::with_capacity(n.div_ceil(k));
    let mut coarse_of = vec![Vec::new(); fine.nodes.len()];
    for (j, window) in fine.positions.chunks(k).enumerate() {
        let members: BTreeSet<usize> = window.iter().copied().collect();
        for &f in &members {
            coarse_of[f].push(j);
        }
        membership.push(members.into_iter().collect::<Vec<_>>());
    }
    Ok(HierGraph {
        coarse_count: membership.len(),
        fine_nodes: fine.nodes,
        fine_edges: fine.edges,
        in_neighbors: fine.in_neighbors,
        membership,
        coarse_of,
        seq_len: n,
        k,
    })
}

/// Random-walk shortcut tier over a fine graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutGraph {
    pub node_count: usize,
    /// Undirected shortcut pairs `(a, b)` with `a < b`, ascending.
    pub shortcut_edges: Vec<(usize, usize)>,
    pub walk_length: usize,
    pub walks_per_node: usize,
    pub rng_seed: u64,
}

/// Runs `walks_per_node` uniform random walks of up to `walk_length` steps
/// along outgoing fine edges from every node, linking the start to each
/// node visited. Walks stop early at nodes without outgoing edges.
pub fn build_shortcut_graph(
    fine_edges: &[(usize, usize)],
    node_count: usize,
    walk_length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Result<ShortcutGraph, GraphError> {
    if walk_length < 1 {
        return Err(GraphError::InvalidWalkLength(walk_length));
    }
    let mut out = vec![Vec::new(); node_count];
    for &(s, d) in fine_edges {
        out[s].push(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = BTreeSet::new();
    for start in 0..node_count {
        for _ in 0..walks_per_node {
            let mut cur = start;
            for _ in 0..walk_length {
                let next = &out[cur];
                if next.is_empty() {
                    break;
                }
                cur = next[rng.random_range(0..next.len())];
                if cur != start {
                    set.insert((start.min(cur), start.max(cur)));
                }
            }
        }
    }
    Ok(ShortcutGraph {
        node_count,
        shortcut_edges: set.into_iter().collect(),
        walk_length,
        walks_per_node,
        rng_seed: seed,
    })
}

/// Size summary of a device graph and, optionally, its shortcut tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub seq_len: usize,
    pub fine_nodes: usize,
    pub fine_edges: usize,
    pub coarse_nodes: usize,
    pub membership_edges: usize,
    pub shortcut_edges: Option<usize>,
    /// `shortcut_edges / membership_edges`.
    pub ratio: Option<f64>,
    pub walk_length: Option<usize>,
    pub walks_per_node: Option<usize>,
}

pub fn graph_stats(g: &HierGraph, s: Option<&ShortcutGraph>) -> StatsReport {
    let membership_edges = g.membership_edge_count();
    StatsReport {
        seq_len: g.seq_len,
        fine_nodes: g.fine_count(),
        fine_edges: g.fine_edges.len(),
        coarse_nodes: g.coarse_count,
        membership_edges,
        shortcut_edges: s.map(|s| s.shortcut_edges.len()),
        ratio: s.map(|s| s.shortcut_edges.len() as f64 / membership_edges as f64),
        walk_length: s.map(|s| s.walk_length),
        walks_per_node: s.map(|s| s.walks_per_node),
    }
}

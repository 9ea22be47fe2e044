//! Graph construction checked against a deliberately naive builder.

use hgnn_core::{build_shortcut_graph, DeviceLog, Event, HierGraph, UrlKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Naive {
    nodes: Vec<Vec<u32>>,
    edges: Vec<(usize, usize)>,
    in_neighbors: Vec<Vec<usize>>,
    membership: Vec<Vec<usize>>,
    coarse_of: Vec<Vec<usize>>,
}

/// Quadratic-time reference: linear scans everywhere, no hashing.
fn naive(seq: &[Vec<u32>], k: usize) -> Naive {
    let mut nodes: Vec<Vec<u32>> = Vec::new();
    for url in seq {
        if !nodes.contains(url) {
            nodes.push(url.clone());
        }
    }
    let id = |url: &Vec<u32>| nodes.iter().position(|n| n == url).unwrap();
    let mut edges = Vec::new();
    for t in 0..seq.len().saturating_sub(1) {
        let e = (id(&seq[t]), id(&seq[t + 1]));
        if !edges.contains(&e) {
            edges.push(e);
        }
    }
    let mut in_neighbors = vec![Vec::new(); nodes.len()];
    for &(s, d) in &edges {
        // Edges are already in first-occurrence order.
        in_neighbors[d].push(s);
    }
    let mut membership = Vec::new();
    let mut start = 0;
    while start < seq.len() {
        let end = (start + k).min(seq.len());
        let mut m: Vec<usize> = Vec::new();
        for url in &seq[start..end] {
            let i = id(url);
            if !m.contains(&i) {
                m.push(i);
            }
        }
        m.sort();
        membership.push(m);
        start = end;
    }
    let coarse_of = (0..nodes.len())
        .map(|i| {
            (0..membership.len())
                .filter(|&j| membership[j].contains(&i))
                .collect()
        })
        .collect();
    Naive {
        nodes,
        edges,
        in_neighbors,
        membership,
        coarse_of,
    }
}

fn to_log(seq: &[Vec<u32>]) -> DeviceLog {
    DeviceLog {
        device_id: "d".into(),
        events: seq
            .iter()
            .enumerate()
            .map(|(i, t)| Event {
                ts: i as i64,
                tokens: t.clone(),
            })
            .collect(),
    }
}

fn assert_matches(seq: &[Vec<u32>], k: usize) {
    let g = HierGraph::from_log(&to_log(seq), k).unwrap();
    let n = naive(seq, k);
    let nodes: Vec<Vec<u32>> = g.fine_nodes.iter().map(|u| u.0.clone()).collect();
    assert_eq!(nodes, n.nodes, "nodes for {seq:?}, K={k}");
    assert_eq!(g.fine_edges, n.edges, "edges for {seq:?}");
    assert_eq!(g.in_neighbors, n.in_neighbors, "in-neighbours for {seq:?}");
    assert_eq!(g.membership, n.membership, "membership for {seq:?}, K={k}");
    assert_eq!(g.coarse_of, n.coarse_of, "coarse_of for {seq:?}, K={k}");
    assert_eq!(g.coarse_count, seq.len().div_ceil(k));
    assert_eq!(g.seq_len, seq.len());
    assert!(g.membership_edge_count() <= seq.len());
}

pub fn thousand_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut self_loops, mut short_tail) = (0, 0);
    for case in 0..1000 {
        let len = rng.random_range(1..=50);
        let alphabet = rng.random_range(1..=10u32);
        let k = rng.random_range(1..=8);
        let multi = case % 4 == 0;
        let seq: Vec<Vec<u32>> = (0..len)
            .map(|_| {
                let t = rng.random_range(0..alphabet);
                if multi { vec![t % 3, t] } else { vec![t] }
            })
            .collect();
        if seq.windows(2).any(|w| w[0] == w[1]) {
            self_loops += 1;
        }
        if len % k != 0 {
            short_tail += 1;
        }
        assert_matches(&seq, k);
    }
    assert!(self_loops > 100 && short_tail > 100);
}

pub fn self_loop_and_short_tail() {
    let seq: Vec<Vec<u32>> = [0, 0, 1, 1, 1, 2, 0].iter().map(|&t| vec![t]).collect();
    assert_matches(&seq, 3);
    let g = HierGraph::from_log(&to_log(&seq), 3).unwrap();
    assert!(g.fine_edges.contains(&(0, 0)) && g.fine_edges.contains(&(1, 1)));
    assert_eq!(g.membership.last().unwrap(), &vec![0]);
}

pub fn k_one_and_k_beyond_length() {
    let seq: Vec<Vec<u32>> = [3, 1, 3, 2].iter().map(|&t| vec![t]).collect();
    let g = HierGraph::from_log(&to_log(&seq), 1).unwrap();
    assert_eq!(g.coarse_count, 4);
    assert_eq!(g.membership_edge_count(), 4);
    let g = HierGraph::from_log(&to_log(&seq), 100).unwrap();
    assert_eq!(g.coarse_count, 1);
    assert_eq!(g.membership, vec![vec![0, 1, 2]]);
}

pub fn length_two_hundred_with_k_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let toks: Vec<u32> = (0..200).map(|_| rng.random_range(0..500)).collect();
    let g = HierGraph::from_log(&DeviceLog::from_tokens("d", &toks), 6).unwrap();
    assert_eq!(g.coarse_count, 34);
    assert!(g.membership_edge_count() <= 200);
}

pub fn url_key_is_token_sequence() {
    let log = DeviceLog {
        device_id: "x".into(),
        events: vec![
            Event { ts: 0, tokens: vec![1, 2] },
            Event { ts: 1, tokens: vec![2, 1] },
            Event { ts: 1, tokens: vec![1, 2] },
        ],
    };
    let g = HierGraph::from_log(&log, 2).unwrap();
    assert_eq!(g.fine_nodes, vec![UrlKey(vec![1, 2]), UrlKey(vec![2, 1])]);
}

pub fn shortcut_walks_are_seeded_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let toks: Vec<u32> = (0..60).map(|_| rng.random_range(0..15)).collect();
        let g = HierGraph::from_log(&DeviceLog::from_tokens("d", &toks), 6).unwrap();
        let a = build_shortcut_graph(&g.fine_edges, g.fine_count(), 4, 1, 99).unwrap();
        let b = build_shortcut_graph(&g.fine_edges, g.fine_count(), 4, 1, 99).unwrap();
        assert_eq!(a, b);
        // One walk of four steps links a start node to at most four others.
        assert!(a.shortcut_edges.len() <= 4 * g.fine_count());
        assert!(a.shortcut_edges.iter().all(|&(x, y)| x < y && y < g.fine_count()));
    }
}

pub fn rejects_bad_inputs() {
    assert!(HierGraph::from_log(&DeviceLog::from_tokens("d", &[1]), 0).is_err());
    assert!(HierGraph::from_log(&DeviceLog::from_tokens("d", &[]), 3).is_err());
    assert!(build_shortcut_graph(&[], 1, 0, 1, 0).is_err());
}

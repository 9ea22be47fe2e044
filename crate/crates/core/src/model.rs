//! Hierarchical encoder: fine-level GRU message passing followed by
//! coarse/fine heterogeneous attention rounds.
//!
//! All weights act on row vectors (`y = x·W`), so the per-node products of
//! the usual column notation become a single matrix product over the node
//! feature matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result, TensorError};
use crate::graph::{HierGraph, UrlKey};
use crate::gru::{self, GateInputs, GruParams};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Attention logit used by the cross-encoding head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossScore {
    /// `(W·x_v,i)·(W·x_w,j) / √d`.
    ScaledDot,
    /// Coordinate mean of `(W·x_v,i + W·x_w,j) / 2`. Softmax is shift
    /// invariant, so every row of the resulting attention is identical.
    Mean,
}

/// Pair-matching head on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchHead {
    /// Cross-encoding, feature filtering, distance pooling and classifier.
    CrossAttention,
    /// Ablation: elementwise product of mean-pooled embeddings and an MLP.
    ElementwiseProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Sequence positions per coarse node.
    pub k: usize,
    /// Embedding and GRU hidden width.
    pub dim: usize,
    pub fine_rounds: usize,
    pub hetero_rounds: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Width of the pooled pair representation.
    pub pool_dim: usize,
    pub cross_score: CrossScore,
    pub head: MatchHead,
    /// Embedding entries are drawn from U(−s, s). Every message-passing
    /// round averages a node with its update, so the default of 8 leaves
    /// the token embedding at unit scale after the default three rounds.
    pub embedding_scale: f64,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 6,
            dim: 64,
            fine_rounds: 2,
            hetero_rounds: 1,
            dropout: 0.2,
            vocab_size: 1,
            pool_dim: 64,
            cross_score: CrossScore::Mean,
            head: MatchHead::CrossAttention,
            embedding_scale: 8.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.k < 1 {
            return bad(format!("K must be >= 1, got {}", self.k));
        }
        if self.dim < 1 || self.pool_dim < 1 {
            return bad(format!("dim and pool_dim must be >= 1, got {} / {}", self.dim, self.pool_dim));
        }
        if self.fine_rounds < 1 || self.hetero_rounds < 1 {
            return bad(format!(
                "round counts must be >= 1, got fine={} hetero={}",
                self.fine_rounds, self.hetero_rounds
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.embedding_scale > 0.0 && self.embedding_scale.is_finite()) {
            return bad(format!("embedding_scale must be > 0, got {}", self.embedding_scale));
        }
        if self.vocab_size < 1 {
            return bad("vocab_size must be >= 1".to_string());
        }
        Ok(())
    }
}

pub const EMBEDDING: &str = "embedding";

pub fn fine_prefix(round: usize) -> String {
    format!("fine.{round}.gru")
}

pub fn hetero_name(round: usize, w: &str) -> String {
    format!("hetero.{round}.{w}")
}

/// Allocates every parameter for `cfg`, deterministically from `cfg.seed`.
///
/// Weight matrices are drawn from U(−1/√fan_in, 1/√fan_in) and biases start
/// at zero. Embedding entries are drawn from U(−s, s) with
/// `s = cfg.embedding_scale`.
pub fn init_params(cfg: &ModelConfig) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.dim;
    let p = cfg.pool_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = ParamStore::new(cfg.seed);
    let emb: Vec<f64> = (0..cfg.vocab_size * d)
        .map(|_| rng.random_range(-cfg.embedding_scale..=cfg.embedding_scale))
        .collect();
    s.insert(EMBEDDING, Tensor::matrix(cfg.vocab_size, d, emb)?)?;
    for l in 0..cfg.fine_rounds {
        gru::init_params(&mut s, &mut rng, &fine_prefix(l), d)?;
    }
    for l in 0..cfg.hetero_rounds {
        for w in ["w1", "w2", "w3"] {
            s.insert_uniform(&mut rng, &hetero_name(l, w), d, d)?;
        }
    }
    match cfg.head {
        MatchHead::CrossAttention => {
            s.insert_uniform(&mut rng, "cross.w3", d, d)?;
            s.insert_uniform(&mut rng, "cross.w5", d, d)?;
            s.insert_uniform(&mut rng, "cross.w4", d, 1)?;
            s.insert_uniform(&mut rng, "pool.w1", d, p)?;
            s.insert_zeros("pool.b1", 1, p)?;
            s.insert_uniform(&mut rng, "pool.w2", p, p)?;
            s.insert_zeros("pool.b2", 1, p)?;
            s.insert_uniform(&mut rng, "cls.w1", 2 * p, p)?;
            s.insert_zeros("cls.b1", 1, p)?;
            s.insert_uniform(&mut rng, "cls.w2", p, 1)?;
            s.insert_zeros("cls.b2", 1, 1)?;
        }
        MatchHead::ElementwiseProduct => {
            s.insert_uniform(&mut rng, "prod.w1", d, p)?;
            s.insert_zeros("prod.b1", 1, p)?;
            s.insert_uniform(&mut rng, "prod.w2", p, 1)?;
            s.insert_zeros("prod.b2", 1, 1)?;
        }
    }
    Ok(s)
}

fn row_mismatch(op: &'static str, g: &HierGraph, x: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: vec![g.fine_count()],
        right: x.shape().to_vec(),
    }
}

/// Initial node features: the mean of each URL's token embeddings.
pub fn embed_nodes(tape: &mut Tape, g: &HierGraph, table: Var) -> Result<Var> {
    let vocab = tape.value(table).rows();
    let mut flat = Vec::new();
    for key in &g.fine_nodes {
        for &t in &key.0 {
            if t as usize >= vocab {
                return Err(Error::config(format!(
                    "token id {t} is outside the embedding vocabulary of {vocab}"
                )));
            }
            flat.push(t as usize);
        }
    }
    let rows = tape.gather_rows(table, &flat)?;
    if flat.len() == g.fine_count() {
        return Ok(rows);
    }
    let m = g.fine_count();
    let mut avg = Tensor::zeros(&[m, flat.len()]);
    let mut col = 0;
    for (i, key) in g.fine_nodes.iter().enumerate() {
        let w = 1.0 / key.0.len() as f64;
        for _ in &key.0 {
            avg.data_mut()[i * flat.len() + col] = w;
            col += 1;
        }
    }
    let avg = tape.constant(avg);
    Ok(tape.matmul(avg, rows)?)
}

/// One round of fine-level message passing.
///
/// Each node runs the GRU from a zero state over its in-neighbours (in
/// order) followed by itself, and its feature becomes the mean of the old
/// feature and the final hidden state. All nodes are advanced together:
/// sequences are right-aligned, so the set of running sequences at any step
/// is a prefix of the nodes sorted by descending sequence length.
pub fn fine_message_round(tape: &mut Tape, g: &HierGraph, x: Var, p: &GruParams) -> Result<Var> {
    if tape.value(x).rows() != g.fine_count() {
        return Err(row_mismatch("fine_message_round", g, tape.value(x)).into());
    }
    neighbor_gru_round(tape, &g.in_neighbors, x, p)
}

/// [`fine_message_round`] over arbitrary per-node neighbour lists.
pub fn neighbor_gru_round(tape: &mut Tape, neighbors: &[Vec<usize>], x: Var, p: &GruParams) -> Result<Var> {
    let m = neighbors.len();
    let (rows, d) = tape.value(x).dims2("neighbor_gru_round")?;
    if rows != m || m == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "neighbor_gru_round",
            left: vec![m],
            right: tape.value(x).shape().to_vec(),
        }
        .into());
    }
    let seqs: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            let mut s = neighbors[i].clone();
            s.push(i);
            s
        })
        .collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| seqs[b].len().cmp(&seqs[a].len()).then(a.cmp(&b)));
    let t_max = seqs[order[0]].len();

    let inputs = gru::project_inputs(tape, x, p)?;
    let mut h: Option<Var> = None;
    let mut active = 0;
    for t in 0..t_max {
        let remaining = t_max - t;
        let mut now = active;
        while now < m && seqs[order[now]].len() >= remaining {
            now += 1;
        }
        if now > active {
            let zeros = tape.constant(Tensor::zeros(&[now - active, d]));
            h = Some(match h {
                None => zeros,
                Some(prev) => tape.concat_rows(&[prev, zeros])?,
            });
            active = now;
        }
        let idx: Vec<usize> = order[..active]
            .iter()
            .map(|&i| seqs[i][t + seqs[i].len() - t_max])
            .collect();
        let step = GateInputs {
            z: tape.gather_rows(inputs.z, &idx)?,
            r: tape.gather_rows(inputs.r, &idx)?,
            h: tape.gather_rows(inputs.h, &idx)?,
        };
        h = Some(gru::gru_cell(tape, h.expect("initialised at t = 0"), &step, p)?);
    }
    let mut back = vec![0; m];
    for (rank, &i) in order.iter().enumerate() {
        back[i] = rank;
    }
    let messages = tape.gather_rows(h.expect("t_max >= 1"), &back)?;
    let sum = tape.add(x, messages)?;
    Ok(tape.scale(sum, 0.5))
}

/// Coarse features: the mean of `W_1`-projected member features.
pub fn coarse_update(tape: &mut Tape, g: &HierGraph, x: Var, w1: Var) -> Result<Var> {
    let m = g.fine_count();
    if tape.value(x).rows() != m {
        return Err(row_mismatch("coarse_update", g, tape.value(x)).into());
    }
    let mut avg = Tensor::zeros(&[g.coarse_count, m]);
    for (j, members) in g.membership.iter().enumerate() {
        if members.is_empty() {
            return Err(TensorError::Empty { op: "coarse_update" }.into());
        }
        let w = 1.0 / members.len() as f64;
        for &i in members {
            avg.data_mut()[j * m + i] = w;
        }
    }
    let projected = tape.matmul(x, w1)?;
    let avg = tape.constant(avg);
    Ok(tape.matmul(avg, projected)?)
}

/// Output of [`fine_hetero_update`].
#[derive(Debug, Clone, Copy)]
pub struct HeteroOutput {
    pub x: Var,
    /// `m × c` attention weights, zero outside each node's coarse set.
    pub alpha: Var,
}

/// Fine features attend over their coarse nodes:
/// `e_ij = (x_i·W_2)·(x̃_j·W_3) / √d`, softmax over the coarse nodes of
/// `i`, then `x_i ← (x_i + Σ_j α_ij x̃_j) / 2`.
pub fn fine_hetero_update(
    tape: &mut Tape,
    g: &HierGraph,
    x: Var,
    coarse: Var,
    w2: Var,
    w3: Var,
) -> Result<HeteroOutput> {
    let m = g.fine_count();
    let c = g.coarse_count;
    let (rows, d) = tape.value(x).dims2("fine_hetero_update")?;
    if rows != m {
        return Err(row_mismatch("fine_hetero_update", g, tape.value(x)).into());
    }
    let mut mask = vec![false; m * c];
    for (i, cs) in g.coarse_of.iter().enumerate() {
        if cs.is_empty() {
            return Err(TensorError::DegenerateRow { row: i }.into());
        }
        for &j in cs {
            mask[i * c + j] = true;
        }
    }
    let q = tape.matmul(x, w2)?;
    let k = tape.matmul(coarse, w3)?;
    let kt = tape.transpose(k)?;
    let e = tape.matmul(q, kt)?;
    let e = tape.scale(e, 1.0 / (d as f64).sqrt());
    let alpha = tape.softmax_rows(e, Some(&mask))?;
    let agg = tape.matmul(alpha, coarse)?;
    let sum = tape.add(x, agg)?;
    Ok(HeteroOutput {
        x: tape.scale(sum, 0.5),
        alpha,
    })
}

/// Fine-node embeddings of one device.
#[derive(Debug, Clone)]
pub struct EncodedDevice {
    /// `m × d` node features on the tape.
    pub x: Var,
    pub node_keys: Vec<UrlKey>,
    pub m: usize,
}

pub fn encode_device(
    tape: &mut Tape,
    g: &HierGraph,
    store: &ParamStore,
    cfg: &ModelConfig,
) -> Result<EncodedDevice> {
    let table = tape.param(store, EMBEDDING)?;
    let mut x = embed_nodes(tape, g, table)?;
    for l in 0..cfg.fine_rounds {
        let p = GruParams::bind(tape, store, &fine_prefix(l))?;
        x = fine_message_round(tape, g, x, &p)?;
    }
    for l in 0..cfg.hetero_rounds {
        let w1 = tape.param(store, &hetero_name(l, "w1"))?;
        let w2 = tape.param(store, &hetero_name(l, "w2"))?;
        let w3 = tape.param(store, &hetero_name(l, "w3"))?;
        let coarse = coarse_update(tape, g, x, w1)?;
        x = fine_hetero_update(tape, g, x, coarse, w2, w3)?.x;
    }
    Ok(EncodedDevice {
        x,
        node_keys: g.fine_nodes.clone(),
        m: g.fine_count(),
    })
}

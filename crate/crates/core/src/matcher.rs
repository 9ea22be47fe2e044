//! Pair scoring: cross-encoding between two encoded devices, feature
//! filtering, distance pooling and the final classifier.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, TensorError};
use crate::graph::HierGraph;
use crate::model::{encode_device, CrossScore, MatchHead, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Cross-encoding and filtering weights bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct CrossParams {
    /// `d × d` projection inside the attention logit.
    pub w3: Var,
    /// `d × 1` filter output weights.
    pub w4: Var,
    /// `d × d` filter hidden weights.
    pub w5: Var,
}

impl CrossParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Result<Self> {
        Ok(CrossParams {
            w3: tape.param(store, "cross.w3")?,
            w4: tape.param(store, "cross.w4")?,
            w5: tape.param(store, "cross.w5")?,
        })
    }
}

/// Two-layer MLP with bias, `relu(x·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp {
    pub fn bind(tape: &mut Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Mlp {
            w1: tape.param(store, &format!("{prefix}.w1"))?,
            b1: tape.param(store, &format!("{prefix}.b1"))?,
            w2: tape.param(store, &format!("{prefix}.w2"))?,
            b2: tape.param(store, &format!("{prefix}.b2"))?,
        })
    }

    pub fn hidden(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        Ok(tape.relu(h))
    }

    pub fn output(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let o = tape.matmul(h, self.w2)?;
        Ok(tape.add_row(o, self.b2)?)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.hidden(tape, x)?;
        self.output(tape, h)
    }
}

/// Attention matrices in both directions plus the filtering gates.
#[derive(Debug, Clone, Copy)]
pub struct CrossEncoding {
    /// `m_v × m_w`; row `i` weights the nodes of `w` for node `i` of `v`.
    pub a_vw: Var,
    /// `m_w × m_v`.
    pub a_wv: Var,
    /// `m_v × 1` per-node gate in (0, 1).
    pub beta_v: Var,
    /// `m_w × 1`.
    pub beta_w: Var,
}

/// Raw attention logits `E[i, j] = ζ(x_v,i·W, x_w,j·W)`, `m_v × m_w`.
pub fn cross_logits(tape: &mut Tape, xv: Var, xw: Var, w3: Var, score: CrossScore) -> Result<Var> {
    let qv = tape.matmul(xv, w3)?;
    let qw = tape.matmul(xw, w3)?;
    let (mv, d) = tape.value(qv).dims2("cross_logits")?;
    let mw = tape.value(qw).rows();
    match score {
        CrossScore::ScaledDot => {
            let qwt = tape.transpose(qw)?;
            let e = tape.matmul(qv, qwt)?;
            Ok(tape.scale(e, 1.0 / (d as f64).sqrt()))
        }
        CrossScore::Mean => {
            let avg = tape.constant(Tensor::full(&[d, 1], 1.0 / d as f64));
            let a = tape.matmul(qv, avg)?;
            let b = tape.matmul(qw, avg)?;
            let bt = tape.transpose(b)?;
            let ones_w = tape.constant(Tensor::full(&[1, mw], 1.0));
            let ones_v = tape.constant(Tensor::full(&[mv, 1], 1.0));
            let left = tape.matmul(a, ones_w)?;
            let right = tape.matmul(ones_v, bt)?;
            let e = tape.add(left, right)?;
            Ok(tape.scale(e, 0.5))
        }
    }
}

/// Per-node filtering gate `σ(tanh(X·W5)·W4)`, `m × 1`.
pub fn filter_gate(tape: &mut Tape, x: Var, p: &CrossParams) -> Result<Var> {
    let h = tape.matmul(x, p.w5)?;
    let h = tape.tanh(h);
    let o = tape.matmul(h, p.w4)?;
    Ok(tape.sigmoid(o))
}

pub fn cross_encode(tape: &mut Tape, xv: Var, xw: Var, p: &CrossParams, score: CrossScore) -> Result<CrossEncoding> {
    let e = cross_logits(tape, xv, xw, p.w3, score)?;
    // Both logits are symmetric in their arguments, so the reverse
    // direction is the transpose.
    let et = tape.transpose(e)?;
    Ok(CrossEncoding {
        a_vw: tape.softmax_rows(e, None)?,
        a_wv: tape.softmax_rows(et, None)?,
        beta_v: filter_gate(tape, xv, p)?,
        beta_w: filter_gate(tape, xw, p)?,
    })
}

/// Squared, gated difference between each node and its cross-attended
/// summary of the other device: `(diag(β)·(A·X_other − X_self))^⊙2`.
pub fn cross_distance(tape: &mut Tape, x_self: Var, x_other: Var, a: Var, beta: Var) -> Result<Var> {
    let attended = tape.matmul(a, x_other)?;
    let diff = tape.sub(attended, x_self)?;
    let gated = tape.scale_rows(diff, beta)?;
    Ok(tape.mul(gated, gated)?)
}

/// Inverted dropout: kept entries are scaled by `1 / (1 − rate)`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).numel();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(shape, mask).expect("mask matches shape"));
    tape.mul(x, mask).expect("mask matches shape")
}

/// Node-wise MLP, max-pool over nodes, optional dropout, then ReLU.
pub fn pool_distance(tape: &mut Tape, l: Var, pool: &Mlp, drop: Option<(f64, &mut ChaCha8Rng)>) -> Result<Var> {
    let h = pool.forward(tape, l)?;
    let r = tape.max_rows(h)?;
    let r = match drop {
        Some((rate, rng)) => dropout(tape, r, rate, rng),
        None => r,
    };
    Ok(tape.relu(r))
}

/// Match probability from both pooled directions, `1 × 1`.
pub fn classify(tape: &mut Tape, r_vw: Var, r_wv: Var, cls: &Mlp) -> Result<Var> {
    let z = tape.concat_cols(&[r_vw, r_wv])?;
    let o = cls.forward(tape, z)?;
    Ok(tape.sigmoid(o))
}

/// Everything produced by one pair forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PairOutput {
    /// `1 × 1` match probability.
    pub y_hat: Var,
    pub xv: Var,
    pub xw: Var,
    /// Present for the cross-attention head only.
    pub cross: Option<CrossEncoding>,
    /// Pooled `(r_vw, r_wv)`, cross-attention head only.
    pub pooled: Option<(Var, Var)>,
}

/// Scores a device pair on `tape`. Passing an RNG enables dropout.
pub fn forward_pair(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &ModelConfig,
    gv: &HierGraph,
    gw: &HierGraph,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<PairOutput> {
    let xv = encode_device(tape, gv, store, cfg)?.x;
    let xw = encode_device(tape, gw, store, cfg)?.x;
    match cfg.head {
        MatchHead::CrossAttention => {
            let cp = CrossParams::bind(tape, store)?;
            let enc = cross_encode(tape, xv, xw, &cp, cfg.cross_score)?;
            let l_vw = cross_distance(tape, xv, xw, enc.a_vw, enc.beta_v)?;
            let l_wv = cross_distance(tape, xw, xv, enc.a_wv, enc.beta_w)?;
            let pool = Mlp::bind(tape, store, "pool")?;
            let r_vw = pool_distance(tape, l_vw, &pool, rng.as_deref_mut().map(|r| (cfg.dropout, r)))?;
            let r_wv = pool_distance(tape, l_wv, &pool, rng.as_deref_mut().map(|r| (cfg.dropout, r)))?;
            let cls = Mlp::bind(tape, store, "cls")?;
            Ok(PairOutput {
                y_hat: classify(tape, r_vw, r_wv, &cls)?,
                xv,
                xw,
                cross: Some(enc),
                pooled: Some((r_vw, r_wv)),
            })
        }
        MatchHead::ElementwiseProduct => {
            let gv_mean = tape.mean_rows(xv)?;
            let gw_mean = tape.mean_rows(xw)?;
            let prod = tape.mul(gv_mean, gw_mean)?;
            let mlp = Mlp::bind(tape, store, "prod")?;
            let h = mlp.hidden(tape, prod)?;
            let h = match rng {
                Some(r) => dropout(tape, h, cfg.dropout, r),
                None => h,
            };
            let o = mlp.output(tape, h)?;
            Ok(PairOutput {
                y_hat: tape.sigmoid(o),
                xv,
                xw,
                cross: None,
                pooled: None,
            })
        }
    }
}

/// Inference-mode match probability for one ordered pair.
pub fn score_pair(store: &ParamStore, cfg: &ModelConfig, gv: &HierGraph, gw: &HierGraph) -> Result<f64> {
    let mut tape = Tape::new();
    let out = forward_pair(&mut tape, store, cfg, gv, gw, None)?;
    Ok(tape.value(out.y_hat).item())
}

/// How a pair score is formed from the ordered model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `ŷ(v, w)` as given.
    #[default]
    Ordered,
    /// `(ŷ(v, w) + ŷ(w, v)) / 2`.
    Symmetric,
}

pub fn score_pair_with(
    store: &ParamStore,
    cfg: &ModelConfig,
    gv: &HierGraph,
    gw: &HierGraph,
    mode: ScoreMode,
) -> Result<f64> {
    let forward = score_pair(store, cfg, gv, gw)?;
    Ok(match mode {
        ScoreMode::Ordered => forward,
        ScoreMode::Symmetric => 0.5 * (forward + score_pair(store, cfg, gw, gv)?),
    })
}

/// Rejects probabilities outside [0, 1] or non-finite values.
pub fn check_probability(p: f64) -> Result<f64, TensorError> {
    if p.is_finite() && (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(TensorError::Internal(format!("score {p} is not a probability")))
    }
}

//! Backprop vs. central finite differences for every differentiable op and
//! for composed model pieces.

use hgnn_core::gradcheck::{check, DEFAULT_EPS};
use hgnn_core::gru::{self, GruParams};
use hgnn_core::matcher::{forward_pair, Mlp};
use hgnn_core::model::{coarse_update, fine_hetero_update, fine_message_round, init_params};
use hgnn_core::{
    CrossScore, DeviceLog, ElementwiseKind, Event, HierGraph, MatchHead, ModelConfig, ParamStore, Result, Tape,
    Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU kinks are not straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    let data = (0..r * c)
        .map(|_| {
            let v: f64 = rng.random_range(0.2..1.5);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor::matrix(r, c, data).unwrap()
}

/// Reduces any output to a scalar through fixed random weights so every
/// output entry contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(y).dims2("weighted_sum")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_tensor(&mut rng, r, c));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn assert_op<F>(name: &str, store: &ParamStore, f: F)
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let report = check(store, DEFAULT_EPS, |t, s| {
        let y = f(t, s)?;
        weighted_sum(t, y, 17)
    })
    .unwrap();
    let worst = report.worst().cloned().unwrap_or_default();
    assert!(
        report.max_error() < OP_TOL,
        "{name}: worst parameter {} has relative error {}",
        worst.0,
        worst.1
    );
}

fn store(entries: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new(0);
    for (n, t) in entries {
        s.insert(n, t).unwrap();
    }
    s
}

pub fn binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = store(vec![
        ("a", rand_tensor(&mut rng, 3, 4)),
        ("b", rand_tensor(&mut rng, 4, 2)),
        ("c", rand_tensor(&mut rng, 3, 4)),
        ("row", rand_tensor(&mut rng, 1, 4)),
        ("col", rand_tensor(&mut rng, 3, 1)),
    ]);
    assert_op("matmul", &s, |t, s| {
        let (a, b) = (t.param(s, "a")?, t.param(s, "b")?);
        Ok(t.matmul(a, b)?)
    });
    assert_op("transpose", &s, |t, s| {
        let a = t.param(s, "a")?;
        Ok(t.transpose(a)?)
    });
    assert_op("add", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
        Ok(t.add(a, c)?)
    });
    assert_op("sub", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
        Ok(t.sub(a, c)?)
    });
    assert_op("hadamard", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
        Ok(t.mul(a, c)?)
    });
    assert_op("hadamard_self", &s, |t, s| {
        let a = t.param(s, "a")?;
        Ok(t.mul(a, a)?)
    });
    assert_op("add_row", &s, |t, s| {
        let (a, r) = (t.param(s, "a")?, t.param(s, "row")?);
        Ok(t.add_row(a, r)?)
    });
    assert_op("scale_rows", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "col")?);
        Ok(t.scale_rows(a, c)?)
    });
    assert_op("concat_rows", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "c")?);
        Ok(t.concat_rows(&[a, c, a])?)
    });
    assert_op("concat_cols", &s, |t, s| {
        let (a, c) = (t.param(s, "a")?, t.param(s, "col")?);
        Ok(t.concat_cols(&[a, c])?)
    });
}

pub fn unary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = store(vec![("x", away_from_zero(&mut rng, 4, 3))]);
    assert_op("sigmoid", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.sigmoid(x))
    });
    assert_op("tanh", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.tanh(x))
    });
    assert_op("relu", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.relu(x))
    });
    assert_op("affine", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.affine(x, -0.7, 0.3))
    });
    assert_op("mean_rows", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.mean_rows(x)?)
    });
    assert_op("max_rows", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.max_rows(x)?)
    });
    assert_op("gather_rows", &s, |t, s| {
        let x = t.param(s, "x")?;
        Ok(t.gather_rows(x, &[2, 0, 2, 3, 2])?)
    });
    assert_op("sum", &s, |t, s| {
        let x = t.param(s, "x")?;
        let y = t.sum(x);
        Ok(t.mul(y, y)?)
    });
    for kind in [
        ElementwiseKind::Sigmoid,
        ElementwiseKind::Tanh,
        ElementwiseKind::Relu,
        ElementwiseKind::MeanPoolRows,
        ElementwiseKind::MaxPoolRows,
    ] {
        assert_op(&format!("{kind:?}"), &s, |t, s| {
            let x = t.param(s, "x")?;
            Ok(t.elementwise(kind, &[x])?)
        });
    }
}

pub fn softmax_plain_and_masked() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = store(vec![("e", rand_tensor(&mut rng, 3, 4))]);
    assert_op("softmax", &s, |t, s| {
        let e = t.param(s, "e")?;
        Ok(t.softmax_rows(e, None)?)
    });
    let mask = [
        true, false, true, true, //
        false, true, false, false, //
        true, true, true, false,
    ];
    assert_op("softmax_masked", &s, |t, s| {
        let e = t.param(s, "e")?;
        Ok(t.softmax_rows(e, Some(&mask))?)
    });
}

pub fn bce_both_labels() {
    let s = store(vec![("z", Tensor::scalar(0.4))]);
    for label in [0.0, 1.0] {
        let report = check(&s, DEFAULT_EPS, |t, s| {
            let z = t.param(s, "z")?;
            let p = t.sigmoid(z);
            Ok(t.bce(p, label)?)
        })
        .unwrap();
        assert!(report.max_error() < OP_TOL, "label {label}: {:?}", report.per_param);
    }
}

pub fn gru_step_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new(4);
    gru::init_params(&mut s, &mut rng, "g", 3).unwrap();
    for b in ["b_z", "b_r", "b_h"] {
        s.set(&format!("g.{b}"), rand_tensor(&mut rng, 1, 3)).unwrap();
    }
    s.insert("h", rand_tensor(&mut rng, 2, 3)).unwrap();
    s.insert("x", rand_tensor(&mut rng, 2, 3)).unwrap();
    assert_op("gru_step", &s, |t, s| {
        let p = GruParams::bind(t, s, "g")?;
        let (h, x) = (t.param(s, "h")?, t.param(s, "x")?);
        let h1 = gru::gru_step(t, h, x, &p)?;
        Ok(gru::gru_step(t, h1, x, &p)?)
    });
}

pub fn two_layer_perceptron_with_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = store(vec![
        ("mlp.w1", rand_tensor(&mut rng, 4, 5)),
        ("mlp.b1", rand_tensor(&mut rng, 1, 5)),
        ("mlp.w2", rand_tensor(&mut rng, 5, 1)),
        ("mlp.b2", rand_tensor(&mut rng, 1, 1)),
    ]);
    let x = away_from_zero(&mut rng, 1, 4);
    let report = check(&s, DEFAULT_EPS, |t, s| {
        let m = Mlp::bind(t, s, "mlp")?;
        let xv = t.constant(x.clone());
        let o = m.forward(t, xv)?;
        let p = t.sigmoid(o);
        Ok(t.bce(p, 1.0)?)
    })
    .unwrap();
    assert!(report.max_error() < OP_TOL, "{:?}", report.per_param);
}

fn graph(tokens: &[u32], k: usize) -> HierGraph {
    HierGraph::from_log(&DeviceLog::from_tokens("d", tokens), k).unwrap()
}

pub fn encoder_pieces() {
    let g = graph(&[0, 1, 0, 2, 3, 2, 2, 4], 3);
    let m = g.fine_count();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut s = ParamStore::new(6);
    gru::init_params(&mut s, &mut rng, "g", 3).unwrap();
    for w in ["w1", "w2", "w3"] {
        s.insert(w, rand_tensor(&mut rng, 3, 3)).unwrap();
    }
    s.insert("x", rand_tensor(&mut rng, m, 3)).unwrap();
    assert_op("fine_message_round", &s, |t, s| {
        let p = GruParams::bind(t, s, "g")?;
        let x = t.param(s, "x")?;
        fine_message_round(t, &g, x, &p)
    });
    assert_op("coarse_update", &s, |t, s| {
        let (x, w1) = (t.param(s, "x")?, t.param(s, "w1")?);
        coarse_update(t, &g, x, w1)
    });
    assert_op("fine_hetero_update", &s, |t, s| {
        let x = t.param(s, "x")?;
        let (w1, w2, w3) = (t.param(s, "w1")?, t.param(s, "w2")?, t.param(s, "w3")?);
        let c = coarse_update(t, &g, x, w1)?;
        Ok(fine_hetero_update(t, &g, x, c, w2, w3)?.x)
    });
}

fn toy_pair() -> (HierGraph, HierGraph) {
    let mut v = DeviceLog::from_tokens("v", &[1, 2, 3, 1, 4, 5, 2, 6, 7, 1]);
    // One multi-token URL exercises the embedding mean.
    v.events[4] = Event { ts: 4, tokens: vec![4, 8] };
    let w = DeviceLog::from_tokens("w", &[3, 9, 1, 2, 2, 5, 0]);
    (HierGraph::from_log(&v, 3).unwrap(), HierGraph::from_log(&w, 3).unwrap())
}

fn full_model(head: MatchHead, score: CrossScore) {
    let cfg = ModelConfig {
        k: 3,
        dim: 4,
        pool_dim: 3,
        vocab_size: 10,
        head,
        cross_score: score,
        seed: 11,
        ..ModelConfig::default()
    };
    let mut s = init_params(&cfg).unwrap();
    // Non-zero biases so that every path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let names: Vec<String> = s.names().filter(|n| n.contains(".b")).map(str::to_string).collect();
    for n in names {
        let shape = s.get(&n).unwrap().shape().to_vec();
        s.set(&n, rand_tensor(&mut rng, shape[0], shape[1]).clone()).unwrap();
    }
    let (gv, gw) = toy_pair();
    for label in [1.0, 0.0] {
        let report = check(&s, DEFAULT_EPS, |t, s| {
            let out = forward_pair(t, s, &cfg, &gv, &gw, None)?;
            Ok(t.bce(out.y_hat, label)?)
        })
        .unwrap();
        let worst = report.worst().cloned().unwrap();
        assert!(
            report.max_error() < MODEL_TOL,
            "{head:?}/{score:?} label {label}: worst {} = {}",
            worst.0,
            worst.1
        );
    }
}

pub fn full_model_cross_attention_scaled_dot() {
    full_model(MatchHead::CrossAttention, CrossScore::ScaledDot);
}

pub fn full_model_cross_attention_mean() {
    full_model(MatchHead::CrossAttention, CrossScore::Mean);
}

pub fn full_model_elementwise_product() {
    full_model(MatchHead::ElementwiseProduct, CrossScore::ScaledDot);
}

//! Normalisation and sign invariants over randomised shapes.

use hgnn_core::matcher::{cross_distance, cross_encode, CrossParams};
use hgnn_core::model::{coarse_update, fine_hetero_update};
use hgnn_core::{CrossScore, DeviceLog, HierGraph, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPES: usize = 100;
const ROW_TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn assert_row_stochastic(t: &Tensor, what: &str) {
    for r in 0..t.rows() {
        let row = t.row_slice(r);
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < ROW_TOL, "{what}: row {r} sums to {sum}");
        assert!(row.iter().all(|x| *x >= 0.0), "{what}: negative weight in row {r}");
    }
}

/// Cross-attention matrices in both directions, both compatibility
/// functions, and the coarse attention of the hetero update.
pub fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..SHAPES {
        let d = rng.random_range(1..=12);
        let (mv, mw) = (rng.random_range(1..=40), rng.random_range(1..=40));
        // Large scales stress the max-shift in the softmax.
        let scale = [0.1, 1.0, 10.0, 100.0][case % 4];
        let mut tape = Tape::new();
        let xv = tape.constant(rand_tensor(&mut rng, mv, d, scale));
        let xw = tape.constant(rand_tensor(&mut rng, mw, d, scale));
        let p = CrossParams {
            w3: tape.constant(rand_tensor(&mut rng, d, d, 1.0)),
            w4: tape.constant(rand_tensor(&mut rng, d, 1, 1.0)),
            w5: tape.constant(rand_tensor(&mut rng, d, d, 1.0)),
        };
        for score in [CrossScore::Mean, CrossScore::ScaledDot] {
            let enc = cross_encode(&mut tape, xv, xw, &p, score).unwrap();
            assert_row_stochastic(tape.value(enc.a_vw), "A_vw");
            assert_row_stochastic(tape.value(enc.a_wv), "A_wv");
        }

        let len = rng.random_range(1..=60);
        let toks: Vec<u32> = (0..len).map(|_| rng.random_range(0..12)).collect();
        let g = HierGraph::from_log(&DeviceLog::from_tokens("d", &toks), rng.random_range(1..=8)).unwrap();
        let x = tape.constant(rand_tensor(&mut rng, g.fine_count(), d, scale));
        let w: Vec<_> = (0..3).map(|_| tape.constant(rand_tensor(&mut rng, d, d, 1.0))).collect();
        let coarse = coarse_update(&mut tape, &g, x, w[0]).unwrap();
        let h = fine_hetero_update(&mut tape, &g, x, coarse, w[1], w[2]).unwrap();
        let alpha = tape.value(h.alpha);
        assert_row_stochastic(alpha, "hetero alpha");
        for (i, cs) in g.coarse_of.iter().enumerate() {
            for j in 0..g.coarse_count {
                if !cs.contains(&j) {
                    assert_eq!(alpha.row_slice(i)[j], 0.0, "weight outside the coarse set");
                }
            }
        }
    }
}

pub fn distances_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for case in 0..SHAPES {
        let d = rng.random_range(1..=12);
        let (mv, mw) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let mut tape = Tape::new();
        let xv = tape.constant(rand_tensor(&mut rng, mv, d, 3.0));
        let xw = tape.constant(rand_tensor(&mut rng, mw, d, 3.0));
        let p = CrossParams {
            w3: tape.constant(rand_tensor(&mut rng, d, d, 1.0)),
            w4: tape.constant(rand_tensor(&mut rng, d, 1, 1.0)),
            w5: tape.constant(rand_tensor(&mut rng, d, d, 1.0)),
        };
        let score = if case % 2 == 0 { CrossScore::Mean } else { CrossScore::ScaledDot };
        let enc = cross_encode(&mut tape, xv, xw, &p, score).unwrap();
        let l_vw = cross_distance(&mut tape, xv, xw, enc.a_vw, enc.beta_v).unwrap();
        let l_wv = cross_distance(&mut tape, xw, xv, enc.a_wv, enc.beta_w).unwrap();
        for l in [l_vw, l_wv] {
            assert!(tape.value(l).data().iter().all(|x| *x >= 0.0), "negative distance entry");
        }
    }
}

/// `X_v == X_w` under identity cross-attention gives exactly zero, for any
/// gate.
pub fn identity_attention_gives_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for _ in 0..SHAPES {
        let (m, d) = (rng.random_range(1..=40), rng.random_range(1..=12));
        let x = rand_tensor(&mut rng, m, d, 5.0);
        let mut tape = Tape::new();
        let (xv, xw) = (tape.constant(x.clone()), tape.constant(x));
        let a = tape.constant(Tensor::identity(m));
        let beta = tape.constant(rand_tensor(&mut rng, m, 1, 1.0));
        let l = cross_distance(&mut tape, xv, xw, a, beta).unwrap();
        assert!(tape.value(l).data().iter().all(|v| *v == 0.0), "identity case is not exactly zero");
    }
}

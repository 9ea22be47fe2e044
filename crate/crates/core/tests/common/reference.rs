//! Batched tape implementations vs. straight-line loop references.

use hgnn_core::gru::{self, GruParams};
use hgnn_core::matcher::{cross_distance, cross_encode, CrossParams};
use hgnn_core::model::{coarse_update, fine_hetero_update, fine_message_round};
use hgnn_core::{CrossScore, DeviceLog, HierGraph, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;
const CASES: usize = 120;

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

/// Row vector times matrix.
fn vecmat(x: &[f64], w: &Mat) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for (k, xk) in x.iter().enumerate() {
        for c in 0..cols {
            out[c] += xk * w[k][c];
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

fn random_graph(rng: &mut ChaCha8Rng) -> HierGraph {
    let len = rng.random_range(1..=20);
    let alphabet = rng.random_range(1..=8u32);
    let k = rng.random_range(1..=5);
    let toks: Vec<u32> = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
    HierGraph::from_log(&DeviceLog::from_tokens("g", &toks), k).unwrap()
}

struct RefGru {
    w: [Mat; 3],
    u: [Mat; 3],
    b: [Vec<f64>; 3],
}

impl RefGru {
    fn from_store(s: &ParamStore, prefix: &str) -> Self {
        let m = |n: &str| to_mat(s.get(&format!("{prefix}.{n}")).unwrap());
        let v = |n: &str| s.get(&format!("{prefix}.{n}")).unwrap().data().to_vec();
        RefGru {
            w: [m("w_z"), m("w_r"), m("w_h")],
            u: [m("u_z"), m("u_r"), m("u_h")],
            b: [v("b_z"), v("b_r"), v("b_h")],
        }
    }

    fn step(&self, h: &[f64], x: &[f64]) -> Vec<f64> {
        let d = h.len();
        let (xz, xr, xh) = (vecmat(x, &self.w[0]), vecmat(x, &self.w[1]), vecmat(x, &self.w[2]));
        let (hz, hr) = (vecmat(h, &self.u[0]), vecmat(h, &self.u[1]));
        let z: Vec<f64> = (0..d).map(|i| sigmoid(xz[i] + self.b[0][i] + hz[i])).collect();
        let r: Vec<f64> = (0..d).map(|i| sigmoid(xr[i] + self.b[1][i] + hr[i])).collect();
        let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        let rhu = vecmat(&rh, &self.u[2]);
        (0..d)
            .map(|i| {
                let cand = (xh[i] + self.b[2][i] + rhu[i]).tanh();
                (1.0 - z[i]) * h[i] + z[i] * cand
            })
            .collect()
    }
}

fn ref_fine_round(g: &HierGraph, x: &Mat, gru: &RefGru) -> Mat {
    let d = x[0].len();
    (0..g.fine_count())
        .map(|i| {
            let mut h = vec![0.0; d];
            for &j in g.in_neighbors[i].iter().chain(std::iter::once(&i)) {
                h = gru.step(&h, &x[j]);
            }
            (0..d).map(|k| 0.5 * (x[i][k] + h[k])).collect()
        })
        .collect()
}

fn ref_coarse(g: &HierGraph, x: &Mat, w1: &Mat) -> Mat {
    let d = w1[0].len();
    g.membership
        .iter()
        .map(|members| {
            let mut acc = vec![0.0; d];
            for &i in members {
                let p = vecmat(&x[i], w1);
                for k in 0..d {
                    acc[k] += p[k];
                }
            }
            acc.iter().map(|v| v / members.len() as f64).collect()
        })
        .collect()
}

fn ref_hetero(g: &HierGraph, x: &Mat, xc: &Mat, w2: &Mat, w3: &Mat) -> Mat {
    let d = x[0].len();
    (0..g.fine_count())
        .map(|i| {
            let q = vecmat(&x[i], w2);
            let cs = &g.coarse_of[i];
            let e: Vec<f64> = cs
                .iter()
                .map(|&j| {
                    let kj = vecmat(&xc[j], w3);
                    q.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            let mut agg = vec![0.0; d];
            for (a, &j) in ex.iter().zip(cs) {
                for k in 0..d {
                    agg[k] += a / z * xc[j][k];
                }
            }
            (0..d).map(|k| 0.5 * (x[i][k] + agg[k])).collect()
        })
        .collect()
}

fn ref_attention(xv: &Mat, xw: &Mat, w3: &Mat, score: CrossScore) -> Mat {
    let d = w3[0].len();
    let qv: Mat = xv.iter().map(|x| vecmat(x, w3)).collect();
    let qw: Mat = xw.iter().map(|x| vecmat(x, w3)).collect();
    qv.iter()
        .map(|a| {
            let e: Vec<f64> = qw
                .iter()
                .map(|b| match score {
                    CrossScore::ScaledDot => a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (d as f64).sqrt(),
                    CrossScore::Mean => a.iter().zip(b).map(|(p, q)| (p + q) / 2.0).sum::<f64>() / d as f64,
                })
                .collect();
            let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = ex.iter().sum();
            ex.iter().map(|v| v / z).collect()
        })
        .collect()
}

fn ref_distance(x_self: &Mat, x_other: &Mat, a: &Mat, beta: &[f64]) -> Mat {
    let d = x_self[0].len();
    (0..x_self.len())
        .map(|i| {
            (0..d)
                .map(|k| {
                    let attended: f64 = (0..x_other.len()).map(|j| a[i][j] * x_other[j][k]).sum();
                    let g = beta[i] * (attended - x_self[i][k]);
                    g * g
                })
                .collect()
        })
        .collect()
}

pub fn fine_message_round_matches_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..CASES {
        let g = random_graph(&mut rng);
        let d = rng.random_range(2..=5);
        let mut s = ParamStore::new(0);
        gru::init_params(&mut s, &mut rng, "g", d).unwrap();
        for b in ["b_z", "b_r", "b_h"] {
            s.set(&format!("g.{b}"), to_tensor(&rand_mat(&mut rng, 1, d))).unwrap();
        }
        let x = rand_mat(&mut rng, g.fine_count(), d);
        let mut tape = Tape::new();
        let p = GruParams::bind(&mut tape, &s, "g").unwrap();
        let xv = tape.constant(to_tensor(&x));
        let out = fine_message_round(&mut tape, &g, xv, &p).unwrap();
        let expect = ref_fine_round(&g, &x, &RefGru::from_store(&s, "g"));
        assert!(max_diff(&to_mat(tape.value(out)), &expect) < TOL);
    }
}

pub fn coarse_and_hetero_updates_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..CASES {
        let g = random_graph(&mut rng);
        let d = rng.random_range(2..=5);
        let x = rand_mat(&mut rng, g.fine_count(), d);
        let (w1, w2, w3) = (rand_mat(&mut rng, d, d), rand_mat(&mut rng, d, d), rand_mat(&mut rng, d, d));
        let mut tape = Tape::new();
        let xv = tape.constant(to_tensor(&x));
        let (a, b, c) = (
            tape.constant(to_tensor(&w1)),
            tape.constant(to_tensor(&w2)),
            tape.constant(to_tensor(&w3)),
        );
        let xc = coarse_update(&mut tape, &g, xv, a).unwrap();
        let coarse_ref = ref_coarse(&g, &x, &w1);
        assert!(max_diff(&to_mat(tape.value(xc)), &coarse_ref) < TOL);
        let out = fine_hetero_update(&mut tape, &g, xv, xc, b, c).unwrap();
        let expect = ref_hetero(&g, &x, &coarse_ref, &w2, &w3);
        assert!(max_diff(&to_mat(tape.value(out.x)), &expect) < TOL);
    }
}

pub fn cross_encoding_and_distance_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..CASES {
        let d = rng.random_range(2..=5);
        let (mv, mw) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let xv = rand_mat(&mut rng, mv, d);
        let xw = rand_mat(&mut rng, mw, d);
        let w3 = rand_mat(&mut rng, d, d);
        let w4 = rand_mat(&mut rng, d, 1);
        let w5 = rand_mat(&mut rng, d, d);
        let score = if case % 2 == 0 { CrossScore::Mean } else { CrossScore::ScaledDot };
        let mut tape = Tape::new();
        let (v, w) = (tape.constant(to_tensor(&xv)), tape.constant(to_tensor(&xw)));
        let p = CrossParams {
            w3: tape.constant(to_tensor(&w3)),
            w4: tape.constant(to_tensor(&w4)),
            w5: tape.constant(to_tensor(&w5)),
        };
        let enc = cross_encode(&mut tape, v, w, &p, score).unwrap();
        let a_vw = ref_attention(&xv, &xw, &w3, score);
        let a_wv = ref_attention(&xw, &xv, &w3, score);
        assert!(max_diff(&to_mat(tape.value(enc.a_vw)), &a_vw) < TOL);
        assert!(max_diff(&to_mat(tape.value(enc.a_wv)), &a_wv) < TOL);

        let beta: Vec<f64> = xv
            .iter()
            .map(|x| {
                let h: Vec<f64> = vecmat(x, &w5).iter().map(|v| v.tanh()).collect();
                sigmoid(vecmat(&h, &w4)[0])
            })
            .collect();
        assert!(
            max_diff(&to_mat(tape.value(enc.beta_v)), &beta.iter().map(|b| vec![*b]).collect::<Mat>()) < TOL
        );
        let l = cross_distance(&mut tape, v, w, enc.a_vw, enc.beta_v).unwrap();
        assert!(max_diff(&to_mat(tape.value(l)), &ref_distance(&xv, &xw, &a_vw, &beta)) < TOL);
    }
}

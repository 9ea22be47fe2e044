//! Threshold sweep vs. a brute-force recount.

use hgnn_core::evaluate_threshold_sweep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive F1 at threshold `t`, positives predicted when `score >= t`.
fn recount(scores: &[f64], labels: &[bool], t: f64) -> (usize, usize, usize, f64, f64, f64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (s, &l) in scores.iter().zip(labels) {
        match (*s >= t, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (tp, fp, fn_, p, r, f)
}

/// Random score sets, including scores exactly on grid points and ties.
pub fn sweep_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    for case in 0..200 {
        let n = rng.random_range(1..=300);
        let scores: Vec<f64> = (0..n)
            .map(|_| match case % 3 {
                0 => rng.random::<f64>(),
                1 => rng.random_range(0..=100) as f64 / 100.0,
                _ => [0.0, 0.5, 1.0, 0.25][rng.random_range(0..4)],
            })
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let report = evaluate_threshold_sweep(&scores, &labels).unwrap();
        assert_eq!(report.rows.len(), 101);
        let mut best = (0.0f64, 0.0f64);
        for (i, row) in report.rows.iter().enumerate() {
            let t = i as f64 / 100.0;
            assert_eq!(row.threshold, t);
            let (tp, fp, fn_, p, r, f) = recount(&scores, &labels, t);
            assert_eq!((row.tp, row.fp, row.fn_), (tp, fp, fn_), "counts at {t}");
            assert_eq!((row.precision, row.recall, row.f1), (p, r, f), "rates at {t}");
            if f > best.0 {
                best = (f, t);
            }
        }
        assert_eq!((report.best_f1, report.best_threshold), best);
    }
}

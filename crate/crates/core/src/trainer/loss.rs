//! Ranking and contrastive losses with exact gradients.
//!
//! * Rank loss over ordered candidate pairs:
//!   `Σ_{i,j} w_ij · ln(1 + exp(sim_j − sim_i))` with
//!   `w_ij = max(0, 1/r_i − 1/r_j)`; pairs where `i` does not outrank `j`
//!   carry zero weight.
//! * In-batch loss: `−ln softmax(row)[positive]`, averaged over rows.
//! * Mixed objective: `λ·rank + (1 − λ)·in-batch`.

use crate::error::{Error, Result};

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pair weight `max(0, 1/r_i − 1/r_j)`.
pub fn pair_weight(rank_i: usize, rank_j: usize) -> f64 {
    (1.0 / rank_i as f64 - 1.0 / rank_j as f64).max(0.0)
}

/// Rank loss and its gradient with respect to `sims`.
pub fn loss_rank(sims: &[f64], ranks: &[usize]) -> (f64, Vec<f64>) {
    assert_eq!(sims.len(), ranks.len(), "sims and ranks must align");
    let n = sims.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = pair_weight(ranks[i], ranks[j]);
            if w == 0.0 {
                continue;
            }
            let diff = sims[j] - sims[i];
            value += w * softplus(diff);
            let g = w * sigmoid(diff);
            grad[j] += g;
            grad[i] -= g;
        }
    }
    (value, grad)
}

/// Mean over rows of `−ln softmax(row)[positive]`. Columns holding
/// `-inf` are excluded from the softmax.
pub fn loss_inbatch(rows: &[Vec<f64>], positives: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if rows.len() != positives.len() {
        return Err(Error::Contract(format!(
            "{} rows but {} positives",
            rows.len(),
            positives.len()
        )));
    }
    if rows.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let scale = 1.0 / rows.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(rows.len());
    for (row, &pos) in rows.iter().zip(positives) {
        if pos >= row.len() || !row[pos].is_finite() {
            return Err(Error::Contract(format!(
                "positive column {pos} is out of range for a row of {}",
                row.len()
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        value += -(row[pos] - max - z.ln());
        let mut g: Vec<f64> = exps.iter().map(|e| scale * e / z).collect();
        g[pos] -= scale;
        grads.push(g);
    }
    Ok((value * scale, grads))
}

pub fn loss_total(rank_value: f64, inbatch_value: f64, lambda: f64) -> f64 {
    lambda * rank_value + (1.0 - lambda) * inbatch_value
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pair_weight_for_ranks_one_and_ten() {
        assert_abs_diff_eq!(pair_weight(1, 10), 0.9, epsilon = 1e-15);
        assert_eq!(pair_weight(10, 1), 0.0);
    }

    #[test]
    fn rank_loss_two_candidates() {
        let (v, _) = loss_rank(&[1.0, 0.0], &[1, 2]);
        assert_abs_diff_eq!(v, 0.5 * (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.156631, epsilon = 1e-6);
    }

    #[test]
    fn rank_loss_singleton_is_zero() {
        assert_eq!(loss_rank(&[3.0], &[1]), (0.0, vec![0.0]));
    }

    #[test]
    fn inbatch_examples() {
        let (v, _) = loss_inbatch(&[vec![2.0, 0.0]], &[0]).unwrap();
        assert_abs_diff_eq!(v, 0.126928, epsilon = 1e-6);
        let (v, g) = loss_inbatch(&[vec![0.7]], &[0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![vec![0.0]]);
        let (v, _) = loss_inbatch(&[vec![0.3; 5]], &[2]).unwrap();
        assert_abs_diff_eq!(v, 5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn inbatch_positive_out_of_range() {
        assert!(matches!(
            loss_inbatch(&[vec![1.0, 2.0]], &[2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn inbatch_masked_columns_are_ignored() {
        let (a, ga) = loss_inbatch(&[vec![2.0, f64::NEG_INFINITY, 0.0]], &[0]).unwrap();
        let (b, _) = loss_inbatch(&[vec![2.0, 0.0]], &[0]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert_eq!(ga[0][1], 0.0);
    }

    #[test]
    fn total_mixes() {
        assert_abs_diff_eq!(loss_total(0.156631, 0.126928, 0.8), 0.150690, epsilon = 1e-6);
        assert_eq!(loss_total(0.3, 0.9, 1.0), 0.3);
        assert_eq!(loss_total(0.3, 0.9, 0.0), 0.9);
    }

    fn permutation(n: usize, seed: u64) -> Vec<usize> {
        let mut ranks: Vec<usize> = (1..=n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ranks.swap(i, (s >> 33) as usize % (i + 1));
        }
        ranks
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    proptest! {
        #[test]
        fn rank_gradient_matches_central_differences(sims in prop::collection::vec(-3.0f64..3.0, 1..=10), seed in any::<u64>()) {
            let ranks = permutation(sims.len(), seed);
            let (_, g) = loss_rank(&sims, &ranks);
            let eps = 1e-4;
            for k in 0..sims.len() {
                let mut p = sims.clone();
                let mut m = sims.clone();
                p[k] += eps;
                m[k] -= eps;
                let numeric = (loss_rank(&p, &ranks).0 - loss_rank(&m, &ranks).0) / (2.0 * eps);
                prop_assert!(rel_err(g[k], numeric) < 1e-4, "{} vs {}", g[k], numeric);
            }
        }

        #[test]
        fn inbatch_gradient_matches_central_differences(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..4), pos in 0usize..4) {
            let positives = vec![pos; rows.len()];
            let (_, g) = loss_inbatch(&rows, &positives).unwrap();
            let eps = 1e-4;
            for r in 0..rows.len() {
                for c in 0..4 {
                    let mut p = rows.clone();
                    let mut m = rows.clone();
                    p[r][c] += eps;
                    m[r][c] -= eps;
                    let numeric = (loss_inbatch(&p, &positives).unwrap().0 - loss_inbatch(&m, &positives).unwrap().0) / (2.0 * eps);
                    prop_assert!(rel_err(g[r][c], numeric) < 1e-4);
                }
            }
        }

        #[test]
        fn rank_loss_is_shift_invariant(sims in prop::collection::vec(-3.0f64..3.0, 1..8), shift in -5.0f64..5.0, seed in any::<u64>()) {
            let ranks = permutation(sims.len(), seed);
            let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
            prop_assert!((loss_rank(&sims, &ranks).0 - loss_rank(&shifted, &ranks).0).abs() < 1e-9);
        }

        #[test]
        fn rank_loss_positive_and_monotone(sims in prop::collection::vec(-3.0f64..3.0, 2..8), seed in any::<u64>()) {
            let ranks = permutation(sims.len(), seed);
            let (v, g) = loss_rank(&sims, &ranks);
            prop_assert!(v > 0.0);
            // The rank-1 candidate outranks everyone: raising its sim lowers the loss.
            let top = ranks.iter().position(|r| *r == 1).unwrap();
            prop_assert!(g[top] < 0.0);
        }

        #[test]
        fn losses_are_permutation_equivariant(sims in prop::collection::vec(-3.0f64..3.0, 2..8), seed in any::<u64>(), a in 0usize..8, b in 0usize..8) {
            let n = sims.len();
            let (a, b) = (a % n, b % n);
            let ranks = permutation(n, seed);
            let mut s2 = sims.clone();
            let mut r2 = ranks.clone();
            s2.swap(a, b);
            r2.swap(a, b);
            prop_assert!((loss_rank(&sims, &ranks).0 - loss_rank(&s2, &r2).0).abs() < 1e-9);
            let pos = ranks.iter().position(|r| *r == 1).unwrap();
            let pos2 = r2.iter().position(|r| *r == 1).unwrap();
            let ib = loss_inbatch(std::slice::from_ref(&sims), &[pos]).unwrap().0;
            let ib2 = loss_inbatch(&[s2], &[pos2]).unwrap().0;
            prop_assert!((ib - ib2).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_loss_vanishes_with_large_margins() {
        let (v, _) = loss_rank(&[60.0, 30.0, 0.0], &[1, 2, 3]);
        assert!(v < 1e-12);
        let (v, _) = loss_rank(&[0.0, 30.0, 60.0], &[1, 2, 3]);
        assert!(v > 1.0);
    }
}

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::factors::FactorSet;

/// Largest rank searched exhaustively; above it components are matched greedily.
const EXHAUSTIVE_MAX_RANK: usize = 8;

/// Factor match score in `[0, 1]`.
///
/// For the column permutation of `b` that maximizes it, the average over
/// components of `|cos(a_A, b_A)| · |cos(a_B, b_B)| · |cos(a_C, b_C)|`.
pub fn factor_match_score(a: &FactorSet, b: &FactorSet) -> Result<f64> {
    if a.rank() != b.rank() {
        return Err(invalid(format!(
            "factor match score needs equal ranks, got {} and {}",
            a.rank(),
            b.rank()
        )));
    }
    if a.dims() != b.dims() {
        return Err(invalid("factor match score needs equal dims"));
    }
    let r = a.rank();
    let mut score = DMatrix::from_element(r, r, 1.0);
    for (fa, fb) in a.factors().iter().zip(b.factors()) {
        for i in 0..r {
            for j in 0..r {
                score[(i, j)] *= abs_cosine(fa.column(i).as_slice(), fb.column(j).as_slice());
            }
        }
    }
    let total = if r <= EXHAUSTIVE_MAX_RANK {
        best_permutation(&score)
    } else {
        greedy(&score)
    };
    Ok(total / r as f64)
}

fn abs_cosine(x: &[f64], y: &[f64]) -> f64 {
    let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let d: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (d / (nx * ny)).abs().min(1.0)
}

fn best_permutation(score: &DMatrix<f64>) -> f64 {
    fn recurse(score: &DMatrix<f64>, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let r = score.nrows();
        if row == r {
            *best = best.max(acc);
            return;
        }
        for j in 0..r {
            if !used[j] {
                used[j] = true;
                recurse(score, row + 1, used, acc + score[(row, j)], best);
                used[j] = false;
            }
        }
    }
    let mut best = 0.0;
    recurse(score, 0, &mut vec![false; score.nrows()], 0.0, &mut best);
    best
}

fn greedy(score: &DMatrix<f64>) -> f64 {
    let r = score.nrows();
    let mut pairs: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..r).map(move |j| (i, j))).collect();
    pairs.sort_by(|&x, &y| score[y].total_cmp(&score[x]));
    let (mut rows, mut cols) = (vec![false; r], vec![false; r]);
    let mut total = 0.0;
    for (i, j) in pairs {
        if !rows[i] && !cols[j] {
            rows[i] = true;
            cols[j] = true;
            total += score[(i, j)];
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpd::random_init;
    use nalgebra::DVector;

    #[test]
    fn identical_sets_score_one() {
        let a = random_init([5, 4, 3], 3, 1);
        assert!((factor_match_score(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let p = a.permuted(&[2, 0, 1]).unwrap();
        assert!((factor_match_score(&a, &p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_columns_score_zero() {
        let e = |n: usize, k: usize| DMatrix::from_fn(n, 1, |i, _| if i == k { 1.0 } else { 0.0 });
        let a = FactorSet::new(DVector::from_element(1, 1.0), [e(3, 0), e(3, 0), e(3, 0)]).unwrap();
        let b = FactorSet::new(DVector::from_element(1, 1.0), [e(3, 1), e(3, 1), e(3, 1)]).unwrap();
        assert!(factor_match_score(&a, &b).unwrap() < 1e-12);
    }

    #[test]
    fn rank_mismatch_is_an_error() {
        let a = random_init([3, 3, 3], 2, 1);
        let b = random_init([3, 3, 3], 3, 1);
        assert!(factor_match_score(&a, &b).is_err());
    }

    #[test]
    fn greedy_agrees_with_exhaustive_on_clear_matches() {
        let a = random_init([6, 6, 6], 5, 4);
        let p = a.permuted(&[4, 3, 2, 1, 0]).unwrap();
        let r = 5;
        let mut score = DMatrix::from_element(r, r, 1.0);
        for (fa, fb) in a.factors().iter().zip(p.factors()) {
            for i in 0..r {
                for j in 0..r {
                    score[(i, j)] *= abs_cosine(fa.column(i).as_slice(), fb.column(j).as_slice());
                }
            }
        }
        assert!((greedy(&score) - best_permutation(&score)).abs() < 1e-12);
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_training;
use crate::error::{invalid, Result};

/// Linear soft-margin SVM `score = w·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub c: f64,
    /// Set when `C = 0`: the hinge term vanishes and every score is 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmOptions {
    pub c: f64,
    /// Passes over the training set.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 400,
            seed: 0,
        }
    }
}

/// `½‖w‖² + C · Σ max(0, 1 − y(w·x + b))` with labels mapped to ±1.
pub fn svm_objective(m: &SvmModel, x: &[Vec<f64>], y: &[bool]) -> f64 {
    let reg = 0.5 * m.w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(r, l)| {
            let s = if *l { 1.0 } else { -1.0 };
            (1.0 - s * svm_score(m, r)).max(0.0)
        })
        .sum();
    reg + m.c * hinge
}

/// Minimizes [`svm_objective`] by seeded stochastic subgradient descent.
///
/// The objective equals `n·C · (λ/2 ‖w‖² + mean hinge)` with `λ = 1/(nC)`;
/// steps are `1/(λ t)` on the regularized weights and the bias, samples are
/// visited in a fresh shuffled order each epoch, and the returned model is
/// the average of the iterates over the second half of the run.
pub fn svm_fit(x: &[Vec<f64>], y: &[bool], opts: &SvmOptions) -> Result<SvmModel> {
    let dim = check_training(x, y)?;
    if !(opts.c.is_finite() && opts.c >= 0.0) {
        return Err(invalid(format!(
            "SVM C must be finite and nonnegative, got {}",
            opts.c
        )));
    }
    if opts.epochs == 0 {
        return Err(invalid("SVM needs at least one epoch"));
    }
    if opts.c == 0.0 {
        log::warn!("SVM with C = 0 has the trivial solution w = 0");
        return Ok(SvmModel {
            w: vec![0.0; dim],
            b: 0.0,
            c: 0.0,
            degenerate: true,
        });
    }
    let n = x.len();
    let lambda = 1.0 / (n as f64 * opts.c);
    let total = opts.epochs * n;
    let average_from = total / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut w, mut b) = (vec![0.0; dim], 0.0);
    let (mut w_avg, mut b_avg, mut n_avg) = (vec![0.0; dim], 0.0, 0.0);
    let mut t = 0usize;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let s = if y[i] { 1.0 } else { -1.0 };
            let margin = s * (w.iter().zip(&x[i]).map(|(a, v)| a * v).sum::<f64>() + b);
            let shrink = 1.0 - eta * lambda;
            for wj in &mut w {
                *wj *= shrink;
            }
            if margin < 1.0 {
                for (wj, v) in w.iter_mut().zip(&x[i]) {
                    *wj += eta * s * v;
                }
                b += eta * s;
            }
            if t > average_from {
                n_avg += 1.0;
                let k = 1.0 / n_avg;
                for (a, v) in w_avg.iter_mut().zip(&w) {
                    *a += (v - *a) * k;
                }
                b_avg += (b - b_avg) * k;
            }
        }
    }
    if w_avg.iter().any(|v| !v.is_finite()) || !b_avg.is_finite() {
        return Err(crate::Error::Numerical("SVM iterates diverged".into()));
    }
    Ok(SvmModel {
        w: w_avg,
        b: b_avg,
        c: opts.c,
        degenerate: false,
    })
}

pub fn svm_score(m: &SvmModel, x: &[f64]) -> f64 {
    m.w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + m.b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_clusters() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..20 {
            let jitter = (k as f64 * 0.37).sin() * 0.5;
            x.push(vec![2.0 + jitter, jitter]);
            y.push(true);
            x.push(vec![-2.0 - jitter, -jitter]);
            y.push(false);
        }
        let m = svm_fit(&x, &y, &SvmOptions::default()).unwrap();
        assert!(x
            .iter()
            .zip(&y)
            .all(|(r, l)| (svm_score(&m, r) > 0.0) == *l));
        assert!(m.w[0] > 0.0);
    }

    #[test]
    fn zero_c_is_degenerate() {
        let x = vec![vec![1.0], vec![-1.0]];
        let m = svm_fit(
            &x,
            &[true, false],
            &SvmOptions {
                c: 0.0,
                ..SvmOptions::default()
            },
        )
        .unwrap();
        assert!(m.degenerate);
        assert_eq!(m.w, [0.0]);
        assert_eq!(svm_score(&m, &[5.0]), 0.0);
    }

    #[test]
    fn single_class_rejected() {
        assert!(svm_fit(
            &[vec![1.0], vec![2.0]],
            &[false, false],
            &SvmOptions::default()
        )
        .is_err());
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let y: Vec<bool> = (0..30).map(|i| i % 3 == 0).collect();
        let o = SvmOptions::default();
        assert_eq!(svm_fit(&x, &y, &o).unwrap(), svm_fit(&x, &y, &o).unwrap());
    }
}

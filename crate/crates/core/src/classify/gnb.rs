use serde::{Deserialize, Serialize};

use super::check_training;
use crate::error::Result;

/// Relative variance floor: `1e-9 ×` the largest per-feature variance.
pub const VAR_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussians {
    pub prior: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Two-class Gaussian naive Bayes; index 1 is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub classes: [ClassGaussians; 2],
}

fn moments<'a>(
    rows: impl Iterator<Item = &'a Vec<f64>>,
    dim: usize,
) -> (usize, Vec<f64>, Vec<f64>) {
    let rows: Vec<&Vec<f64>> = rows.collect();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; dim];
    for r in &rows {
        for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (rows.len(), mean, var)
}

pub fn gnb_fit(x: &[Vec<f64>], y: &[bool]) -> Result<GnbModel> {
    let dim = check_training(x, y)?;
    let (_, _, all_var) = moments(x.iter(), dim);
    let max_var = all_var.iter().copied().fold(0.0, f64::max);
    // An all-constant design still needs a strictly positive variance.
    let floor = if max_var > 0.0 {
        VAR_FLOOR * max_var
    } else {
        VAR_FLOOR
    };
    let class = |label: bool| {
        let (count, mean, var) = moments(
            x.iter()
                .zip(y)
                .filter(|(_, l)| **l == label)
                .map(|(r, _)| r),
            dim,
        );
        ClassGaussians {
            prior: count as f64 / x.len() as f64,
            mean,
            var: var.into_iter().map(|v| v.max(floor)).collect(),
        }
    };
    Ok(GnbModel {
        classes: [class(false), class(true)],
    })
}

fn log_joint(c: &ClassGaussians, x: &[f64]) -> f64 {
    let ll: f64 = x
        .iter()
        .zip(&c.mean)
        .zip(&c.var)
        .map(|((v, m), s)| -0.5 * (std::f64::consts::TAU * s).ln() - (v - m) * (v - m) / (2.0 * s))
        .sum();
    c.prior.ln() + ll
}

/// `log p(positive | x) − log p(negative | x)`.
pub fn gnb_score(m: &GnbModel, x: &[f64]) -> f64 {
    log_joint(&m.classes[1], x) - log_joint(&m.classes[0], x)
}

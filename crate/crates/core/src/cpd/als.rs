use nalgebra::{DMatrix, DVector};

use super::{finish, gram_hadamard, CpdOptions, CpdResult, RunOutput, Solver};
use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::tensor::{mttkrp_raw, residual_sq, Tensor3};

/// Gramians with condition number above this get `REGULARIZATION · I` added.
const MAX_CONDITION: f64 = 1e12;
const REGULARIZATION: f64 = 1e-10;
/// Below this relative error the expanded-norm fit formula loses too many
/// digits and the residual is evaluated entrywise instead.
const EXACT_ERROR_BELOW: f64 = 1e-2;

/// Single ALS run from a caller-supplied initialization.
pub fn als_from(t: &Tensor3, init: &FactorSet, opts: &CpdOptions) -> Result<CpdResult> {
    opts.validate(t.dims())?;
    init.check_dims(t.dims())?;
    if init.rank() != opts.rank {
        return Err(invalid("initialization rank does not match options"));
    }
    if t.norm() == 0.0 {
        return Err(invalid("cannot decompose a zero-norm tensor"));
    }
    let out = run(t, init, opts)?;
    finish(t, out, Solver::Als, 0, opts.seed)
}

pub(crate) fn run(t: &Tensor3, init: &FactorSet, opts: &CpdOptions) -> Result<RunOutput> {
    let norm_sq = t.norm_sq();
    let norm = norm_sq.sqrt();
    let rank = opts.rank;

    let mut lambda = init.lambda().clone();
    let mut u = init.factors().clone();
    for m in &mut u {
        let norms = unit_columns(m);
        lambda.component_mul_assign(&norms);
    }
    let mut grams = u.clone().map(|m| m.transpose() * m);

    let current = |lambda: &DVector<f64>, u: &[DMatrix<f64>; 3]| {
        FactorSet::new(lambda.clone(), u.clone()).expect("ALS iterate is a valid factor set")
    };
    let mut trace = vec![residual_sq(t, &current(&lambda, &u)).sqrt() / norm];
    let mut fit_prev = 1.0 - trace[0] * trace[0];
    let mut regularized = false;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        iterations += 1;
        let mut last_mttkrp = DMatrix::zeros(0, 0);
        for mode in 0..3 {
            let m = mttkrp_raw(t, &u, mode);
            let g = gram_hadamard(&grams, &[mode]);
            let (mut un, reg) = solve_right(&m, &g);
            regularized |= reg;
            lambda = unit_columns(&mut un);
            grams[mode] = un.transpose() * &un;
            u[mode] = un;
            if mode == 2 {
                last_mttkrp = m;
            }
        }

        // ‖X − M‖² = ‖X‖² − 2⟨X, M⟩ + ‖M‖², with ⟨X, M⟩ read off the last MTTKRP.
        let inner: f64 = (0..rank)
            .map(|k| lambda[k] * u[2].column(k).dot(&last_mttkrp.column(k)))
            .sum();
        let model_sq = (gram_hadamard(&grams, &[]) * &lambda).dot(&lambda);
        let mut rel = (norm_sq - 2.0 * inner + model_sq).max(0.0).sqrt() / norm;
        if rel < EXACT_ERROR_BELOW {
            rel = residual_sq(t, &current(&lambda, &u)).sqrt() / norm;
        }
        trace.push(rel);

        let fit = 1.0 - rel * rel;
        if rel == 0.0 || (fit - fit_prev).abs() < opts.tol * fit.max(1e-12) {
            converged = true;
            break;
        }
        fit_prev = fit;
    }

    Ok(RunOutput {
        factors: current(&lambda, &u),
        iterations,
        converged,
        trace,
        regularized,
    })
}

/// Scales each column to unit norm in place and returns the original norms.
/// Zero columns are left as they are.
pub(crate) fn unit_columns(m: &mut DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        m.ncols(),
        m.column_iter_mut().map(|mut c| {
            let n = c.norm();
            if n > 0.0 {
                c.scale_mut(1.0 / n);
            }
            n
        }),
    )
}

/// Solves `X · G = M` for symmetric positive semidefinite `G`, adding
/// `REGULARIZATION · I` when `G` is numerically singular. Returns whether
/// regularization was applied.
pub(crate) fn solve_right(m: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = g.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let degenerate = !(min > 0.0) || max / min > MAX_CONDITION;
    let mut gg = g.clone();
    if degenerate {
        for i in 0..gg.nrows() {
            gg[(i, i)] += REGULARIZATION;
        }
    }
    let rhs = m.transpose();
    let x = match gg.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let svd = gg.svd(true, true);
            svd.solve(&rhs, 1e-14 * max.abs().max(f64::MIN_POSITIVE))
                .unwrap_or_else(|_| DMatrix::zeros(rhs.nrows(), rhs.ncols()))
        }
    };
    (x.transpose(), degenerate)
}

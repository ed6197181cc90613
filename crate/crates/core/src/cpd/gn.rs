//! Levenberg–Marquardt on the stacked factor vector.
//!
//! The parameter vector is `[vec(A); vec(B); vec(C)]` (column-major vec, the
//! lambda scales absorbed into the factors). The Gauss–Newton matrix JᵀJ is
//! assembled from factor Gramians; J itself, with its `E·S·F` rows, is never
//! formed. For a parameter pair in modes `n ≠ m`
//!
//! ```text
//! (JᵀJ)[(i,p),(j,q)] = U_n[i,q] · U_m[j,p] · Γ_nm[p,q]
//! ```
//!
//! where `Γ_nm` is the Gram matrix of the third mode; diagonal blocks are
//! `Γ_n ⊗ I` with `Γ_n` the Hadamard product of the other two Gramians.

use nalgebra::{DMatrix, DVector};

use super::{finish, gram_hadamard, CpdOptions, CpdResult, RunOutput, Solver};
use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::tensor::{mttkrp_raw, residual_sq, Tensor3};

/// Above this many parameters the damped system is solved by PCG instead of Cholesky.
const DIRECT_SOLVE_MAX: usize = 2000;
const CG_REL_TOL: f64 = 1e-6;
const MAX_DAMPING: f64 = 1e12;
/// Relative error treated as an exact fit.
const EXACT_FIT: f64 = 1e-15;

/// Single LM run from a caller-supplied initialization.
pub fn gn_from(t: &Tensor3, init: &FactorSet, opts: &CpdOptions) -> Result<CpdResult> {
    opts.validate(t.dims())?;
    init.check_dims(t.dims())?;
    if init.rank() != opts.rank {
        return Err(invalid("initialization rank does not match options"));
    }
    if t.norm() == 0.0 {
        return Err(invalid("cannot decompose a zero-norm tensor"));
    }
    let out = run(t, init, opts)?;
    finish(t, out, Solver::Gn, 0, opts.seed)
}

fn offsets(u: &[DMatrix<f64>; 3]) -> [usize; 4] {
    let r = u[0].ncols();
    let o1 = u[0].nrows() * r;
    let o2 = o1 + u[1].nrows() * r;
    [0, o1, o2, o2 + u[2].nrows() * r]
}

fn stack(mats: &[DMatrix<f64>; 3]) -> DVector<f64> {
    DVector::from_iterator(
        mats.iter().map(|m| m.len()).sum(),
        mats.iter().flat_map(|m| m.iter().copied()),
    )
}

fn unstack(v: &DVector<f64>, like: &[DMatrix<f64>; 3]) -> [DMatrix<f64>; 3] {
    let off = offsets(like);
    std::array::from_fn(|n| {
        DMatrix::from_column_slice(
            like[n].nrows(),
            like[n].ncols(),
            &v.as_slice()[off[n]..off[n + 1]],
        )
    })
}

fn grams(u: &[DMatrix<f64>; 3]) -> [DMatrix<f64>; 3] {
    std::array::from_fn(|n| u[n].transpose() * &u[n])
}

/// Dense Gauss–Newton matrix JᵀJ for the model `[[U_0, U_1, U_2]]`.
pub fn normal_matrix(u: &[DMatrix<f64>; 3]) -> DMatrix<f64> {
    let g = grams(u);
    let off = offsets(u);
    let r = u[0].ncols();
    let mut h = DMatrix::zeros(off[3], off[3]);
    for n in 0..3 {
        let gamma = gram_hadamard(&g, &[n]);
        let rows = u[n].nrows();
        for p in 0..r {
            for q in 0..r {
                for i in 0..rows {
                    h[(off[n] + p * rows + i, off[n] + q * rows + i)] = gamma[(p, q)];
                }
            }
        }
        for m in (n + 1)..3 {
            let gamma = gram_hadamard(&g, &[n, m]);
            let (rn, rm) = (u[n].nrows(), u[m].nrows());
            for p in 0..r {
                for q in 0..r {
                    for i in 0..rn {
                        let a = u[n][(i, q)] * gamma[(p, q)];
                        for j in 0..rm {
                            let v = a * u[m][(j, p)];
                            let row = off[n] + p * rn + i;
                            let col = off[m] + q * rm + j;
                            h[(row, col)] = v;
                            h[(col, row)] = v;
                        }
                    }
                }
            }
        }
    }
    h
}

/// `JᵀJ · v` without forming JᵀJ.
pub fn normal_matvec(u: &[DMatrix<f64>; 3], v: &DVector<f64>) -> DVector<f64> {
    let g = grams(u);
    let vm = unstack(v, u);
    let out: [DMatrix<f64>; 3] = std::array::from_fn(|n| {
        let mut o = &vm[n] * gram_hadamard(&g, &[n]);
        for m in 0..3 {
            if m != n {
                let w = (u[m].transpose() * &vm[m]).component_mul(&gram_hadamard(&g, &[n, m]));
                o += &u[n] * w.transpose();
            }
        }
        o
    });
    stack(&out)
}

/// Spreads each component's scale evenly over the three modes.
fn balance(u: &mut [DMatrix<f64>; 3]) {
    for k in 0..u[0].ncols() {
        let norms: Vec<f64> = u.iter().map(|m| m.column(k).norm()).collect();
        if norms.contains(&0.0) {
            continue;
        }
        let target = (norms[0] * norms[1] * norms[2]).cbrt();
        for (m, n) in u.iter_mut().zip(&norms) {
            m.column_mut(k).scale_mut(target / n);
        }
    }
}

fn rel_error_of(t: &Tensor3, u: &[DMatrix<f64>; 3], norm: f64) -> f64 {
    let fs = FactorSet::from_factors(u.clone()).expect("iterate is a valid factor set");
    residual_sq(t, &fs).sqrt() / norm
}

/// Preconditioned conjugate gradients for SPD `apply`.
fn pcg(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    precond: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iter: usize,
) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return x;
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        if r.norm() <= CG_REL_TOL * b_norm {
            break;
        }
        z = precond(&r);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * &p;
        rz = rz_new;
    }
    x
}

/// Solves `(JᵀJ + μ·d·I) δ = rhs`, `d` the mean diagonal of JᵀJ.
fn damped_solve(u: &[DMatrix<f64>; 3], rhs: &DVector<f64>, mu: f64) -> Option<DVector<f64>> {
    let g = grams(u);
    let off = offsets(u);
    let diag_mean = (0..3)
        .map(|n| gram_hadamard(&g, &[n]).diagonal().sum() * u[n].nrows() as f64)
        .sum::<f64>()
        / off[3] as f64;
    let shift = mu * diag_mean.max(f64::MIN_POSITIVE);
    if off[3] <= DIRECT_SOLVE_MAX {
        let mut h = normal_matrix(u);
        for i in 0..off[3] {
            h[(i, i)] += shift;
        }
        return h.cholesky().map(|c| c.solve(rhs));
    }
    let blocks: Vec<DMatrix<f64>> = (0..3)
        .map(|n| {
            let mut b = gram_hadamard(&g, &[n]);
            for i in 0..b.nrows() {
                b[(i, i)] += shift;
            }
            let n = b.nrows();
            b.try_inverse().unwrap_or_else(|| DMatrix::identity(n, n))
        })
        .collect();
    let precond = |v: &DVector<f64>| {
        let vm = unstack(v, u);
        stack(&std::array::from_fn(|n| &vm[n] * &blocks[n]))
    };
    let apply = |v: &DVector<f64>| normal_matvec(u, v) + shift * v;
    Some(pcg(apply, precond, rhs, 10 * off[3].min(1000)))
}

pub(crate) fn run(t: &Tensor3, init: &FactorSet, opts: &CpdOptions) -> Result<RunOutput> {
    let norm = t.norm();
    let mut u = init.factors().clone();
    for k in 0..init.rank() {
        u[0].column_mut(k).scale_mut(init.lambda()[k]);
    }
    balance(&mut u);

    let mut err = rel_error_of(t, &u, norm);
    let mut trace = vec![err];
    let mut mu = opts.gn_damping_init;
    let mut iterations = 0;
    let mut loops = 0;
    let mut converged = false;

    'outer: while loops < opts.max_iters {
        if err <= EXACT_FIT {
            converged = true;
            break;
        }
        let g = grams(&u);
        let grad: [DMatrix<f64>; 3] =
            std::array::from_fn(|n| &u[n] * gram_hadamard(&g, &[n]) - mttkrp_raw(t, &u, n));
        let rhs = -stack(&grad);
        if rhs.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        loop {
            loops += 1;
            let step = damped_solve(&u, &rhs, mu);
            let candidate = step.map(|d| {
                let mut c = unstack(&(stack(&u) + d), &u);
                balance(&mut c);
                c
            });
            let cand_err = candidate.as_ref().map(|c| rel_error_of(t, c, norm));
            match (candidate, cand_err) {
                (Some(c), Some(e)) if e <= err => {
                    let fit_old = 1.0 - err * err;
                    let fit_new = 1.0 - e * e;
                    if e < err {
                        iterations += 1;
                    }
                    // Heavily damped steps are short; only judge convergence on near-GN steps.
                    let near_gn = mu <= opts.gn_damping_init;
                    u = c;
                    err = e;
                    trace.push(e);
                    mu = (mu / 10.0).max(1e-15);
                    if near_gn && (fit_new - fit_old).abs() < opts.tol * fit_new.max(1e-12) {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    mu *= 10.0;
                    if mu > MAX_DAMPING {
                        break 'outer;
                    }
                    if loops >= opts.max_iters {
                        break 'outer;
                    }
                }
            }
        }
    }

    Ok(RunOutput {
        factors: FactorSet::from_factors(u)?,
        iterations,
        converged,
        trace,
        regularized: false,
    })
}

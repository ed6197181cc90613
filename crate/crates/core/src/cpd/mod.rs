//! Canonical polyadic decomposition of a [`Tensor3`].
//!
//! Two solvers share one options/result surface: alternating least squares
//! ([`cpd_als`]) and a Levenberg–Marquardt damped Gauss–Newton method
//! ([`cpd_gn`]). Both run `n_starts` seeded random initializations and keep
//! the start with the best fit (ties go to the lower start index), then
//! return factors in the [`FactorSet::normalized`] convention.

mod als;
mod fms;
mod gn;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::tensor::{relative_error, Tensor3};

pub use als::als_from;
pub use fms::factor_match_score;
pub use gn::{gn_from, normal_matrix, normal_matvec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Als,
    Gn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdOptions {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once `|fit_k − fit_{k−1}| < tol · max(fit_k, 1e-12)`.
    pub tol: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub solver: Solver,
    /// Initial LM damping, relative to the mean diagonal of JᵀJ.
    pub gn_damping_init: f64,
}

impl Default for CpdOptions {
    fn default() -> Self {
        Self {
            rank: 3,
            max_iters: 500,
            tol: 1e-8,
            n_starts: 5,
            seed: 0,
            solver: Solver::Gn,
            gn_damping_init: 1e-2,
        }
    }
}

impl CpdOptions {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("CPD rank must be at least 1"));
        }
        let [ne, ns, nf] = dims;
        let bound = (ns * nf).min(ne * nf).min(ne * ns);
        if self.rank > bound {
            return Err(invalid(format!(
                "rank {} exceeds the smallest unfolding width {bound} for dims {dims:?}",
                self.rank
            )));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol must be positive"));
        }
        if self.n_starts == 0 {
            return Err(invalid("n_starts must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        if !(self.gn_damping_init > 0.0) {
            return Err(invalid("gn_damping_init must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdResult {
    pub factors: FactorSet,
    pub rel_error: f64,
    pub fit: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Relative error at the initialization and after every accepted iteration.
    pub trace: Vec<f64>,
    /// The ALS normal equations needed Tikhonov regularization at least once.
    pub regularized: bool,
    pub solver: Solver,
    pub start: usize,
    pub start_seed: u64,
}

impl CpdResult {
    /// Serializable run record: the options used plus everything but the factors.
    pub fn metadata(&self, opts: &CpdOptions) -> CpdRunMetadata {
        CpdRunMetadata {
            options: opts.clone(),
            solver: self.solver,
            start: self.start,
            start_seed: self.start_seed,
            rel_error: self.rel_error,
            fit: self.fit,
            iterations: self.iterations,
            converged: self.converged,
            regularized: self.regularized,
            trace: self.trace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdRunMetadata {
    pub options: CpdOptions,
    pub solver: Solver,
    pub start: usize,
    pub start_seed: u64,
    pub rel_error: f64,
    pub fit: f64,
    pub iterations: usize,
    pub converged: bool,
    pub regularized: bool,
    pub trace: Vec<f64>,
}

/// Raw optimizer state before normalization and final error evaluation.
pub(crate) struct RunOutput {
    pub factors: FactorSet,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
    pub regularized: bool,
}

pub(crate) fn finish(
    t: &Tensor3,
    run: RunOutput,
    solver: Solver,
    start: usize,
    start_seed: u64,
) -> Result<CpdResult> {
    let factors = run.factors.normalized();
    let rel_error = relative_error(t, &factors)?;
    Ok(CpdResult {
        factors,
        rel_error,
        fit: 1.0 - rel_error * rel_error,
        iterations: run.iterations,
        converged: run.converged,
        trace: run.trace,
        regularized: run.regularized,
        solver,
        start,
        start_seed,
    })
}

/// Splitmix64-style mixing of a base seed with a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut z = base;
    for &p in path {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// I.i.d. uniform(0,1) factor matrices with unit lambda.
pub fn random_init(dims: [usize; 3], rank: usize, seed: u64) -> FactorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |n: usize| DMatrix::from_fn(n, rank, |_, _| rng.random::<f64>());
    let factors = [m(dims[0]), m(dims[1]), m(dims[2])];
    FactorSet::new(DVector::from_element(rank, 1.0), factors).expect("valid random init")
}

fn check_tensor(t: &Tensor3, opts: &CpdOptions) -> Result<()> {
    opts.validate(t.dims())?;
    if t.norm() == 0.0 {
        return Err(invalid("cannot decompose a zero-norm tensor"));
    }
    Ok(())
}

fn multi_start<F>(t: &Tensor3, opts: &CpdOptions, run: F) -> Result<CpdResult>
where
    F: Fn(&FactorSet, u64, usize) -> Result<CpdResult> + Sync,
{
    check_tensor(t, opts)?;
    let results: Vec<Result<CpdResult>> = (0..opts.n_starts)
        .into_par_iter()
        .map(|start| {
            let seed = derive_seed(opts.seed, &[start as u64]);
            let init = random_init(t.dims(), opts.rank, seed);
            run(&init, seed, start)
        })
        .collect();
    let mut best: Option<CpdResult> = None;
    for r in results {
        let r = r?;
        if best.as_ref().is_none_or(|b| r.fit > b.fit) {
            best = Some(r);
        }
    }
    Ok(best.expect("n_starts >= 1"))
}

/// Best-of-`n_starts` ALS fit.
pub fn cpd_als(t: &Tensor3, opts: &CpdOptions) -> Result<CpdResult> {
    multi_start(t, opts, |init, seed, start| {
        let run = als::run(t, init, opts)?;
        finish(t, run, Solver::Als, start, seed)
    })
}

/// Best-of-`n_starts` Levenberg–Marquardt fit.
pub fn cpd_gn(t: &Tensor3, opts: &CpdOptions) -> Result<CpdResult> {
    multi_start(t, opts, |init, seed, start| {
        let run = gn::run(t, init, opts)?;
        finish(t, run, Solver::Gn, start, seed)
    })
}

/// Dispatches on `opts.solver`.
pub fn cpd(t: &Tensor3, opts: &CpdOptions) -> Result<CpdResult> {
    match opts.solver {
        Solver::Als => cpd_als(t, opts),
        Solver::Gn => cpd_gn(t, opts),
    }
}

/// Hadamard product of the Gram matrices of every mode except those in `skip`.
pub(crate) fn gram_hadamard(grams: &[DMatrix<f64>; 3], skip: &[usize]) -> DMatrix<f64> {
    let r = grams[0].nrows();
    let mut out = DMatrix::from_element(r, r, 1.0);
    for (m, g) in grams.iter().enumerate() {
        if !skip.contains(&m) {
            out.component_mul_assign(g);
        }
    }
    out
}

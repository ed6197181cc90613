//! DIFFIT rank selection over repeated randomized ALS sweeps.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{als_from, cpd_als, derive_seed, random_init, CpdOptions, Solver};
use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::tensor::Tensor3;

/// Guard for the DIFFIT denominator.
pub const DIFFIT_EPS: f64 = 1e-12;
/// Candidate ranks must explain more than this fraction of the top fit.
pub const SALIENCE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffitOptions {
    pub r_max: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// Per-fit ALS settings; `rank`, `seed` and `solver` are overridden.
    pub cpd: CpdOptions,
}

impl Default for DiffitOptions {
    fn default() -> Self {
        Self {
            r_max: 6,
            n_runs: 30,
            seed: 0,
            cpd: CpdOptions {
                solver: Solver::Als,
                n_starts: 3,
                tol: 1e-7,
                max_iters: 300,
                ..CpdOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub r_max: usize,
    pub n_runs: usize,
    pub seed: u64,
    /// `fits[run][r-1]` is the best fit at rank `r`, non-decreasing in `r`.
    pub fits: Vec<Vec<f64>>,
    /// `diffit[run][r-1]` for `r = 1..r_max-1`.
    pub diffit: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
    /// `histogram[r-1]` counts runs choosing rank `r`, for `r = 1..r_max-1`.
    pub histogram: Vec<usize>,
    pub modal_rank: usize,
    /// `(run, rank)` fits that fell below the previous rank and were refit
    /// from the lower-rank solution.
    pub warm_started: Vec<(usize, usize)>,
}

impl RankReport {
    pub fn write_histogram(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rank", "count"])?;
        for (i, c) in self.histogram.iter().enumerate() {
            w.write_record([(i + 1).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// DIFFIT scores and the selected rank for one run's fits `f_1..f_rmax`.
///
/// `DIF_1 = f_1`, `DIF_r = f_r − f_{r−1}` and
/// `DIFFIT_r = DIF_r / max(DIF_{r+1}, ε)` for `r < r_max`. The choice is the
/// maximizer among ranks with `DIF_r > 0.01 · f_rmax` (smallest on ties).
pub fn diffit_scores(fits: &[f64]) -> Result<(Vec<f64>, usize)> {
    let r_max = fits.len();
    if r_max < 3 {
        return Err(invalid(format!("DIFFIT needs r_max >= 3, got {r_max}")));
    }
    let dif: Vec<f64> = (0..r_max)
        .map(|i| {
            if i == 0 {
                fits[0]
            } else {
                fits[i] - fits[i - 1]
            }
        })
        .collect();
    let scores: Vec<f64> = (0..r_max - 1)
        .map(|i| dif[i] / dif[i + 1].max(DIFFIT_EPS))
        .collect();
    let floor = SALIENCE_FLOOR * fits[r_max - 1];
    let mut best: Option<usize> = None;
    for i in 0..r_max - 1 {
        if dif[i] > floor && best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    Ok((scores, best.unwrap_or(0) + 1))
}

/// One run: best-of-starts ALS fits for ranks `1..=r_max`.
fn sweep(t: &Tensor3, opts: &DiffitOptions, run: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut fits = Vec::with_capacity(opts.r_max);
    let mut warm = Vec::new();
    let mut prev: Option<FactorSet> = None;
    for rank in 1..=opts.r_max {
        let cpd_opts = CpdOptions {
            rank,
            seed: derive_seed(opts.seed, &[run as u64, rank as u64]),
            solver: Solver::Als,
            ..opts.cpd.clone()
        };
        let mut res = cpd_als(t, &cpd_opts)?;
        if let (Some(p), Some(&f_prev)) = (&prev, fits.last()) {
            if res.fit < f_prev {
                // Extend the lower-rank solution by a zero-weight random column:
                // the starting model equals the previous one and ALS cannot lose fit.
                let extra = random_init(t.dims(), 1, derive_seed(cpd_opts.seed, &[u64::MAX]));
                let init = append_column(p, &extra)?;
                let refit = als_from(
                    t,
                    &init,
                    &CpdOptions {
                        n_starts: 1,
                        ..cpd_opts
                    },
                )?;
                if refit.fit > res.fit {
                    res = refit;
                }
                warm.push(rank);
            }
        }
        let f = fits.last().map_or(res.fit, |&p: &f64| res.fit.max(p));
        fits.push(f);
        prev = Some(res.factors);
    }
    Ok((fits, warm))
}

fn append_column(fs: &FactorSet, extra: &FactorSet) -> Result<FactorSet> {
    let r = fs.rank();
    let grow = |m: &DMatrix<f64>, e: &DMatrix<f64>| {
        let mut out = m.clone().resize_horizontally(r + 1, 0.0);
        out.set_column(r, &e.column(0));
        out
    };
    let mut lambda = fs.lambda().clone().resize_vertically(r + 1, 0.0);
    lambda[r] = 0.0;
    let [a, b, c] = fs.factors();
    let [ea, eb, ec] = extra.factors();
    FactorSet::new(
        DVector::from(lambda),
        [grow(a, ea), grow(b, eb), grow(c, ec)],
    )
}

pub fn diffit_with(t: &Tensor3, opts: &DiffitOptions) -> Result<RankReport> {
    if opts.r_max < 3 {
        return Err(invalid(format!(
            "DIFFIT needs r_max >= 3, got {}",
            opts.r_max
        )));
    }
    if opts.n_runs == 0 {
        return Err(invalid("DIFFIT needs at least one run"));
    }
    let runs = (0..opts.n_runs)
        .into_par_iter()
        .map(|run| sweep(t, opts, run))
        .collect::<Result<Vec<_>>>()?;

    let mut fits = Vec::with_capacity(opts.n_runs);
    let mut diffit = Vec::with_capacity(opts.n_runs);
    let mut chosen = Vec::with_capacity(opts.n_runs);
    let mut warm_started = Vec::new();
    let mut histogram = vec![0usize; opts.r_max - 1];
    for (run, (f, warm)) in runs.into_iter().enumerate() {
        let (scores, pick) = diffit_scores(&f)?;
        histogram[pick - 1] += 1;
        fits.push(f);
        diffit.push(scores);
        chosen.push(pick);
        warm_started.extend(warm.into_iter().map(|r| (run, r)));
    }
    let modal_rank = histogram
        .iter()
        .enumerate()
        .fold(
            (0, 0),
            |(bi, bc), (i, &c)| if c > bc { (i, c) } else { (bi, bc) },
        )
        .0
        + 1;
    Ok(RankReport {
        r_max: opts.r_max,
        n_runs: opts.n_runs,
        seed: opts.seed,
        fits,
        diffit,
        chosen,
        histogram,
        modal_rank,
        warm_started,
    })
}

/// DIFFIT with default ALS settings.
pub fn diffit(t: &Tensor3, r_max: usize, n_runs: usize, seed: u64) -> Result<RankReport> {
    diffit_with(
        t,
        &DiffitOptions {
            r_max,
            n_runs,
            seed,
            ..DiffitOptions::default()
        },
    )
}

//! CPD factor sets: per-mode factor matrices plus column scales.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

/// Rank-`r` CPD model `Σ_i λ_i · a_i ⊗ b_i ⊗ c_i`.
///
/// `factors[0]` is the `E × r` epoch matrix A, `factors[1]` the `S × r`
/// spatial matrix B and `factors[2]` the `F × r` spectral matrix C.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    lambda: DVector<f64>,
    factors: [DMatrix<f64>; 3],
}

impl FactorSet {
    pub fn new(lambda: DVector<f64>, factors: [DMatrix<f64>; 3]) -> Result<Self> {
        let rank = lambda.len();
        if rank == 0 {
            return Err(invalid("factor set rank must be at least 1"));
        }
        for (mode, m) in factors.iter().enumerate() {
            if m.ncols() != rank {
                return Err(invalid(format!(
                    "factor matrix {mode} has {} columns, lambda has {rank}",
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!(
                    "factor matrix {mode} has non-finite entries"
                )));
            }
        }
        if lambda.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("lambda entries must be finite and nonnegative"));
        }
        Ok(Self { lambda, factors })
    }

    /// Wraps unscaled factors with unit lambda.
    pub fn from_factors(factors: [DMatrix<f64>; 3]) -> Result<Self> {
        let rank = factors[0].ncols();
        Self::new(DVector::from_element(rank, 1.0), factors)
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.factors[0].nrows(),
            self.factors[1].nrows(),
            self.factors[2].nrows(),
        ]
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn factors(&self) -> &[DMatrix<f64>; 3] {
        &self.factors
    }

    pub fn epoch(&self) -> &DMatrix<f64> {
        &self.factors[0]
    }

    pub fn spatial(&self) -> &DMatrix<f64> {
        &self.factors[1]
    }

    pub fn spectral(&self) -> &DMatrix<f64> {
        &self.factors[2]
    }

    pub(crate) fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        if self.dims() != dims {
            return Err(invalid(format!(
                "factor dims {:?} do not match tensor dims {:?}",
                self.dims(),
                dims
            )));
        }
        Ok(())
    }

    /// Canonical form: unit-norm columns with all scale in lambda, the
    /// largest-magnitude entry of every spatial and spectral column positive
    /// (the epoch column absorbs the flips), columns sorted by descending
    /// lambda with ties kept in original order. Zero columns stay zero with
    /// `λ = 0`.
    pub fn normalized(&self) -> Self {
        let rank = self.rank();
        let mut lambda = self.lambda.clone();
        let mut factors = self.factors.clone();
        for k in 0..rank {
            for m in &mut factors {
                let n = m.column(k).norm();
                if n > 0.0 {
                    m.column_mut(k).scale_mut(1.0 / n);
                    lambda[k] *= n;
                } else {
                    lambda[k] = 0.0;
                }
            }
            if lambda[k] == 0.0 {
                for m in &mut factors {
                    m.column_mut(k).fill(0.0);
                }
                continue;
            }
            for mode in [1, 2] {
                if max_abs_entry(factors[mode].column(k).as_slice()) < 0.0 {
                    factors[mode].column_mut(k).neg_mut();
                    factors[0].column_mut(k).neg_mut();
                }
            }
        }
        let mut order: Vec<usize> = (0..rank).collect();
        order.sort_by(|&i, &j| lambda[j].total_cmp(&lambda[i]));
        Self {
            lambda: DVector::from_iterator(rank, order.iter().map(|&i| lambda[i])),
            factors: factors.map(|m| m.select_columns(order.iter())),
        }
    }

    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.rank()];
        if order.len() != self.rank()
            || order
                .iter()
                .any(|&i| i >= seen.len() || std::mem::replace(&mut seen[i], true))
        {
            return Err(invalid("column order must be a permutation of 0..rank"));
        }
        Ok(Self {
            lambda: DVector::from_iterator(order.len(), order.iter().map(|&i| self.lambda[i])),
            factors: self.factors.clone().map(|m| m.select_columns(order.iter())),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FactorSetJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let j: FactorSetJson = serde_json::from_str(s)?;
        j.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 over lambda and the factor entries, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for d in self.dims() {
            h.update((d as u64).to_le_bytes());
        }
        for v in self
            .lambda
            .iter()
            .chain(self.factors.iter().flat_map(|m| m.iter()))
        {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Entry with the largest magnitude; the first one wins ties.
fn max_abs_entry(col: &[f64]) -> f64 {
    col.iter().copied().fold(
        0.0f64,
        |best, v| if v.abs() > best.abs() { v } else { best },
    )
}

/// On-disk JSON shape; matrices are row-major nested arrays.
#[derive(Serialize, Deserialize)]
pub struct FactorSetJson {
    pub rank: usize,
    pub lambda: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], rank: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != rank) {
        return Err(invalid(format!(
            "matrix {name} rows must have {rank} entries"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        rank,
        rows.iter().flatten().copied(),
    ))
}

impl From<&FactorSet> for FactorSetJson {
    fn from(fs: &FactorSet) -> Self {
        Self {
            rank: fs.rank(),
            lambda: fs.lambda.iter().copied().collect(),
            a: rows(&fs.factors[0]),
            b: rows(&fs.factors[1]),
            c: rows(&fs.factors[2]),
        }
    }
}

impl TryFrom<FactorSetJson> for FactorSet {
    type Error = crate::Error;

    fn try_from(j: FactorSetJson) -> Result<Self> {
        if j.lambda.len() != j.rank {
            return Err(invalid("lambda length does not match rank"));
        }
        FactorSet::new(
            DVector::from_vec(j.lambda),
            [
                from_rows(&j.a, j.rank, "A")?,
                from_rows(&j.b, j.rank, "B")?,
                from_rows(&j.c, j.rank, "C")?,
            ],
        )
    }
}

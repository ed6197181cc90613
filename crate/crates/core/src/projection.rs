//! Coordinates of new spectra in a decomposition's spatiospectral basis.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::preprocess::EpochSpectrum;

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;

/// `(S·F) × r` basis with column `i = vec(s_i ⊗ f_i)` (row `s·F + f`) and
/// its pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    matrix: DMatrix<f64>,
    pinv: DMatrix<f64>,
    rank_used: usize,
    source: String,
}

impl ProjectionBasis {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// Numerical rank of the basis.
    pub fn rank_used(&self) -> usize {
        self.rank_used
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank_used < self.rank()
    }

    /// Fingerprint of the factor set the basis was built from.
    pub fn source(&self) -> &str {
        &self.source
    }
}

pub fn build_basis(fs: &FactorSet) -> Result<ProjectionBasis> {
    let r = fs.rank();
    if r == 0 {
        return Err(invalid("basis needs at least one component"));
    }
    let (b, c) = (fs.spatial(), fs.spectral());
    let nf = c.nrows();
    let matrix = DMatrix::from_fn(b.nrows() * nf, r, |row, i| {
        b[(row / nf, i)] * c[(row % nf, i)]
    });
    let svd = matrix.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = PINV_CUTOFF * smax;
    let rank_used = svd
        .singular_values
        .iter()
        .filter(|s| **s > eps && **s > 0.0)
        .count();
    let pinv = if rank_used == 0 {
        DMatrix::zeros(r, matrix.nrows())
    } else {
        svd.pseudo_inverse(eps)
            .map_err(|e| invalid(e.to_string()))?
    };
    if rank_used < r {
        log::warn!("projection basis is rank deficient: {rank_used} of {r} components independent");
    }
    Ok(ProjectionBasis {
        matrix,
        pinv,
        rank_used,
        source: fs.fingerprint(),
    })
}

/// Coordinates of one epoch; they carry the decomposition's lambda scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub subject_id: String,
    pub recording_id: String,
    pub epoch_index: usize,
}

/// `pinv · v` for a row-major vectorized spectrum `v`.
pub fn project_vec(basis: &ProjectionBasis, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != basis.matrix.nrows() {
        return Err(invalid(format!(
            "spectrum has {} values, basis expects {}",
            v.len(),
            basis.matrix.nrows()
        )));
    }
    let w = &basis.pinv * DVector::from_column_slice(v);
    Ok(w.iter().copied().collect())
}

pub fn project(basis: &ProjectionBasis, x: &EpochSpectrum) -> Result<WeightVector> {
    Ok(WeightVector {
        w: project_vec(basis, x.psd())?,
        subject_id: x.subject_id().to_string(),
        recording_id: x.recording_id().to_string(),
        epoch_index: x.index(),
    })
}

/// Weights CSV: `subject_id,recording_id,epoch_index,w1..wr`.
pub fn write_weights(path: impl AsRef<Path>, rows: &[WeightVector]) -> Result<()> {
    let r = rows.first().map_or(0, |w| w.w.len());
    if rows.iter().any(|w| w.w.len() != r) {
        return Err(invalid("weight vectors must share one length"));
    }
    let mut out = csv::Writer::from_path(path)?;
    let mut header = vec![
        "subject_id".to_string(),
        "recording_id".into(),
        "epoch_index".into(),
    ];
    header.extend((1..=r).map(|i| format!("w{i}")));
    out.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.subject_id.clone(),
            row.recording_id.clone(),
            row.epoch_index.to_string(),
        ];
        rec.extend(row.w.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads any `subject_id,recording_id,epoch_index,<features...>` CSV (weights or PIB).
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<WeightVector>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let header = rd.headers()?.clone();
    if header.len() < 4
        || &header[0] != "subject_id"
        || &header[1] != "recording_id"
        || &header[2] != "epoch_index"
    {
        return Err(invalid(
            "feature CSV must start with subject_id,recording_id,epoch_index",
        ));
    }
    let names = header.iter().skip(3).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| invalid(format!("non-numeric feature {:?} in column {i}", &rec[i])))
        };
        rows.push(WeightVector {
            subject_id: rec[0].to_string(),
            recording_id: rec[1].to_string(),
            epoch_index: rec[2]
                .parse()
                .map_err(|_| invalid(format!("bad epoch_index {:?}", &rec[2])))?,
            w: (3..rec.len()).map(parse).collect::<Result<_>>()?,
        });
    }
    Ok((names, rows))
}

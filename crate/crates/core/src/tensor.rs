//! Dense third-order tensors and the multilinear kernels used by the CPD solvers.
//!
//! Storage is row-major: entry `(e, s, f)` lives at `e·S·F + s·F + f`, so one
//! epoch's `S × F` spectrum is a contiguous slice.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::factors::FactorSet;

/// Dense `E × S × F` array of finite doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    data: Vec<f64>,
    dims: [usize; 3],
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| invalid("tensor dimensions overflow"))?;
        if data.len() != len {
            return Err(invalid(format!(
                "tensor data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!(
                "non-finite tensor entry at flat index {i}"
            )));
        }
        Ok(Self { data, dims })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
            dims,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, e: usize, s: usize, f: usize) -> f64 {
        let [_, ns, nf] = self.dims;
        self.data[e * ns * nf + s * nf + f]
    }

    /// The `S × F` slab of epoch `e`, row-major.
    pub fn slice(&self, e: usize) -> &[f64] {
        let sf = self.dims[1] * self.dims[2];
        &self.data[e * sf..(e + 1) * sf]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * c).collect(),
            dims: self.dims,
        }
    }

    /// Mode-n matricization.
    ///
    /// Mode 0 is `E × (S·F)` with column `s·F + f`, mode 1 is `S × (E·F)` with
    /// column `e·F + f`, mode 2 is `F × (E·S)` with column `e·S + s`.
    pub fn unfold(&self, mode: usize) -> Result<DMatrix<f64>> {
        let [ne, ns, nf] = self.dims;
        let (rows, cols) = unfolded_shape(self.dims, mode)?;
        let mut m = DMatrix::zeros(rows, cols);
        for e in 0..ne {
            for s in 0..ns {
                for f in 0..nf {
                    let v = self.get(e, s, f);
                    match mode {
                        0 => m[(e, s * nf + f)] = v,
                        1 => m[(s, e * nf + f)] = v,
                        _ => m[(f, e * ns + s)] = v,
                    }
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &DMatrix<f64>, mode: usize, dims: [usize; 3]) -> Result<Self> {
        let (rows, cols) = unfolded_shape(dims, mode)?;
        if m.nrows() != rows || m.ncols() != cols {
            return Err(invalid(format!(
                "cannot fold a {}×{} matrix along mode {mode} into {dims:?}",
                m.nrows(),
                m.ncols()
            )));
        }
        let [ne, ns, nf] = dims;
        let mut data = Vec::with_capacity(ne * ns * nf);
        for e in 0..ne {
            for s in 0..ns {
                for f in 0..nf {
                    data.push(match mode {
                        0 => m[(e, s * nf + f)],
                        1 => m[(s, e * nf + f)],
                        _ => m[(f, e * ns + s)],
                    });
                }
            }
        }
        Tensor3::new(dims, data)
    }

    /// Binary layout: three little-endian `u64` dims, then `E·S·F` little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for d in self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header)?;
        let mut dims = [0usize; 3];
        for (i, d) in dims.iter_mut().enumerate() {
            let raw = u64::from_le_bytes(header[i * 8..(i + 1) * 8].try_into().unwrap());
            *d = usize::try_from(raw).map_err(|_| invalid("tensor dimension too large"))?;
        }
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8).map(|_| n))
            .ok_or_else(|| invalid("tensor dimensions overflow"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != len * 8 {
            return Err(invalid(format!(
                "tensor file holds {} payload bytes, dims {:?} need {}",
                bytes.len(),
                dims,
                len * 8
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor3::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn unfolded_shape(dims: [usize; 3], mode: usize) -> Result<(usize, usize)> {
    let [ne, ns, nf] = dims;
    match mode {
        0 => Ok((ne, ns * nf)),
        1 => Ok((ns, ne * nf)),
        2 => Ok((nf, ne * ns)),
        _ => Err(invalid(format!("mode must be 0, 1 or 2, got {mode}"))),
    }
}

/// Column-wise Kronecker product; row `i·n + k` of column `j` is `m[i,j]·n[k,j]`.
pub fn khatri_rao(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != n.ncols() {
        return Err(invalid(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            m.ncols(),
            n.ncols()
        )));
    }
    let (rm, rn) = (m.nrows(), n.nrows());
    Ok(DMatrix::from_fn(rm * rn, m.ncols(), |row, j| {
        m[(row / rn, j)] * n[(row % rn, j)]
    }))
}

/// Matricized tensor times Khatri-Rao product of the other two factors.
///
/// Equivalent to `unfold(t, mode) · KR(other factors)` with the pairings
/// KR(B,C), KR(A,C), KR(A,B) for modes 0, 1, 2; `lambda` is ignored. The
/// Khatri-Rao matrix is never formed.
pub fn mttkrp(t: &Tensor3, fs: &FactorSet, mode: usize) -> Result<DMatrix<f64>> {
    fs.check_dims(t.dims())?;
    if mode > 2 {
        return Err(invalid(format!("mode must be 0, 1 or 2, got {mode}")));
    }
    Ok(mttkrp_raw(t, fs.factors(), mode))
}

pub(crate) fn mttkrp_raw(t: &Tensor3, factors: &[DMatrix<f64>; 3], mode: usize) -> DMatrix<f64> {
    let [ne, ns, nf] = t.dims();
    let rank = factors[0].ncols();
    let [a, b, c] = factors;
    let mut out = DMatrix::zeros(t.dims()[mode], rank);
    let mut tmp = vec![0.0; rank];
    for e in 0..ne {
        for s in 0..ns {
            let row = &t.data[(e * ns + s) * nf..(e * ns + s + 1) * nf];
            match mode {
                0 | 1 => {
                    for (k, tk) in tmp.iter_mut().enumerate() {
                        let ck = c.column(k);
                        *tk = dot(row, ck.as_slice());
                    }
                    for (k, tk) in tmp.iter().enumerate() {
                        if mode == 0 {
                            out[(e, k)] += b[(s, k)] * tk;
                        } else {
                            out[(s, k)] += a[(e, k)] * tk;
                        }
                    }
                }
                _ => {
                    for k in 0..rank {
                        let coef = a[(e, k)] * b[(s, k)];
                        let mut col = out.column_mut(k);
                        for (o, x) in col.as_mut_slice().iter_mut().zip(row) {
                            *o += coef * x;
                        }
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Full tensor of a factor set: `Σ_i λ_i · a_i ⊗ b_i ⊗ c_i`.
pub fn reconstruct(fs: &FactorSet) -> Tensor3 {
    let dims = fs.dims();
    let [ne, ns, nf] = dims;
    let [a, b, c] = fs.factors();
    let lambda = fs.lambda();
    let mut data = vec![0.0; ne * ns * nf];
    let mut coef = vec![0.0; fs.rank()];
    for e in 0..ne {
        for s in 0..ns {
            for (k, ck) in coef.iter_mut().enumerate() {
                *ck = lambda[k] * a[(e, k)] * b[(s, k)];
            }
            let row = &mut data[(e * ns + s) * nf..(e * ns + s + 1) * nf];
            for (k, ck) in coef.iter().enumerate() {
                for (r, cf) in row.iter_mut().zip(c.column(k).iter()) {
                    *r += ck * cf;
                }
            }
        }
    }
    Tensor3 { data, dims }
}

/// Squared Frobenius distance between `t` and the model, computed entrywise.
pub(crate) fn residual_sq(t: &Tensor3, fs: &FactorSet) -> f64 {
    let model = reconstruct(fs);
    t.data
        .iter()
        .zip(&model.data)
        .map(|(x, m)| (x - m) * (x - m))
        .sum()
}

/// `‖t − reconstruct(fs)‖_F / ‖t‖_F`. The DIFFIT fit is `1 − relative_error²`.
pub fn relative_error(t: &Tensor3, fs: &FactorSet) -> Result<f64> {
    fs.check_dims(t.dims())?;
    let norm = t.norm();
    if norm == 0.0 {
        return Err(invalid("relative error undefined for a zero-norm tensor"));
    }
    Ok(residual_sq(t, fs).sqrt() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn iota(dims: [usize; 3]) -> Tensor3 {
        let n = dims[0] * dims[1] * dims[2];
        Tensor3::new(dims, (0..n).map(|v| v as f64).collect()).unwrap()
    }

    fn random_tensor(dims: [usize; 3], rng: &mut ChaCha8Rng) -> Tensor3 {
        let n = dims[0] * dims[1] * dims[2];
        Tensor3::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_bad_length_and_nan() {
        assert!(Tensor3::new([2, 2, 2], vec![0.0; 7]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f64::NAN;
        assert!(Tensor3::new([2, 2, 2], d).is_err());
    }

    #[test]
    fn unfold_layouts() {
        let t = iota([2, 2, 2]);
        let m0 = t.unfold(0).unwrap();
        assert_eq!(
            m0.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0, 3.0]
        );
        let m2 = t.unfold(2).unwrap();
        assert_eq!(
            m2.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 2.0, 4.0, 6.0]
        );
        let m1 = t.unfold(1).unwrap();
        assert_eq!(
            m1.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 4.0, 5.0]
        );
        assert!(t.unfold(3).is_err());
    }

    #[test]
    fn unfold_preserves_energy_and_folds_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor([3, 4, 5], &mut rng);
        for mode in 0..3 {
            let m = t.unfold(mode).unwrap();
            let ss: f64 = m.iter().map(|v| v * v).sum();
            let direct: f64 = t.data().iter().map(|v| v * v).sum();
            assert!((ss - direct).abs() <= 1e-12 * direct);
            assert_eq!(Tensor3::fold(&m, mode, t.dims()).unwrap(), t);
        }
    }

    #[test]
    fn khatri_rao_hand_example() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let n = DMatrix::from_row_slice(2, 1, &[3.0, 4.0]);
        let kr = khatri_rao(&m, &n).unwrap();
        assert_eq!(kr.as_slice(), &[3.0, 4.0, 6.0, 8.0]);
        let bad = DMatrix::<f64>::zeros(2, 2);
        assert!(khatri_rao(&m, &bad).is_err());
    }

    #[test]
    fn khatri_rao_identity_columns() {
        let i = DMatrix::<f64>::identity(2, 2);
        let kr = khatri_rao(&i, &i).unwrap();
        // column j is e_j ⊗ e_j
        assert_eq!(kr.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kr.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn khatri_rao_gram_is_hadamard_of_grams() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_matrix(4, 3, &mut rng);
        let n = random_matrix(4, 3, &mut rng);
        let kr = khatri_rao(&m, &n).unwrap();
        let lhs = kr.transpose() * &kr;
        // oracle: explicit sums over rows
        for p in 0..3 {
            for q in 0..3 {
                let mut mm = 0.0;
                let mut nn = 0.0;
                for i in 0..4 {
                    mm += m[(i, p)] * m[(i, q)];
                    nn += n[(i, p)] * n[(i, q)];
                }
                assert!((lhs[(p, q)] - mm * nn).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mttkrp_ones() {
        let t = Tensor3::new([2, 2, 2], vec![1.0; 8]).unwrap();
        let ones = DMatrix::from_element(2, 1, 1.0);
        let fs = FactorSet::new(
            DVector::from_element(1, 1.0),
            [ones.clone(), ones.clone(), ones],
        )
        .unwrap();
        let m = mttkrp(&t, &fs, 0).unwrap();
        assert_eq!(m.as_slice(), &[4.0, 4.0]);
        let z = mttkrp(&Tensor3::zeros([2, 2, 2]), &fs, 1).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(mttkrp(&t, &fs, 3).is_err());
    }

    #[test]
    fn mttkrp_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dims in [[3, 4, 5], [6, 6, 6], [1, 5, 2]] {
            let t = random_tensor(dims, &mut rng);
            let f = [
                random_matrix(dims[0], 2, &mut rng),
                random_matrix(dims[1], 2, &mut rng),
                random_matrix(dims[2], 2, &mut rng),
            ];
            let fs = FactorSet::new(DVector::from_element(2, 1.0), f.clone()).unwrap();
            let pairs = [(1, 2), (0, 2), (0, 1)];
            for (mode, (p, q)) in pairs.into_iter().enumerate() {
                let expected = t.unfold(mode).unwrap() * khatri_rao(&f[p], &f[q]).unwrap();
                let got = mttkrp(&t, &fs, mode).unwrap();
                let scale = expected.norm().max(1e-300);
                assert!((got - expected).norm() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruct_small_and_zero() {
        let fs = FactorSet::new(
            DVector::from_element(1, 1.0),
            [
                DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
                DMatrix::from_row_slice(1, 1, &[3.0]),
            ],
        )
        .unwrap();
        assert_eq!(reconstruct(&fs).data(), &[3.0, 6.0]);
        let t = reconstruct(&fs);
        assert_eq!(relative_error(&t, &fs).unwrap(), 0.0);

        let zero = FactorSet::new(DVector::zeros(1), fs.factors().clone()).unwrap();
        assert!(reconstruct(&zero).data().iter().all(|v| *v == 0.0));
        assert_eq!(relative_error(&t, &zero).unwrap(), 1.0);
        assert!(relative_error(&Tensor3::zeros([2, 1, 1]), &fs).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let t = iota([2, 3, 4]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 24 * 8);
        assert_eq!(&buf[..8], &2u64.to_le_bytes());
        assert_eq!(Tensor3::read_from(&buf[..]).unwrap(), t);
        assert!(Tensor3::read_from(&buf[..buf.len() - 1]).is_err());
    }
}

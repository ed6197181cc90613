//! Seeded synthetic fixtures with known ground truth.
//!
//! * [`make_tensor`]: planted low-rank population tensors, optionally noisy.
//! * [`make_cohort`]: labeled subjects whose epoch spectra are class-conditional
//!   mixtures of the planted spatiospectral patterns.
//! * [`make_recording`]: 19-channel time-domain recordings for the signal chain.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::cpd::derive_seed;
use crate::edf::Recording;
use crate::error::{invalid, Result};
use crate::factors::FactorSet;
use crate::preprocess::{frequency_grid, EpochSpectrum, N_FREQS};
use crate::tensor::{reconstruct, Tensor3};
use crate::{CHANNELS, CZ_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorStyle {
    /// I.i.d. uniform(0,1) factor entries.
    Random,
    /// Three patterns on the 19-channel, 89-bin grid: frontotemporal
    /// high-frequency, diffuse low-frequency, central-posterior alpha/beta.
    Physiological,
}

/// Per-class Gaussian over component weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dims: [usize; 3],
    pub rank: usize,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub factor_style: FactorStyle,
    /// Planted column scales; defaults to `‖·‖`-balanced descending values.
    pub lambdas: Option<Vec<f64>>,
    pub class_weight_params: BTreeMap<Label, ClassWeights>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims: [200, 19, N_FREQS],
            rank: 3,
            snr_db: None,
            factor_style: FactorStyle::Random,
            lambdas: None,
            class_weight_params: default_class_weights(),
            seed: 0,
        }
    }
}

/// Class-conditional weights for the physiological patterns: AD-like
/// subjects carry more of pattern 2 (slowing) and less of pattern 3
/// (posterior alpha/beta) than CN; MCI sits in between.
pub fn default_class_weights() -> BTreeMap<Label, ClassWeights> {
    let mk = |mean: [f64; 3], std: [f64; 3]| ClassWeights {
        mean: mean.to_vec(),
        std: std.to_vec(),
    };
    BTreeMap::from([
        (Label::Cn, mk([10.0, 6.0, 14.0], [2.0, 1.0, 1.5])),
        (Label::Mci, mk([10.0, 9.0, 11.0], [2.0, 1.0, 1.5])),
        (Label::Ad, mk([10.0, 13.0, 7.0], [2.0, 1.0, 1.5])),
    ])
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(invalid("synthetic rank must be at least 1"));
        }
        if self.dims.contains(&0) {
            return Err(invalid("synthetic dims must be positive"));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(invalid(
                    "snr_db must be finite; omit it for a noiseless tensor",
                ));
            }
        }
        if self.factor_style == FactorStyle::Physiological {
            if self.dims[1] != CHANNELS.len() || self.dims[2] != N_FREQS {
                return Err(invalid(format!(
                    "physiological style needs S={} and F={N_FREQS}, got {:?}",
                    CHANNELS.len(),
                    self.dims
                )));
            }
            if self.rank != 3 {
                return Err(invalid("physiological style has exactly 3 patterns"));
            }
        }
        if let Some(l) = &self.lambdas {
            if l.len() != self.rank || l.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(invalid("lambdas must be rank positive finite values"));
            }
        }
        Ok(())
    }

    fn planted_lambdas(&self) -> Vec<f64> {
        if let Some(l) = &self.lambdas {
            return l.clone();
        }
        // descending, largest/smallest = 2, scaled to unit RMS entry for a single component
        let scale = ((self.dims[0] * self.dims[1] * self.dims[2]) as f64).sqrt();
        let r = self.rank as f64;
        (0..self.rank)
            .map(|i| scale * (1.0 - 0.5 * i as f64 / r.max(1.0)))
            .collect()
    }
}

/// Approximate 2-D scalp positions (x to the right ear, y to the nose) of
/// [`CHANNELS`] on the unit disc.
pub const ELECTRODE_POSITIONS: [(f64, f64); 19] = [
    (-0.309, 0.951),
    (-0.384, 0.492),
    (-0.809, 0.588),
    (-0.5, 0.0),
    (-1.0, 0.0),
    (-0.384, -0.492),
    (-0.809, -0.588),
    (-0.309, -0.951),
    (0.309, 0.951),
    (0.384, 0.492),
    (0.809, 0.588),
    (0.5, 0.0),
    (1.0, 0.0),
    (0.384, -0.492),
    (0.809, -0.588),
    (0.309, -0.951),
    (0.0, 0.5),
    (0.0, 0.0),
    (0.0, -0.5),
];

fn bump(p: (f64, f64), c: (f64, f64), sigma: f64) -> f64 {
    let d2 = (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
    (-d2 / (sigma * sigma)).exp()
}

fn gauss(x: f64, mu: f64, w: f64) -> f64 {
    (-((x - mu) / w).powi(2)).exp()
}

/// Spatial (19 × 3) and spectral (89 × 3) physiological patterns, unit columns.
pub fn physiological_patterns() -> (DMatrix<f64>, DMatrix<f64>) {
    let spatial = DMatrix::from_fn(CHANNELS.len(), 3, |s, k| {
        let p = ELECTRODE_POSITIONS[s];
        match k {
            0 => 0.05 + bump(p, (-0.85, 0.4), 0.45) + bump(p, (0.85, 0.4), 0.45),
            1 => 1.0 - 0.2 * (p.0 * p.0 + p.1 * p.1),
            _ => 0.05 + bump(p, (0.0, -0.45), 0.55),
        }
    });
    let grid = frequency_grid();
    let spectral = DMatrix::from_fn(N_FREQS, 3, |f, k| {
        let x = grid[f];
        match k {
            0 => 0.02 + 1.0 / (1.0 + (-(x - 30.0) / 3.0).exp()),
            1 => gauss(x, 3.0, 2.5) + 0.3 * (-x / 6.0).exp(),
            _ => 0.02 + gauss(x, 10.0, 1.5) + 0.4 * gauss(x, 20.0, 3.0),
        }
    });
    let unit = |mut m: DMatrix<f64>| {
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            c.scale_mut(1.0 / n);
        }
        m
    };
    (unit(spatial), unit(spectral))
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// Planted tensor and its normalized ground-truth factors.
///
/// Noise is i.i.d. Gaussian rescaled so that `‖signal‖² / ‖noise‖²` equals
/// `10^(snr_db/10)` exactly.
pub fn make_tensor(spec: &SynthSpec) -> Result<(Tensor3, FactorSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let [ne, ns, nf] = spec.dims;
    let (spatial, spectral) = match spec.factor_style {
        FactorStyle::Random => (
            uniform_matrix(ns, spec.rank, &mut rng),
            uniform_matrix(nf, spec.rank, &mut rng),
        ),
        FactorStyle::Physiological => physiological_patterns(),
    };
    let epoch = uniform_matrix(ne, spec.rank, &mut rng);
    let lambda = DVector::from_vec(spec.planted_lambdas());
    let mut factors = [epoch, spatial, spectral];
    for m in &mut factors {
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            c.scale_mut(1.0 / n);
        }
    }
    let truth = FactorSet::new(lambda, factors)?.normalized();
    let signal = reconstruct(&truth);
    let data = match spec.snr_db {
        None => signal.into_data(),
        Some(snr) => {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
            let mut data = signal.into_data();
            add_scaled_noise(&mut data, snr, &mut noise_rng);
            data
        }
    };
    Ok((Tensor3::new(spec.dims, data)?, truth))
}

fn add_scaled_noise(data: &mut [f64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let noise: Vec<f64> = (0..data.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let signal_sq: f64 = data.iter().map(|v| v * v).sum();
    let noise_sq: f64 = noise.iter().map(|v| v * v).sum();
    if noise_sq == 0.0 || signal_sq == 0.0 {
        return;
    }
    let scale = (signal_sq / (10f64.powf(snr_db / 10.0) * noise_sq)).sqrt();
    for (d, n) in data.iter_mut().zip(noise) {
        *d += scale * n;
    }
}

/// A labeled synthetic cohort in the spectral domain.
#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub spectra: Vec<EpochSpectrum>,
    /// One entry per subject, in generation order.
    pub subjects: Vec<(String, Label)>,
    /// Per spectrum, the component weights it was built from.
    pub weights: Vec<Vec<f64>>,
    /// Unit-norm spatial/spectral patterns the spectra mix (lambda = 1).
    pub patterns: FactorSet,
}

/// Spectra `Σ_i w_i · s_i f_iᵀ + noise`, clipped at zero, with per-epoch
/// weights drawn from the class Gaussians in `spec.class_weight_params`
/// (negative draws clipped to zero). Subjects are named `<label>-<nnn>`.
pub fn make_cohort(
    spec: &SynthSpec,
    subjects_per_class: &BTreeMap<Label, usize>,
    epochs_per_subject: usize,
) -> Result<SynthCohort> {
    spec.validate()?;
    if spec.dims[1] != CHANNELS.len() || spec.dims[2] != N_FREQS {
        return Err(invalid("cohort spectra need S=19 and F=89"));
    }
    if epochs_per_subject == 0 {
        return Err(invalid("epochs_per_subject must be positive"));
    }
    for (label, n) in subjects_per_class {
        if *n < 2 {
            return Err(invalid(format!("class {label} needs at least 2 subjects")));
        }
        let params = spec
            .class_weight_params
            .get(label)
            .ok_or_else(|| invalid(format!("no weight parameters for class {label}")))?;
        if params.mean.len() != spec.rank || params.std.len() != spec.rank {
            return Err(invalid(format!(
                "class {label} weight parameters must have rank entries"
            )));
        }
        if params.std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(invalid(format!(
                "class {label} weight std must be nonnegative"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
    let (spatial, spectral) = match spec.factor_style {
        FactorStyle::Physiological => physiological_patterns(),
        FactorStyle::Random => {
            let mut s = uniform_matrix(spec.dims[1], spec.rank, &mut rng);
            let mut f = uniform_matrix(spec.dims[2], spec.rank, &mut rng);
            for m in [&mut s, &mut f] {
                for mut c in m.column_iter_mut() {
                    let n = c.norm();
                    c.scale_mut(1.0 / n);
                }
            }
            (s, f)
        }
    };

    let mut subjects = Vec::new();
    let mut weights = Vec::new();
    let mut clean: Vec<Vec<f64>> = Vec::new();
    let mut provenance = Vec::new();
    for (label, &count) in subjects_per_class {
        let params = &spec.class_weight_params[label];
        for j in 0..count {
            let subject = format!("{}-{:03}", label.as_str(), j);
            for epoch in 0..epochs_per_subject {
                let w: Vec<f64> = (0..spec.rank)
                    .map(|k| {
                        let d = Normal::new(params.mean[k], params.std[k]).expect("valid normal");
                        d.sample(&mut rng).max(0.0)
                    })
                    .collect();
                let mut x = vec![0.0; CHANNELS.len() * N_FREQS];
                for (k, wk) in w.iter().enumerate() {
                    for s in 0..CHANNELS.len() {
                        let a = wk * spatial[(s, k)];
                        for (f, xv) in x[s * N_FREQS..(s + 1) * N_FREQS].iter_mut().enumerate() {
                            *xv += a * spectral[(f, k)];
                        }
                    }
                }
                clean.push(x);
                weights.push(w);
                provenance.push((subject.clone(), epoch));
            }
            subjects.push((subject, *label));
        }
    }

    if let Some(snr) = spec.snr_db {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3]));
        let mut flat: Vec<f64> = clean.iter().flatten().copied().collect();
        add_scaled_noise(&mut flat, snr, &mut noise_rng);
        for (x, chunk) in clean.iter_mut().zip(flat.chunks(CHANNELS.len() * N_FREQS)) {
            x.copy_from_slice(chunk);
        }
    }
    let spectra = clean
        .into_iter()
        .zip(provenance)
        .map(|(mut x, (subject, epoch))| {
            for v in &mut x {
                *v = v.max(0.0);
            }
            EpochSpectrum::new(x, subject.clone(), subject, epoch)
        })
        .collect::<Result<Vec<_>>>()?;

    let patterns = FactorSet::new(
        DVector::from_element(spec.rank, 1.0),
        [DMatrix::from_element(1, spec.rank, 1.0), spatial, spectral],
    )?;
    Ok(SynthCohort {
        spectra,
        subjects,
        weights,
        patterns,
    })
}

/// Options for a synthetic time-domain recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordingSpec {
    pub sample_rate: f64,
    pub seconds: f64,
    /// Background white-noise standard deviation (µV).
    pub noise_std: f64,
    /// Amplitude (µV) of a 10 Hz oscillation on O1/O2, applied to `alpha_epochs`.
    pub alpha_amplitude: f64,
    pub alpha_epochs: Vec<usize>,
    /// 10-s epochs whose Cz samples are multiplied by `burst_gain`.
    pub burst_epochs: Vec<usize>,
    pub burst_gain: f64,
    pub seed: u64,
}

impl Default for RecordingSpec {
    fn default() -> Self {
        Self {
            sample_rate: 256.0,
            seconds: 60.0,
            noise_std: 10.0,
            alpha_amplitude: 30.0,
            alpha_epochs: Vec::new(),
            burst_epochs: Vec::new(),
            burst_gain: 10.0,
            seed: 0,
        }
    }
}

/// 19-channel recording: white background plus a weak 6 Hz and 20 Hz mix on
/// every channel, optional posterior alpha and Cz amplitude bursts per epoch.
pub fn make_recording(
    spec: &RecordingSpec,
    recording_id: &str,
    subject_id: &str,
) -> Result<Recording> {
    if !(spec.sample_rate > 0.0 && spec.seconds > 0.0) {
        return Err(invalid("sample_rate and seconds must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = (spec.sample_rate * spec.seconds).round() as usize;
    let epoch_len = (10.0 * spec.sample_rate).round() as usize;
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).map_err(|e| invalid(e.to_string()))?;
    let tau = std::f64::consts::TAU;
    let mut samples = DMatrix::zeros(CHANNELS.len(), n);
    for ch in 0..CHANNELS.len() {
        let phase = rng.random::<f64>() * tau;
        for i in 0..n {
            let t = i as f64 / spec.sample_rate;
            let epoch = i / epoch_len.max(1);
            let mut v = noise.sample(&mut rng)
                + 5.0 * (tau * 6.0 * t + phase).sin()
                + 3.0 * (tau * 20.0 * t + 0.5 * phase).sin();
            if (CHANNELS[ch] == "O1" || CHANNELS[ch] == "O2") && spec.alpha_epochs.contains(&epoch)
            {
                v += spec.alpha_amplitude * (tau * 10.0 * t).sin();
            }
            if ch == CZ_INDEX && spec.burst_epochs.contains(&epoch) {
                v *= spec.burst_gain;
            }
            samples[(ch, i)] = v;
        }
    }
    Recording::new(
        samples,
        spec.sample_rate,
        CHANNELS.iter().map(|s| s.to_string()).collect(),
        recording_id.to_string(),
        subject_id.to_string(),
    )
}

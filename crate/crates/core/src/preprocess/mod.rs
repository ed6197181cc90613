//! Signal chain from a raw recording to epoch spectra, the population
//! tensor, and relative band-power baseline features.

mod epochs;
mod filter;
mod welch;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edf::{select_channels, Recording};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor3;
use crate::CHANNELS;

pub use epochs::{
    epoch_and_reject, epoch_and_reject_with, select_awake_epochs, select_epochs_with, Epoch,
    EpochScorer, PosteriorAlpha,
};
pub use filter::{bandpass, BandpassFilter, Biquad, HIGHPASS_ORDER, LOWPASS_ORDER};
pub use welch::{band_power, welch, welch_channel, welch_native, MIN_SAMPLE_RATE, SEGMENT_SECONDS};

pub const GRID_START_HZ: f64 = 1.0;
pub const GRID_STEP_HZ: f64 = 0.5;
/// Number of grid frequencies, 1.0 to 45.0 Hz inclusive.
pub const N_FREQS: usize = 89;
pub const N_CHANNELS: usize = 19;

/// The fixed spectral grid shared by every recording.
pub fn frequency_grid() -> [f64; N_FREQS] {
    std::array::from_fn(|j| GRID_START_HZ + GRID_STEP_HZ * j as f64)
}

/// 19 × 89 PSD of one epoch, row-major (`s · 89 + f`).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSpectrum {
    psd: Vec<f64>,
    recording_id: String,
    subject_id: String,
    index: usize,
}

impl EpochSpectrum {
    pub fn new(
        psd: Vec<f64>,
        recording_id: String,
        subject_id: String,
        index: usize,
    ) -> Result<Self> {
        if psd.len() != N_CHANNELS * N_FREQS {
            return Err(invalid(format!(
                "spectrum has {} values, expected {N_CHANNELS}x{N_FREQS}",
                psd.len()
            )));
        }
        if psd.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("spectrum entries must be finite and nonnegative"));
        }
        Ok(Self {
            psd,
            recording_id,
            subject_id,
            index,
        })
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    pub fn channel(&self, s: usize) -> &[f64] {
        &self.psd[s * N_FREQS..(s + 1) * N_FREQS]
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Preprocessing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub epoch_seconds: f64,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub rejection_sigma: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            band_lo_hz: 0.5,
            band_hi_hz: 45.0,
            epoch_seconds: 10.0,
            min_epochs: 2,
            max_epochs: 6,
            rejection_sigma: 2.0,
        }
    }
}

/// Channel selection, band-pass, epoching with Cz rejection, awake-epoch
/// selection and Welch spectra for one recording.
pub fn process_recording(r: &Recording, opts: &PreprocessOptions) -> Result<Vec<EpochSpectrum>> {
    let r = select_channels(r, &CHANNELS)?;
    let r = bandpass(&r, opts.band_lo_hz, opts.band_hi_hz)?;
    let epochs = epoch_and_reject_with(&r, opts.epoch_seconds, opts.rejection_sigma)?;
    let epochs = select_epochs_with(
        epochs,
        opts.min_epochs,
        opts.max_epochs,
        &PosteriorAlpha::default(),
    )?;
    epochs.iter().map(welch).collect()
}

/// Where a tensor row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRow {
    pub epoch_row: usize,
    pub subject_id: String,
    pub recording_id: String,
    pub epoch_index: usize,
}

/// Stacks spectra along the epoch mode in input order.
pub fn build_tensor(spectra: &[EpochSpectrum]) -> Result<(Tensor3, Vec<ProvenanceRow>)> {
    if spectra.is_empty() {
        return Err(invalid("cannot build a tensor from zero spectra"));
    }
    let mut data = Vec::with_capacity(spectra.len() * N_CHANNELS * N_FREQS);
    let mut provenance = Vec::with_capacity(spectra.len());
    for (row, s) in spectra.iter().enumerate() {
        data.extend_from_slice(&s.psd);
        provenance.push(ProvenanceRow {
            epoch_row: row,
            subject_id: s.subject_id.clone(),
            recording_id: s.recording_id.clone(),
            epoch_index: s.index,
        });
    }
    Ok((
        Tensor3::new([spectra.len(), N_CHANNELS, N_FREQS], data)?,
        provenance,
    ))
}

/// The spectrum stored in tensor row `e`, without provenance.
pub fn spectrum_of_row(t: &Tensor3, e: usize) -> Result<EpochSpectrum> {
    if t.dims()[1..] != [N_CHANNELS, N_FREQS] || e >= t.dims()[0] {
        return Err(invalid(format!(
            "row {e} is not a spectrum of tensor {:?}",
            t.dims()
        )));
    }
    EpochSpectrum::new(t.slice(e).to_vec(), String::new(), String::new(), e)
}

pub fn write_provenance(path: impl AsRef<Path>, rows: &[ProvenanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Vec<ProvenanceRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Frequency bands of the relative band-power features.
pub const BANDS: [(&str, f64, f64); 5] = [
    ("delta", 1.0, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 25.0),
    ("gamma", 25.0, 45.0),
];

/// Number of band-power features: 19 channels × 5 bands.
pub const PIB_DIM: usize = N_CHANNELS * BANDS.len();

/// Relative band powers, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PibVector {
    pub values: Vec<f64>,
    pub recording_id: String,
    pub subject_id: String,
    pub index: usize,
}

/// Column names `<channel>_<band>` in feature order.
pub fn pib_feature_names() -> Vec<String> {
    CHANNELS
        .iter()
        .flat_map(|c| BANDS.iter().map(move |(b, _, _)| format!("{c}_{b}")))
        .collect()
}

/// Per channel, trapezoidal band power divided by the 1–45 Hz total. Grid
/// intervals belong to the band containing their left endpoint, so the five
/// bands tile the grid exactly.
pub fn pib(x: &EpochSpectrum) -> Result<PibVector> {
    let mut values = Vec::with_capacity(PIB_DIM);
    for (s, name) in CHANNELS.iter().enumerate() {
        let psd = x.channel(s);
        let bands: Vec<f64> = BANDS
            .iter()
            .map(|(_, lo, hi)| band_power(psd, *lo, *hi))
            .collect();
        let total: f64 = bands.iter().sum();
        if !(total > 0.0) {
            return Err(invalid(format!("channel {name} has zero total power")));
        }
        values.extend(bands.iter().map(|b| b / total));
    }
    Ok(PibVector {
        values,
        recording_id: x.recording_id.clone(),
        subject_id: x.subject_id.clone(),
        index: x.index,
    })
}

/// PIB CSV: `subject_id,recording_id,epoch_index,<95 feature columns>`.
pub fn write_pib(path: impl AsRef<Path>, rows: &[PibVector]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "subject_id".to_string(),
        "recording_id".into(),
        "epoch_index".into(),
    ];
    header.extend(pib_feature_names());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.subject_id.clone(),
            r.recording_id.clone(),
            r.index.to_string(),
        ];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(f: impl Fn(usize, usize) -> f64) -> EpochSpectrum {
        let psd = (0..N_CHANNELS * N_FREQS)
            .map(|i| f(i / N_FREQS, i % N_FREQS))
            .collect();
        EpochSpectrum::new(psd, "r".into(), "s".into(), 0).unwrap()
    }

    #[test]
    fn grid_spans_one_to_forty_five() {
        let g = frequency_grid();
        assert_eq!((g[0], g[N_FREQS - 1]), (1.0, 45.0));
    }

    #[test]
    fn tensor_rows_are_spectra() {
        let spectra: Vec<_> = (0..3)
            .map(|k| spectrum(move |s, f| (k * 1000 + s * 89 + f) as f64))
            .collect();
        let (t, prov) = build_tensor(&spectra).unwrap();
        assert_eq!(t.dims(), [3, 19, 89]);
        for (e, s) in spectra.iter().enumerate() {
            assert_eq!(t.slice(e), s.psd());
            assert_eq!(spectrum_of_row(&t, e).unwrap().psd(), s.psd());
            assert_eq!(prov[e].epoch_row, e);
        }
        assert!(build_tensor(&[]).is_err());
    }

    #[test]
    fn flat_spectrum_shares_follow_bandwidth() {
        let v = pib(&spectrum(|_, _| 2.0)).unwrap();
        assert_eq!(v.values.len(), 95);
        let expected = [3.0, 4.0, 5.0, 12.0, 20.0].map(|w| w / 44.0);
        for ch in v.values.chunks(5) {
            for (a, b) in ch.iter().zip(expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_channel_is_named() {
        let err = pib(&spectrum(|s, _| if s == 7 { 0.0 } else { 1.0 })).unwrap_err();
        assert!(err.to_string().contains("O1"), "{err}");
    }

    #[test]
    fn feature_names_are_channel_major() {
        let names = pib_feature_names();
        assert_eq!(names.len(), PIB_DIM);
        assert_eq!(names[0], "Fp1_delta");
        assert_eq!(names[7], "F3_alpha");
        assert_eq!(names[94], "Pz_gamma");
    }
}

use nalgebra::DMatrix;

use super::welch::welch_channel;
use crate::edf::{normalize_label, Recording};
use crate::error::{invalid, Error, Result};

/// A contiguous fixed-length segment of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    samples: DMatrix<f64>,
    sample_rate: f64,
    channel_labels: Vec<String>,
    recording_id: String,
    subject_id: String,
    index: usize,
}

impl Epoch {
    pub fn new(
        samples: DMatrix<f64>,
        sample_rate: f64,
        channel_labels: Vec<String>,
        recording_id: String,
        subject_id: String,
        index: usize,
    ) -> Result<Self> {
        if channel_labels.len() != samples.nrows() {
            return Err(invalid("epoch label count does not match channel count"));
        }
        if !(sample_rate > 0.0) {
            return Err(invalid("epoch sample rate must be positive"));
        }
        Ok(Self {
            samples,
            sample_rate,
            channel_labels,
            recording_id,
            subject_id,
            index,
        })
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn recording_id(&self) -> &str {
        &self.recording_id
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    /// Position of the epoch within its recording, counted before rejection.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn duration(&self) -> f64 {
        self.samples.ncols() as f64 / self.sample_rate
    }

    fn channel(&self, label: &str) -> Option<usize> {
        let key = normalize_label(label);
        self.channel_labels
            .iter()
            .position(|l| normalize_label(l) == key)
    }
}

/// Splits `r` into non-overlapping `epoch_seconds` epochs (a shorter tail is
/// dropped) and removes epochs whose Cz power `Σ x²` exceeds
/// `mean + sigma · std` over the recording's epochs (population std).
pub fn epoch_and_reject_with(r: &Recording, epoch_seconds: f64, sigma: f64) -> Result<Vec<Epoch>> {
    if !(epoch_seconds > 0.0) {
        return Err(invalid("epoch length must be positive"));
    }
    let len = (epoch_seconds * r.sample_rate()).round() as usize;
    if len == 0 {
        return Err(invalid("epoch shorter than one sample"));
    }
    let count = r.n_samples() / len;
    if count < 2 {
        return Err(Error::Ingest(format!(
            "recording {} yields {count} epoch(s) of {epoch_seconds} s; at least 2 are needed",
            r.recording_id()
        )));
    }
    let cz = r
        .channel_labels()
        .iter()
        .position(|l| normalize_label(l) == "CZ")
        .ok_or_else(|| {
            Error::Ingest(format!("recording {} has no Cz channel", r.recording_id()))
        })?;

    let power: Vec<f64> = (0..count)
        .map(|k| {
            r.samples()
                .row(cz)
                .columns(k * len, len)
                .iter()
                .map(|v| v * v)
                .sum()
        })
        .collect();
    let n = count as f64;
    let mean = power.iter().sum::<f64>() / n;
    let std = (power.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
    // Equal powers up to rounding would otherwise make the threshold meaningless.
    let homogeneous = std <= 1e-9 * mean.abs();
    let threshold = mean + sigma * std;

    let epochs = (0..count)
        .filter(|&k| homogeneous || power[k] <= threshold)
        .map(|k| {
            Epoch::new(
                r.samples().columns(k * len, len).into_owned(),
                r.sample_rate(),
                r.channel_labels().to_vec(),
                r.recording_id().to_string(),
                r.subject_id().to_string(),
                k,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(epochs)
}

/// [`epoch_and_reject_with`] using 10-s epochs and a 2-SD threshold.
pub fn epoch_and_reject(r: &Recording) -> Result<Vec<Epoch>> {
    epoch_and_reject_with(r, 10.0, 2.0)
}

/// Ranks epochs for the awake, eyes-closed selection; higher is better.
pub trait EpochScorer {
    fn score(&self, epoch: &Epoch) -> Result<f64>;
}

/// Mean relative 8–12 Hz power over the listed (posterior) channels.
#[derive(Debug, Clone)]
pub struct PosteriorAlpha {
    pub channels: Vec<String>,
    pub band: (f64, f64),
}

impl Default for PosteriorAlpha {
    fn default() -> Self {
        Self {
            channels: vec!["O1".into(), "O2".into()],
            band: (8.0, 12.0),
        }
    }
}

impl EpochScorer for PosteriorAlpha {
    fn score(&self, epoch: &Epoch) -> Result<f64> {
        let mut total = 0.0;
        for label in &self.channels {
            let ch = epoch.channel(label).ok_or_else(|| {
                Error::Ingest(format!(
                    "recording {} has no {label} channel",
                    epoch.recording_id()
                ))
            })?;
            let x: Vec<f64> = epoch.samples().row(ch).iter().copied().collect();
            let psd = welch_channel(&x, epoch.sample_rate())?;
            let all = super::welch::band_power(&psd, 1.0, 45.0);
            let alpha = super::welch::band_power(&psd, self.band.0, self.band.1);
            total += if all > 0.0 { alpha / all } else { 0.0 };
        }
        Ok(total / self.channels.len() as f64)
    }
}

/// Keeps the `clamp(count, min, max)` best-scoring epochs, returned in their
/// original order. Fewer than `min` candidates excludes the recording.
pub fn select_epochs_with(
    epochs: Vec<Epoch>,
    min: usize,
    max: usize,
    scorer: &dyn EpochScorer,
) -> Result<Vec<Epoch>> {
    if min == 0 || max < min {
        return Err(invalid(format!(
            "epoch bounds must satisfy 1 <= min <= max, got {min}, {max}"
        )));
    }
    if epochs.len() < min {
        let id = epochs
            .first()
            .map(|e| e.recording_id().to_string())
            .unwrap_or_default();
        return Err(Error::Ingest(format!(
            "recording {id} has {} usable epoch(s); at least {min} are needed",
            epochs.len()
        )));
    }
    let k = epochs.len().min(max);
    if k == epochs.len() {
        return Ok(epochs);
    }
    let scores = epochs
        .iter()
        .map(|e| scorer.score(e))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..epochs.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut keep = vec![false; epochs.len()];
    for &i in &order[..k] {
        keep[i] = true;
    }
    Ok(epochs
        .into_iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e)
        .collect())
}

/// Posterior-alpha selection of 2 to 6 epochs.
pub fn select_awake_epochs(epochs: Vec<Epoch>) -> Result<Vec<Epoch>> {
    select_epochs_with(epochs, 2, 6, &PosteriorAlpha::default())
}

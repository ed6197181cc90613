use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{frequency_grid, Epoch, EpochSpectrum, GRID_START_HZ, GRID_STEP_HZ, N_FREQS};
use crate::error::{invalid, Result};

/// Lowest sample rate whose Nyquist frequency covers the grid with margin.
pub const MIN_SAMPLE_RATE: f64 = 96.0;
/// Welch segment length in seconds; consecutive segments overlap by half.
pub const SEGMENT_SECONDS: f64 = 2.0;

fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided Welch PSD (units²/Hz) at the native bins `k · fs / nperseg`.
pub fn welch_native(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    let nperseg = (SEGMENT_SECONDS * fs).round() as usize;
    if nperseg < 2 || x.len() < nperseg {
        return Err(invalid(format!(
            "signal of {} samples is shorter than one {SEGMENT_SECONDS} s segment",
            x.len()
        )));
    }
    let step = nperseg - nperseg / 2;
    let window = hamming(nperseg);
    let win_sq: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::new().plan_fft_forward(nperseg);
    let n_bins = nperseg / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];
    let mut segments = 0usize;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg = &x[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((v - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * win_sq * segments as f64);
    let nyquist = if nperseg.is_multiple_of(2) {
        n_bins - 1
    } else {
        n_bins
    };
    Ok(acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            if k == 0 || k == nyquist {
                a * scale
            } else {
                2.0 * a * scale
            }
        })
        .collect())
}

/// Welch PSD of one channel, linearly interpolated onto the fixed grid.
pub fn welch_channel(x: &[f64], fs: f64) -> Result<Vec<f64>> {
    if fs < MIN_SAMPLE_RATE {
        return Err(invalid(format!(
            "sample rate {fs} Hz is below {MIN_SAMPLE_RATE} Hz; the 1-45 Hz grid is unsupported"
        )));
    }
    let native = welch_native(x, fs)?;
    let df = fs / (SEGMENT_SECONDS * fs).round();
    Ok(frequency_grid()
        .iter()
        .map(|f| {
            let pos = f / df;
            let i = pos.floor() as usize;
            let t = pos - i as f64;
            if i + 1 < native.len() {
                native[i] * (1.0 - t) + native[i + 1] * t
            } else {
                native[native.len() - 1]
            }
        })
        .collect())
}

/// Welch spectrum of every channel of an epoch.
pub fn welch(e: &Epoch) -> Result<EpochSpectrum> {
    let mut psd = Vec::with_capacity(e.samples().nrows() * N_FREQS);
    for row in e.samples().row_iter() {
        let x: Vec<f64> = row.iter().copied().collect();
        psd.extend(welch_channel(&x, e.sample_rate())?);
    }
    EpochSpectrum::new(
        psd,
        e.recording_id().to_string(),
        e.subject_id().to_string(),
        e.index(),
    )
}

/// Trapezoidal power of one channel's grid PSD over the grid intervals whose
/// left endpoint lies in `[lo, hi)`.
pub fn band_power(psd: &[f64], lo: f64, hi: f64) -> f64 {
    psd.windows(2)
        .enumerate()
        .filter(|(j, _)| {
            let f = GRID_START_HZ + GRID_STEP_HZ * *j as f64;
            f >= lo && f < hi
        })
        .map(|(_, w)| 0.5 * GRID_STEP_HZ * (w[0] + w[1]))
        .sum()
}

//! EDF reader/writer and channel selection.
//!
//! Only plain EDF is handled: 16-bit little-endian samples, contiguous
//! data records. EDF+ annotation signals are skipped with a warning.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::classify::Label;
use crate::error::{invalid, Error, Result};
use crate::CHANNELS;

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;
const DIG_MIN: i32 = -32768;
const DIG_MAX: i32 = 32767;
const ANNOTATION_LABEL: &str = "EDF Annotations";

/// A multichannel recording in physical units (µV), one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    samples: DMatrix<f64>,
    sample_rate: f64,
    channel_labels: Vec<String>,
    recording_id: String,
    subject_id: String,
    /// Per-channel native rates when the file mixed rates and was resampled.
    native_rates: Option<Vec<f64>>,
}

impl Recording {
    pub fn new(
        samples: DMatrix<f64>,
        sample_rate: f64,
        channel_labels: Vec<String>,
        recording_id: String,
        subject_id: String,
    ) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(invalid(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if channel_labels.len() != samples.nrows() {
            return Err(invalid(format!(
                "{} labels for {} channels",
                channel_labels.len(),
                samples.nrows()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(invalid("recording samples must be finite"));
        }
        Ok(Self {
            samples,
            sample_rate,
            channel_labels,
            recording_id,
            subject_id,
            native_rates: None,
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

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Native per-channel rates if ingestion resampled mixed-rate signals.
    pub fn native_rates(&self) -> Option<&[f64]> {
        self.native_rates.as_deref()
    }

    /// Same metadata, new samples (same channel count).
    pub fn with_samples(&self, samples: DMatrix<f64>) -> Result<Self> {
        let mut r = Self::new(
            samples,
            self.sample_rate,
            self.channel_labels.clone(),
            self.recording_id.clone(),
            self.subject_id.clone(),
        )?;
        r.native_rates = self.native_rates.clone();
        Ok(r)
    }

    pub fn with_ids(mut self, recording_id: &str, subject_id: &str) -> Self {
        self.recording_id = recording_id.to_string();
        self.subject_id = subject_id.to_string();
        self
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn field(&self, offset: usize, len: usize, name: &str) -> Result<&str> {
        let end = offset
            .checked_add(len)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| parse_err(name, offset, "file truncated inside header"))?;
        std::str::from_utf8(&self.bytes[offset..end])
            .map(str::trim)
            .map_err(|_| parse_err(name, offset, "header field is not ASCII"))
    }

    fn number<T: std::str::FromStr>(&self, offset: usize, len: usize, name: &str) -> Result<T> {
        let s = self.field(offset, len, name)?;
        s.parse()
            .map_err(|_| parse_err(name, offset, format!("expected a number, found {s:?}")))
    }
}

fn parse_err(field: &str, offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        offset,
        reason: reason.into(),
    }
}

struct SignalHeader {
    label: String,
    phys_min: f64,
    phys_max: f64,
    dig_min: i32,
    dig_max: i32,
    per_record: usize,
}

/// Parses an EDF byte stream.
///
/// The recording and subject ids are taken from the header's recording and
/// patient fields; callers that know better can override them with
/// [`Recording::with_ids`].
pub fn read_edf(bytes: &[u8]) -> Result<Recording> {
    let c = Cursor { bytes };
    let version = c.field(0, 8, "version")?;
    if version != "0" {
        return Err(parse_err(
            "version",
            0,
            format!("expected \"0\", found {version:?}"),
        ));
    }
    let subject_id = c.field(8, 80, "patient")?.to_string();
    let recording_id = c.field(88, 80, "recording")?.to_string();
    let header_bytes: usize = c.number(184, 8, "header bytes")?;
    let n_records: i64 = c.number(236, 8, "number of data records")?;
    let duration: f64 = c.number(244, 8, "record duration")?;
    let ns: usize = c.number(252, 4, "number of signals")?;
    if ns == 0 {
        return Err(parse_err("number of signals", 252, "no signals"));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(parse_err("record duration", 244, "must be positive"));
    }
    let expected_header = ns
        .checked_mul(SIGNAL_HEADER)
        .and_then(|v| v.checked_add(FIXED_HEADER))
        .ok_or_else(|| parse_err("number of signals", 252, "too many signals"))?;
    if header_bytes != expected_header {
        return Err(parse_err(
            "header bytes",
            184,
            format!("declares {header_bytes}, signal count implies {expected_header}"),
        ));
    }
    if bytes.len() < expected_header {
        return Err(parse_err(
            "signal headers",
            bytes.len(),
            "file truncated inside header",
        ));
    }

    // Signal header fields are stored column-wise: all labels, then all transducers, ...
    let col =
        |field_start: usize, width: usize, i: usize| FIXED_HEADER + ns * field_start + i * width;
    let mut signals = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = c.field(col(0, 16, i), 16, "label")?.to_string();
        let phys_min: f64 = c.number(col(104, 8, i), 8, "physical minimum")?;
        let phys_max: f64 = c.number(col(112, 8, i), 8, "physical maximum")?;
        let dig_min: i32 = c.number(col(120, 8, i), 8, "digital minimum")?;
        let dig_max: i32 = c.number(col(128, 8, i), 8, "digital maximum")?;
        let per_record: usize = c.number(col(216, 8, i), 8, "samples per record")?;
        if dig_max == dig_min {
            return Err(parse_err(
                "digital maximum",
                col(128, 8, i),
                "equals digital minimum",
            ));
        }
        if !(phys_min.is_finite() && phys_max.is_finite()) {
            return Err(parse_err("physical minimum", col(104, 8, i), "not finite"));
        }
        if per_record == 0 {
            return Err(parse_err(
                "samples per record",
                col(216, 8, i),
                "must be positive",
            ));
        }
        signals.push(SignalHeader {
            label,
            phys_min,
            phys_max,
            dig_min,
            dig_max,
            per_record,
        });
    }

    let record_samples = signals
        .iter()
        .try_fold(0usize, |acc, s| acc.checked_add(s.per_record))
        .ok_or_else(|| parse_err("samples per record", FIXED_HEADER + ns * 216, "overflow"))?;
    let record_bytes = record_samples
        .checked_mul(2)
        .ok_or_else(|| parse_err("samples per record", FIXED_HEADER + ns * 216, "overflow"))?;
    let available = bytes.len() - expected_header;
    let n_records = match n_records {
        -1 => available / record_bytes,
        n if n >= 0 => {
            let n = n as usize;
            let need = n
                .checked_mul(record_bytes)
                .ok_or_else(|| parse_err("number of data records", 236, "overflow"))?;
            if need > available {
                return Err(parse_err(
                    "data record",
                    expected_header + available - available % record_bytes,
                    format!(
                        "{n} records declared, only {} present",
                        available / record_bytes
                    ),
                ));
            }
            n
        }
        n => {
            return Err(parse_err(
                "number of data records",
                236,
                format!("invalid count {n}"),
            ))
        }
    };
    if n_records == 0 {
        return Err(parse_err("number of data records", 236, "no data records"));
    }

    let mut channels: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut offset_in_record = 0usize;
    for (i, s) in signals.iter().enumerate() {
        if s.label == ANNOTATION_LABEL {
            log::warn!("skipping EDF+ annotation signal {i}");
            offset_in_record += s.per_record * 2;
            continue;
        }
        let gain = (s.phys_max - s.phys_min) / (s.dig_max - s.dig_min) as f64;
        let mut data = Vec::with_capacity(n_records * s.per_record);
        for rec in 0..n_records {
            let base = expected_header + rec * record_bytes + offset_in_record;
            for raw in bytes[base..base + s.per_record * 2].chunks_exact(2) {
                let d = i16::from_le_bytes([raw[0], raw[1]]) as i32;
                data.push((d - s.dig_min) as f64 * gain + s.phys_min);
            }
        }
        channels.push((i, data));
        offset_in_record += s.per_record * 2;
    }
    if channels.is_empty() {
        return Err(parse_err(
            "label",
            FIXED_HEADER,
            "only annotation signals present",
        ));
    }

    let rates: Vec<f64> = channels
        .iter()
        .map(|(i, _)| signals[*i].per_record as f64 / duration)
        .collect();
    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let n_out = channels
        .iter()
        .map(|(i, d)| {
            if signals[*i].per_record as f64 / duration == max_rate {
                d.len()
            } else {
                0
            }
        })
        .max()
        .unwrap_or(0);
    let mixed = rates.iter().any(|r| *r != max_rate);
    let mut samples = DMatrix::zeros(channels.len(), n_out);
    for (row, ((_, data), rate)) in channels.iter().zip(&rates).enumerate() {
        if *rate == max_rate {
            samples
                .row_mut(row)
                .iter_mut()
                .zip(data)
                .for_each(|(o, v)| *o = *v);
        } else {
            for (j, o) in samples.row_mut(row).iter_mut().enumerate() {
                *o = interpolate(data, j as f64 * rate / max_rate);
            }
        }
    }
    let labels = channels
        .iter()
        .map(|(i, _)| signals[*i].label.clone())
        .collect();
    let mut r = Recording::new(samples, max_rate, labels, recording_id, subject_id)?;
    if mixed {
        log::warn!("resampled mixed-rate channels to {max_rate} Hz");
        r.native_rates = Some(rates);
    }
    Ok(r)
}

fn interpolate(data: &[f64], pos: f64) -> f64 {
    let i = pos.floor() as usize;
    if i + 1 >= data.len() {
        return *data.last().unwrap_or(&0.0);
    }
    let t = pos - i as f64;
    data[i] * (1.0 - t) + data[i + 1] * t
}

/// Formats a number into exactly `width` ASCII characters, rounding in the
/// requested direction so the written value brackets the true one.
fn fit_number(v: f64, width: usize, round_up: bool) -> Result<String> {
    if v == v.trunc() && v.abs() < 1e7 {
        let s = format!("{}", v as i64);
        if s.len() <= width {
            return Ok(s);
        }
    }
    for decimals in (0..width).rev() {
        let scale = 10f64.powi(decimals as i32);
        let r = if round_up {
            (v * scale).ceil()
        } else {
            (v * scale).floor()
        } / scale;
        let s = format!("{r:.decimals$}");
        if s.len() <= width {
            return Ok(s);
        }
    }
    Err(invalid(format!(
        "{v} does not fit in {width} header characters"
    )))
}

fn put(header: &mut Vec<u8>, s: &str, width: usize) -> Result<()> {
    if !s.is_ascii() || s.len() > width {
        return Err(invalid(format!(
            "header value {s:?} must be ASCII of at most {width} chars"
        )));
    }
    header.extend_from_slice(s.as_bytes());
    header.extend(std::iter::repeat_n(b' ', width - s.len()));
    Ok(())
}

/// Encodes a recording as EDF with one-second data records.
///
/// Each channel uses the full 16-bit digital range over its own physical
/// range, so the round-trip error is at most one quantization step.
pub fn write_edf(r: &Recording) -> Result<Vec<u8>> {
    let ns = r.samples.nrows();
    if ns == 0 {
        return Err(invalid("cannot write an EDF file without channels"));
    }
    for l in &r.channel_labels {
        if !l.is_ascii() || l.len() > 16 {
            return Err(invalid(format!(
                "channel label {l:?} must be ASCII of at most 16 chars"
            )));
        }
    }
    let per_record_f = r.sample_rate;
    if per_record_f != per_record_f.round() {
        return Err(invalid(
            "sample rate must be an integer number of samples per second",
        ));
    }
    let per_record = per_record_f as usize;
    let n = r.n_samples();
    if n == 0 || !n.is_multiple_of(per_record) {
        return Err(invalid(format!(
            "{n} samples do not divide into whole 1-s records of {per_record}"
        )));
    }
    let n_records = n / per_record;

    let mut ranges = Vec::with_capacity(ns);
    for row in r.samples.row_iter() {
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(*v), b.max(*v))
            });
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, lo + 1.0)
        };
        let lo_s = fit_number(lo, 8, false)?;
        let hi_s = fit_number(hi, 8, true)?;
        let (plo, phi): (f64, f64) = (
            lo_s.parse().expect("formatted"),
            hi_s.parse().expect("formatted"),
        );
        ranges.push((lo_s, hi_s, plo, phi));
    }

    let mut h = Vec::with_capacity(FIXED_HEADER + ns * SIGNAL_HEADER);
    put(&mut h, "0", 8)?;
    put(&mut h, truncate_ascii(&r.subject_id, 80), 80)?;
    put(&mut h, truncate_ascii(&r.recording_id, 80), 80)?;
    put(&mut h, "01.01.00", 8)?;
    put(&mut h, "00.00.00", 8)?;
    put(&mut h, &(FIXED_HEADER + ns * SIGNAL_HEADER).to_string(), 8)?;
    put(&mut h, "", 44)?;
    put(&mut h, &n_records.to_string(), 8)?;
    put(&mut h, "1", 8)?;
    put(&mut h, &ns.to_string(), 4)?;
    let each = |h: &mut Vec<u8>, width: usize, f: &dyn Fn(usize) -> String| -> Result<()> {
        (0..ns).try_for_each(|i| put(h, &f(i), width))
    };
    each(&mut h, 16, &|i| r.channel_labels[i].clone())?;
    each(&mut h, 80, &|_| String::new())?;
    each(&mut h, 8, &|_| "uV".to_string())?;
    each(&mut h, 8, &|i| ranges[i].0.clone())?;
    each(&mut h, 8, &|i| ranges[i].1.clone())?;
    each(&mut h, 8, &|_| DIG_MIN.to_string())?;
    each(&mut h, 8, &|_| DIG_MAX.to_string())?;
    each(&mut h, 80, &|_| String::new())?;
    each(&mut h, 8, &|_| per_record.to_string())?;
    each(&mut h, 32, &|_| String::new())?;

    let mut out = h;
    out.reserve(n * ns * 2);
    let span = (DIG_MAX - DIG_MIN) as f64;
    for rec in 0..n_records {
        for (ch, (_, _, plo, phi)) in ranges.iter().enumerate() {
            let gain = span / (phi - plo);
            for j in rec * per_record..(rec + 1) * per_record {
                let d = ((r.samples[(ch, j)] - plo) * gain + DIG_MIN as f64)
                    .round()
                    .clamp(DIG_MIN as f64, DIG_MAX as f64) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn truncate_ascii(s: &str, width: usize) -> &str {
    if s.is_ascii() && s.len() > width {
        &s[..width]
    } else if s.is_ascii() {
        s
    } else {
        "X"
    }
}

pub fn read_edf_file(path: impl AsRef<Path>) -> Result<Recording> {
    read_edf(&std::fs::read(path)?)
}

pub fn write_edf_file(r: &Recording, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_edf(r)?)?;
    Ok(())
}

/// Canonical form for label matching: uppercase, `EEG ` prefix and
/// `-REF`/`-LE` suffix removed, old 10-20 names mapped to current ones.
pub fn normalize_label(label: &str) -> String {
    let mut s = label.trim().to_ascii_uppercase();
    if let Some(rest) = s.strip_prefix("EEG ") {
        s = rest.trim().to_string();
    }
    for suffix in ["-REF", "-LE"] {
        if let Some(rest) = s.strip_suffix(suffix) {
            s = rest.to_string();
        }
    }
    match s.as_str() {
        "T3" => "T7".into(),
        "T4" => "T8".into(),
        "T5" => "P7".into(),
        "T6" => "P8".into(),
        _ => s,
    }
}

/// Picks and reorders channels by label; the output carries the requested
/// labels verbatim.
pub fn select_channels(r: &Recording, order: &[&str]) -> Result<Recording> {
    let available: Vec<String> = r
        .channel_labels
        .iter()
        .map(|l| normalize_label(l))
        .collect();
    let mut rows = Vec::with_capacity(order.len());
    let mut missing = Vec::new();
    for want in order {
        let key = normalize_label(want);
        match available.iter().position(|l| *l == key) {
            Some(i) => rows.push(i),
            None => missing.push(*want),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Ingest(format!(
            "recording {} lacks channels: {}",
            r.recording_id,
            missing.join(", ")
        )));
    }
    let samples = r.samples.select_rows(rows.iter());
    let mut out = Recording::new(
        samples,
        r.sample_rate,
        order.iter().map(|s| s.to_string()).collect(),
        r.recording_id.clone(),
        r.subject_id.clone(),
    )?;
    out.native_rates = r.native_rates.clone();
    Ok(out)
}

/// The 19 tensor channels in tensor order.
pub fn select_standard_channels(r: &Recording) -> Result<Recording> {
    select_channels(r, &CHANNELS)
}

/// One manifest row: `path,subject_id,label`; an empty label marks the
/// unlabeled population set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject_id: String,
    #[serde(default, deserialize_with = "empty_label")]
    pub label: Option<Label>,
}

fn empty_label<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<Label>, D::Error> {
    let s = String::deserialize(d)?;
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.trim().parse().map(Some).map_err(serde::de::Error::custom)
}

/// Reads a manifest; relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let mut e: ManifestEntry = row?;
        if Path::new(&e.path).is_relative() {
            e.path = base.join(&e.path).to_string_lossy().into_owned();
        }
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "subject_id", "label"])?;
    for e in entries {
        let label = e.label.map(|l| l.as_str().to_string()).unwrap_or_default();
        w.write_record([e.path.as_str(), e.subject_id.as_str(), label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

use std::path::{Path, PathBuf};

use eegcpd::cpd::{CpdOptions, Solver};
use eegcpd::preprocess::PreprocessOptions;
use eegcpd::synth::FactorStyle;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Everything a pipeline run depends on. Unset fields take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub preprocess: PreprocessOptions,
    pub diffit: DiffitConfig,
    pub cpd: CpdConfig,
    pub classify: ClassifyConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub work_dir: PathBuf,
    /// Recordings that build the population tensor; defaults to `<work_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Labeled recordings to project and classify; defaults to
    /// `<work_dir>/validation_manifest.csv`, then to `manifest`.
    pub validation_manifest: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            work_dir: PathBuf::from("work"),
            manifest: None,
            validation_manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffitConfig {
    pub r_max: usize,
    pub n_runs: usize,
    pub n_starts: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DiffitConfig {
    fn default() -> Self {
        Self {
            r_max: 6,
            n_runs: 30,
            n_starts: 3,
            tol: 1e-7,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpdConfig {
    /// Fixed rank; when absent `decompose` takes the DIFFIT modal rank.
    pub rank: Option<usize>,
    pub solver: Solver,
    pub max_iters: usize,
    pub tol: f64,
    pub n_starts: usize,
    pub gn_damping_init: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        let d = CpdOptions::default();
        Self {
            rank: None,
            solver: d.solver,
            max_iters: d.max_iters,
            tol: d.tol,
            n_starts: d.n_starts,
            gn_damping_init: d.gn_damping_init,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// Projection weights on the decomposition basis.
    Td,
    /// Relative band powers.
    Pib,
}

impl FeatureSet {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Td => "TD",
            FeatureSet::Pib => "PIB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub k: usize,
    pub c: f64,
    pub svm_epochs: usize,
    pub features: Vec<FeatureSet>,
    /// Shuffled-label repeats per feature, model and task; 0 disables the null.
    pub permutations: usize,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            k: 15,
            c: 1.0,
            svm_epochs: 400,
            features: vec![FeatureSet::Td, FeatureSet::Pib],
            permutations: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Spectra written straight to the tensor artifacts, bypassing `preprocess`.
    Spectra,
    /// Time-domain EDF files plus manifests for the full pipeline.
    Recordings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub factor_style: FactorStyle,
    pub rank: usize,
    pub population_epochs: usize,
    pub population_snr_db: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub cohort_snr_db: Option<f64>,
    pub cn: usize,
    pub mci: usize,
    pub ad: usize,
    pub epochs_per_subject: usize,
    pub population_recordings: usize,
    pub recording_seconds: f64,
    pub sample_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::Spectra,
            factor_style: FactorStyle::Physiological,
            rank: 3,
            population_epochs: 300,
            population_snr_db: Some(20.0),
            lambdas: Some(vec![3.0, 2.0, 1.5]),
            cohort_snr_db: Some(10.0),
            cn: 24,
            mci: 31,
            ad: 50,
            epochs_per_subject: 5,
            population_recordings: 12,
            recording_seconds: 60.0,
            sample_rate: 256.0,
        }
    }
}

impl PipelineConfig {
    /// Reads an optional TOML file, applies `key.path=value` overrides and validates.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad =
            |field: &str, why: &str| Err(CliError::Usage(format!("config field `{field}` {why}")));
        let p = &self.preprocess;
        if !(p.band_lo_hz > 0.0 && p.band_lo_hz < p.band_hi_hz) {
            return bad(
                "preprocess.band_lo_hz",
                "must be positive and below band_hi_hz",
            );
        }
        if !(p.epoch_seconds >= 2.0) {
            return bad("preprocess.epoch_seconds", "must be at least 2");
        }
        if p.min_epochs == 0 || p.min_epochs > p.max_epochs {
            return bad("preprocess.min_epochs", "must be in 1..=max_epochs");
        }
        if !(p.rejection_sigma > 0.0) {
            return bad("preprocess.rejection_sigma", "must be positive");
        }
        if self.diffit.r_max < 3 {
            return bad("diffit.r_max", "must be at least 3");
        }
        if self.diffit.n_runs == 0 {
            return bad("diffit.n_runs", "must be at least 1");
        }
        if self.diffit.n_starts == 0 || self.cpd.n_starts == 0 {
            return bad("n_starts", "must be at least 1");
        }
        if !(self.diffit.tol > 0.0 && self.cpd.tol > 0.0) {
            return bad("tol", "must be positive");
        }
        if self.cpd.rank == Some(0) {
            return bad("cpd.rank", "must be at least 1");
        }
        if !(self.cpd.gn_damping_init > 0.0) {
            return bad("cpd.gn_damping_init", "must be positive");
        }
        if self.classify.k < 2 {
            return bad("classify.k", "must be at least 2");
        }
        if !(self.classify.c.is_finite() && self.classify.c >= 0.0) {
            return bad("classify.c", "must be finite and nonnegative");
        }
        if self.classify.svm_epochs == 0 {
            return bad("classify.svm_epochs", "must be at least 1");
        }
        if self.classify.features.is_empty() {
            return bad("classify.features", "must list td and/or pib");
        }
        let s = &self.synth;
        if s.rank == 0 || s.population_epochs == 0 || s.epochs_per_subject == 0 {
            return bad(
                "synth",
                "rank, population_epochs and epochs_per_subject must be positive",
            );
        }
        if s.cn < 2 || s.mci < 2 || s.ad < 2 {
            return bad("synth.cn", "each class needs at least 2 subjects");
        }
        if s.lambdas.as_ref().is_some_and(|l| l.len() != s.rank) {
            return bad("synth.lambdas", "must have one entry per rank");
        }
        if [s.population_snr_db, s.cohort_snr_db]
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return bad("synth.population_snr_db", "must be finite when set");
        }
        if !(s.recording_seconds >= 20.0 && s.sample_rate >= 96.0 && s.sample_rate.fract() == 0.0) {
            return bad(
                "synth.recording_seconds",
                "needs >= 20 s at an integer rate of at least 96 Hz",
            );
        }
        Ok(())
    }

    /// SHA-256 of the resolved config without the work directory, so the same
    /// analysis in two places shares one hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.work_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn cpd_options(&self, rank: usize) -> CpdOptions {
        CpdOptions {
            rank,
            max_iters: self.cpd.max_iters,
            tol: self.cpd.tol,
            n_starts: self.cpd.n_starts,
            seed: self.seed,
            solver: self.cpd.solver,
            gn_damping_init: self.cpd.gn_damping_init,
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Usage(format!("override {spec:?} must look like key.path=value"))
    })?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override {key}: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

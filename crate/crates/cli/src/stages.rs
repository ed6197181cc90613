use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eegcpd::classify::{
    cross_validate, permutation_null, write_summary, CohortDataset, CohortRow, CvOptions, Label,
    Model, SummaryRow, SvmOptions, Task,
};
use eegcpd::cpd::{cpd, derive_seed, CpdOptions, Solver};
use eegcpd::edf::{read_edf_file, read_manifest, write_edf_file, write_manifest, ManifestEntry};
use eegcpd::factors::FactorSetJson;
use eegcpd::preprocess::{
    build_tensor, frequency_grid, pib, process_recording, read_provenance, write_pib,
    write_provenance, EpochSpectrum, ProvenanceRow,
};
use eegcpd::projection::{build_basis, project_vec, read_feature_csv, write_weights, WeightVector};
use eegcpd::rank::{diffit_with, DiffitOptions, RankReport};
use eegcpd::synth::{
    make_cohort, make_recording, make_tensor, RecordingSpec, SynthSpec, ELECTRODE_POSITIONS,
};
use eegcpd::{FactorSet, Tensor3, CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{FeatureSet, SynthMode};
use crate::error::CliError;
use crate::workspace::{Workspace, LOCK_FILE};

pub const TENSOR: &str = "tensor.bin";
pub const PROVENANCE: &str = "provenance.csv";
pub const COHORT: &str = "cohort.bin";
pub const COHORT_PROVENANCE: &str = "cohort_provenance.csv";
pub const LABELS: &str = "labels.csv";
pub const PIB: &str = "pib.csv";
pub const RANK_REPORT: &str = "rank_report.json";
pub const FACTORS: &str = "factors.json";
pub const WEIGHTS: &str = "weights.csv";
pub const CLASSIFY: &str = "classify.json";
pub const SUMMARY: &str = "summary.csv";
pub const REPORT: &str = "report.json";

const TENSOR_PRODUCER: &str = "preprocess` or `synth";

fn class_sizes(ws: &Workspace) -> BTreeMap<Label, usize> {
    let s = &ws.cfg.synth;
    BTreeMap::from([(Label::Cn, s.cn), (Label::Mci, s.mci), (Label::Ad, s.ad)])
}

pub fn synth(ws: &Workspace) -> Result<(), CliError> {
    match ws.cfg.synth.mode {
        SynthMode::Spectra => synth_spectra(ws),
        SynthMode::Recordings => synth_recordings(ws),
    }
}

fn synth_spectra(ws: &Workspace) -> Result<(), CliError> {
    let s = &ws.cfg.synth;
    let (t, truth) = make_tensor(&SynthSpec {
        dims: [s.population_epochs, CHANNELS.len(), frequency_grid().len()],
        rank: s.rank,
        snr_db: s.population_snr_db,
        factor_style: s.factor_style,
        lambdas: s.lambdas.clone(),
        seed: derive_seed(ws.cfg.seed, &[1]),
        ..SynthSpec::default()
    })?;
    t.save(ws.path(TENSOR))?;
    let provenance: Vec<ProvenanceRow> = (0..s.population_epochs)
        .map(|e| ProvenanceRow {
            epoch_row: e,
            subject_id: "population".into(),
            recording_id: "population".into(),
            epoch_index: e,
        })
        .collect();
    write_provenance(ws.path(PROVENANCE), &provenance)?;

    let cohort = make_cohort(
        &SynthSpec {
            dims: [1, CHANNELS.len(), frequency_grid().len()],
            rank: s.rank,
            snr_db: s.cohort_snr_db,
            factor_style: s.factor_style,
            seed: derive_seed(ws.cfg.seed, &[2]),
            ..SynthSpec::default()
        },
        &class_sizes(ws),
        s.epochs_per_subject,
    )?;
    let summary = write_cohort(ws, &cohort.spectra, &cohort.subjects)?;
    let truth_weights: Vec<WeightVector> = cohort
        .spectra
        .iter()
        .zip(&cohort.weights)
        .map(|(x, w)| WeightVector {
            w: w.clone(),
            subject_id: x.subject_id().into(),
            recording_id: x.recording_id().into(),
            epoch_index: x.index(),
        })
        .collect();
    write_weights(ws.path("truth_weights.csv"), &truth_weights)?;
    ws.write_json(
        "truth_factors.json",
        "synth",
        json!({
            "population": FactorSetJson::from(&truth),
            "cohort_patterns": FactorSetJson::from(&cohort.patterns),
        }),
    )?;
    ws.write_json(
        "synth.json",
        "synth",
        json!({
            "mode": "spectra",
            "population_dims": t.dims(),
            "cohort": summary,
            "synth": ws.cfg.synth,
        }),
    )?;
    Ok(())
}

fn synth_recordings(ws: &Workspace) -> Result<(), CliError> {
    let s = &ws.cfg.synth;
    let edf_dir = ws.path("edf");
    std::fs::create_dir_all(&edf_dir)?;
    let n_epochs = (s.recording_seconds / ws.cfg.preprocess.epoch_seconds).floor() as usize;
    let base = RecordingSpec {
        sample_rate: s.sample_rate,
        seconds: s.recording_seconds,
        alpha_epochs: (0..n_epochs).collect(),
        ..RecordingSpec::default()
    };

    let mut jobs: Vec<(String, Option<Label>, f64)> = (0..s.population_recordings)
        .map(|i| (format!("POP-{i:03}"), None, base.alpha_amplitude))
        .collect();
    for (label, n) in class_sizes(ws) {
        // alpha weakens from CN to AD, with per-subject spread
        let level = match label {
            Label::Cn => 40.0,
            Label::Mci => 25.0,
            Label::Ad => 12.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ws.cfg.seed, &[4, label as u64]));
        for j in 0..n {
            let amp = level * (0.8 + 0.4 * rng.random::<f64>());
            jobs.push((format!("{label}-{j:03}"), Some(label), amp));
        }
    }

    jobs.par_iter()
        .enumerate()
        .try_for_each(|(i, (id, _, amp))| -> Result<(), CliError> {
            let spec = RecordingSpec {
                alpha_amplitude: *amp,
                seed: derive_seed(ws.cfg.seed, &[3, i as u64]),
                ..base.clone()
            };
            let r = make_recording(&spec, id, id)?;
            write_edf_file(&r, edf_dir.join(format!("{id}.edf")))?;
            Ok(())
        })?;

    let entry = |(id, label, _): &(String, Option<Label>, f64)| ManifestEntry {
        path: format!("edf/{id}.edf"),
        subject_id: id.clone(),
        label: *label,
    };
    let population: Vec<ManifestEntry> = jobs.iter().filter(|j| j.1.is_none()).map(entry).collect();
    let cohort: Vec<ManifestEntry> = jobs.iter().filter(|j| j.1.is_some()).map(entry).collect();
    write_manifest(ws.path("manifest.csv"), &population)?;
    write_manifest(ws.path("validation_manifest.csv"), &cohort)?;
    ws.write_json(
        "synth.json",
        "synth",
        json!({
            "mode": "recordings",
            "population_recordings": population.len(),
            "cohort_recordings": cohort.len(),
            "synth": ws.cfg.synth,
        }),
    )?;
    Ok(())
}

/// Writes the labeled cohort artifacts shared by `synth` and `preprocess`.
fn write_cohort(
    ws: &Workspace,
    spectra: &[EpochSpectrum],
    labels: &[(String, Label)],
) -> Result<Value, CliError> {
    let (t, provenance) = build_tensor(spectra)?;
    t.save(ws.path(COHORT))?;
    write_provenance(ws.path(COHORT_PROVENANCE), &provenance)?;
    let pibs = spectra
        .iter()
        .map(pib)
        .collect::<eegcpd::Result<Vec<_>>>()?;
    write_pib(ws.path(PIB), &pibs)?;
    let mut w = csv::Writer::from_path(ws.path(LABELS))?;
    w.write_record(["subject_id", "label"])?;
    for (s, l) in labels {
        w.write_record([s.as_str(), l.as_str()])?;
    }
    w.flush()?;
    let mut counts = BTreeMap::new();
    for (_, l) in labels {
        *counts.entry(l.as_str()).or_insert(0usize) += 1;
    }
    Ok(json!({ "epochs": spectra.len(), "subjects": counts }))
}

fn read_labels(path: &Path) -> Result<BTreeMap<String, Label>, CliError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(CliError::Data(format!(
                "{}: expected subject_id,label rows",
                path.display()
            )));
        }
        let label: Label = rec[1].parse()?;
        out.insert(rec[0].to_string(), label);
    }
    Ok(out)
}

struct ProcessedSet {
    spectra: Vec<EpochSpectrum>,
    recordings: usize,
    skipped: Vec<Value>,
}

fn process_manifest(ws: &Workspace, entries: &[ManifestEntry]) -> Result<ProcessedSet, CliError> {
    let results: Vec<(String, Result<Vec<EpochSpectrum>, String>)> = entries
        .par_iter()
        .map(|e| {
            let id = Path::new(&e.path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.path.clone());
            let out = read_edf_file(&e.path)
                .map(|r| r.with_ids(&id, &e.subject_id))
                .and_then(|r| process_recording(&r, &ws.cfg.preprocess))
                .map_err(|err| err.to_string());
            (id, out)
        })
        .collect();
    let mut set = ProcessedSet {
        spectra: Vec::new(),
        recordings: 0,
        skipped: Vec::new(),
    };
    for (id, r) in results {
        match r {
            Ok(s) => {
                set.recordings += 1;
                set.spectra.extend(s);
            }
            Err(reason) => {
                log::warn!("skipping recording {id}: {reason}");
                set.skipped
                    .push(json!({ "recording_id": id, "reason": reason }));
            }
        }
    }
    if set.spectra.is_empty() {
        return Err(CliError::Data("no recording produced usable epochs".into()));
    }
    Ok(set)
}

fn manifest_path(ws: &Workspace) -> Result<PathBuf, CliError> {
    let p = ws
        .cfg
        .paths
        .manifest
        .clone()
        .unwrap_or_else(|| ws.path("manifest.csv"));
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!(
            "missing manifest {}; run `synth` or set paths.manifest",
            p.display()
        )))
    }
}

pub fn preprocess(ws: &Workspace) -> Result<(), CliError> {
    let manifest = manifest_path(ws)?;
    let validation = match &ws.cfg.paths.validation_manifest {
        Some(p) if !p.exists() => {
            return Err(CliError::Usage(format!(
                "missing validation manifest {}",
                p.display()
            )));
        }
        Some(p) => p.clone(),
        None if ws.path("validation_manifest.csv").exists() => ws.path("validation_manifest.csv"),
        None => manifest.clone(),
    };
    let pop_entries = read_manifest(&manifest)?;
    let pop = process_manifest(ws, &pop_entries)?;
    let (t, provenance) = build_tensor(&pop.spectra)?;
    t.save(ws.path(TENSOR))?;
    write_provenance(ws.path(PROVENANCE), &provenance)?;

    let val_entries = if validation == manifest {
        pop_entries.clone()
    } else {
        read_manifest(&validation)?
    };
    let mut labels: BTreeMap<String, Label> = BTreeMap::new();
    for e in &val_entries {
        match (e.label, labels.get(&e.subject_id)) {
            (Some(l), Some(prev)) if *prev != l => {
                return Err(CliError::Data(format!(
                    "subject {} is labeled {prev} and {l}",
                    e.subject_id
                )));
            }
            (Some(l), _) => {
                labels.insert(e.subject_id.clone(), l);
            }
            (None, _) => {}
        }
    }
    let cohort = if validation == manifest {
        ProcessedSet {
            spectra: pop.spectra.clone(),
            recordings: pop.recordings,
            skipped: pop.skipped.clone(),
        }
    } else {
        process_manifest(ws, &val_entries)?
    };
    let mut seen = std::collections::HashSet::new();
    let subjects: Vec<(String, Label)> = cohort
        .spectra
        .iter()
        .filter_map(|s| {
            labels
                .get(s.subject_id())
                .map(|l| (s.subject_id().to_string(), *l))
        })
        .filter(|(id, _)| seen.insert(id.clone()))
        .collect();
    let cohort_summary = write_cohort(ws, &cohort.spectra, &subjects)?;
    ws.write_json(
        "preprocess.json",
        "preprocess",
        json!({
            "population": {
                "recordings": pop.recordings,
                "epochs": pop.spectra.len(),
                "skipped": pop.skipped,
            },
            "cohort": {
                "recordings": cohort.recordings,
                "skipped": cohort.skipped,
                "summary": cohort_summary,
            },
            "options": ws.cfg.preprocess,
        }),
    )?;
    Ok(())
}

pub fn diffit(ws: &Workspace) -> Result<(), CliError> {
    let t = Tensor3::load(ws.require(TENSOR, TENSOR_PRODUCER)?)?;
    let d = &ws.cfg.diffit;
    let opts = DiffitOptions {
        r_max: d.r_max,
        n_runs: d.n_runs,
        seed: ws.cfg.seed,
        cpd: CpdOptions {
            solver: Solver::Als,
            n_starts: d.n_starts,
            tol: d.tol,
            max_iters: d.max_iters,
            ..CpdOptions::default()
        },
    };
    let rep = diffit_with(&t, &opts)?;
    rep.write_histogram(ws.path("rank_histogram.csv"))?;
    ws.write_json(RANK_REPORT, "diffit", serde_json::to_value(&rep)?)?;
    Ok(())
}

pub fn decompose(ws: &Workspace, rank_flag: Option<usize>) -> Result<(), CliError> {
    let t = Tensor3::load(ws.require(TENSOR, TENSOR_PRODUCER)?)?;
    let (rank, source) = match (rank_flag, ws.cfg.cpd.rank) {
        (Some(r), _) => (r, "flag"),
        (None, Some(r)) => (r, "config"),
        (None, None) => {
            let v = ws.read_json(RANK_REPORT, "diffit")?;
            let rep: RankReport = serde_json::from_value(v)?;
            (rep.modal_rank, "diffit")
        }
    };
    if rank == 0 {
        return Err(CliError::Usage("rank must be at least 1".into()));
    }
    let opts = ws.cfg.cpd_options(rank);
    let res = cpd(&t, &opts)?;
    if !res.converged {
        log::warn!(
            "CPD stopped at max_iters={} before meeting tol",
            opts.max_iters
        );
    }
    let fs = &res.factors;
    let dir = ws.path("decompose");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    let grid = frequency_grid();
    for k in 0..rank {
        let mut w = csv::Writer::from_path(dir.join(format!("topomap_{}.csv", k + 1)))?;
        w.write_record(["channel", "value"])?;
        for (s, ch) in CHANNELS.iter().enumerate() {
            w.write_record([ch.to_string(), fs.spatial()[(s, k)].to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(format!("spectrum_{}.csv", k + 1)))?;
        w.write_record(["frequency_hz", "value"])?;
        for (f, hz) in grid.iter().enumerate() {
            w.write_record([hz.to_string(), fs.spectral()[(f, k)].to_string()])?;
        }
        w.flush()?;
    }
    let mut w = csv::Writer::from_path(dir.join("electrodes.csv"))?;
    w.write_record(["channel", "x", "y"])?;
    for (ch, (x, y)) in CHANNELS.iter().zip(ELECTRODE_POSITIONS) {
        w.write_record([ch.to_string(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    ws.write_json(
        FACTORS,
        "decompose",
        json!({
            "rank": rank,
            "rank_source": source,
            "fingerprint": fs.fingerprint(),
            "cpd": res.metadata(&opts),
            "factors": FactorSetJson::from(fs),
        }),
    )?;
    Ok(())
}

fn load_factors(ws: &Workspace) -> Result<FactorSet, CliError> {
    let v = ws.read_json(FACTORS, "decompose")?;
    let j: FactorSetJson =
        serde_json::from_value(v.get("factors").cloned().unwrap_or(Value::Null))?;
    Ok(j.try_into()?)
}

pub fn project(ws: &Workspace) -> Result<(), CliError> {
    let fs = load_factors(ws)?;
    let t = Tensor3::load(ws.require(COHORT, TENSOR_PRODUCER)?)?;
    let provenance = read_provenance(ws.require(COHORT_PROVENANCE, TENSOR_PRODUCER)?)?;
    if provenance.len() != t.dims()[0] {
        return Err(CliError::Data(
            "cohort provenance does not match the cohort tensor".into(),
        ));
    }
    let basis = build_basis(&fs)?;
    let rows = provenance
        .iter()
        .map(|p| {
            Ok(WeightVector {
                w: project_vec(&basis, t.slice(p.epoch_row))?,
                subject_id: p.subject_id.clone(),
                recording_id: p.recording_id.clone(),
                epoch_index: p.epoch_index,
            })
        })
        .collect::<eegcpd::Result<Vec<_>>>()?;
    write_weights(ws.path(WEIGHTS), &rows)?;
    ws.write_json(
        "project.json",
        "project",
        json!({
            "rows": rows.len(),
            "rank": basis.rank(),
            "rank_used": basis.rank_used(),
            "rank_deficient": basis.is_rank_deficient(),
            "factors_fingerprint": basis.source(),
        }),
    )?;
    Ok(())
}

pub fn classify(ws: &Workspace) -> Result<(), CliError> {
    let labels = read_labels(&ws.require(LABELS, TENSOR_PRODUCER)?)?;
    let c = &ws.cfg.classify;
    let opts = CvOptions {
        k: c.k,
        svm: SvmOptions {
            c: c.c,
            epochs: c.svm_epochs,
            seed: ws.cfg.seed,
        },
        seed: ws.cfg.seed,
    };
    let mut features = c.features.clone();
    features.sort();
    features.dedup();
    let mut summary = Vec::new();
    let mut reports = Vec::new();
    for feature in features {
        let path = match feature {
            FeatureSet::Td => ws.require(WEIGHTS, "project")?,
            FeatureSet::Pib => ws.require(PIB, TENSOR_PRODUCER)?,
        };
        let (names, rows) = read_feature_csv(&path)?;
        let rows: Vec<CohortRow> = rows
            .into_iter()
            .filter_map(|r| {
                labels.get(&r.subject_id).map(|l| CohortRow {
                    features: r.w,
                    subject_id: r.subject_id,
                    label: *l,
                })
            })
            .collect();
        let ds = CohortDataset::new(rows)?;
        for task in Task::ALL {
            let count = |l: Label| ds.subjects().iter().filter(|(_, x)| *x == l).count();
            if count(task.negative()) < 2 || count(task.positive()) < 2 {
                log::warn!("skipping {task}: fewer than 2 subjects in a class");
                continue;
            }
            for model in Model::ALL {
                let rep = cross_validate(&ds, task, model, &opts)?;
                let null_dist = if c.permutations > 0 {
                    let v = permutation_null(
                        &ds,
                        task,
                        model,
                        &opts,
                        c.permutations,
                        derive_seed(ws.cfg.seed, &[7]),
                    )?;
                    let mean = v.iter().sum::<f64>() / v.len() as f64;
                    json!({ "aucs": v, "mean_auc": mean })
                } else {
                    Value::Null
                };
                summary.push(SummaryRow {
                    feature: feature.as_str().into(),
                    classifier: model,
                    task,
                    mean_auc: rep.mean_auc,
                    std_auc: rep.std_auc,
                });
                reports.push(json!({
                    "feature": feature.as_str(),
                    "n_features": names.len(),
                    "report": rep,
                    "null": null_dist,
                }));
            }
        }
    }
    if summary.is_empty() {
        return Err(CliError::Data(
            "no task has two subjects in each class".into(),
        ));
    }
    write_summary(ws.path(SUMMARY), &summary)?;
    ws.write_json(
        CLASSIFY,
        "classify",
        json!({ "summary": summary, "reports": reports }),
    )?;
    Ok(())
}

pub fn report(ws: &Workspace) -> Result<(), CliError> {
    let mut files = Vec::new();
    walk(ws.dir(), ws.dir(), &mut files)?;
    files.retain(|(rel, _)| {
        rel != REPORT && rel != LOCK_FILE && rel != crate::workspace::RESOLVED_CONFIG
    });
    if files.is_empty() {
        return Err(CliError::Usage(
            "nothing to report; run `synth` or `preprocess` first".into(),
        ));
    }
    let artifacts: Vec<Value> = files
        .iter()
        .map(|(rel, bytes)| json!({ "path": rel, "bytes": bytes.len(), "sha256": hex::encode(Sha256::digest(bytes)) }))
        .collect();
    let mut stages = serde_json::Map::new();
    for name in ["synth.json", "preprocess.json", "project.json"] {
        if ws.path(name).exists() {
            let mut v = ws.read_json(name, "")?;
            if let Some(o) = v.as_object_mut() {
                for k in [
                    "version",
                    "config_hash",
                    "seed",
                    "stage",
                    "synth",
                    "options",
                ] {
                    o.remove(k);
                }
            }
            stages.insert(name.trim_end_matches(".json").into(), v);
        }
    }
    if ws.path(RANK_REPORT).exists() {
        let v = ws.read_json(RANK_REPORT, "diffit")?;
        stages.insert(
            "diffit".into(),
            json!({ "histogram": v["histogram"], "modal_rank": v["modal_rank"], "n_runs": v["n_runs"] }),
        );
    }
    if ws.path(FACTORS).exists() {
        let v = ws.read_json(FACTORS, "decompose")?;
        stages.insert(
            "decompose".into(),
            json!({
                "rank": v["rank"],
                "rank_source": v["rank_source"],
                "fit": v["cpd"]["fit"],
                "rel_error": v["cpd"]["rel_error"],
                "converged": v["cpd"]["converged"],
                "fingerprint": v["fingerprint"],
            }),
        );
    }
    if ws.path(CLASSIFY).exists() {
        let v = ws.read_json(CLASSIFY, "classify")?;
        let nulls: Vec<Value> = v["reports"]
            .as_array()
            .into_iter()
            .flatten()
            .filter(|r| !r["null"].is_null())
            .map(|r| {
                json!({
                    "feature": r["feature"],
                    "classifier": r["report"]["model"],
                    "task": r["report"]["task"],
                    "null_mean_auc": r["null"]["mean_auc"],
                })
            })
            .collect();
        stages.insert(
            "classify".into(),
            json!({ "summary": v["summary"], "null": nulls }),
        );
    }
    ws.write_json(
        REPORT,
        "report",
        json!({ "stages": stages, "artifacts": artifacts }),
    )?;
    Ok(())
}

/// Files under `dir` as `(relative path, contents)`, sorted by path.
fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let rel = p
                .strip_prefix(root)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel, std::fs::read(&p)?));
        }
    }
    Ok(())
}

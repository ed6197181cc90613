use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    auc, gnb_fit, gnb_score, svm_fit, svm_score, CohortDataset, Label, Model, SvmOptions, Task,
};
use crate::cpd::derive_seed;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvOptions {
    pub k: usize,
    pub svm: SvmOptions,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 15,
            svm: SvmOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub subject_id: String,
    pub label: Label,
    pub fold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train_subjects: usize,
    pub n_test_subjects: usize,
    /// `None` when the test subjects do not cover both classes.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub task: Task,
    pub model: Model,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// AUCs of the folds that could be scored, in fold order.
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Population standard deviation over `fold_aucs`.
    pub std_auc: f64,
    /// Folds left out of the mean because a class was missing from the test set.
    pub excluded_folds: Vec<usize>,
    pub assignment: Vec<FoldAssignment>,
}

/// Z-scoring with training-set statistics; constant features pass through centered.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[&[f64]]) -> Self {
        let dim = x.first().map_or(0, |r| r.len());
        let n = x.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in x {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Stratified subject folds: each class's subjects are shuffled and dealt
/// round-robin, the fold counter carrying over from one class to the next.
fn assign_folds(
    subjects: &[(String, Label)],
    task: Task,
    k: usize,
    seed: u64,
) -> Vec<FoldAssignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(subjects.len());
    let mut counter = 0usize;
    for label in [task.negative(), task.positive()] {
        let mut ids: Vec<&String> = subjects
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(s, _)| s)
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            out.push(FoldAssignment {
                subject_id: id.clone(),
                label,
                fold: counter % k,
            });
            counter += 1;
        }
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Subject-disjoint `k`-fold cross-validation of one task and model.
///
/// Each fold standardizes features with its training statistics, fits on
/// training epochs, averages the test epochs' scores per subject and reports
/// the subject-level AUC.
pub fn cross_validate(
    ds: &CohortDataset,
    task: Task,
    model: Model,
    opts: &CvOptions,
) -> Result<CvReport> {
    if opts.k < 2 {
        return Err(invalid(format!(
            "cross-validation needs k >= 2, got {}",
            opts.k
        )));
    }
    let subjects: Vec<(String, Label)> = ds
        .subjects()
        .into_iter()
        .filter(|(_, l)| *l == task.negative() || *l == task.positive())
        .collect();
    for label in [task.negative(), task.positive()] {
        let n = subjects.iter().filter(|(_, l)| *l == label).count();
        if n < 2 {
            return Err(invalid(format!(
                "task {task} needs at least 2 {label} subjects, found {n}"
            )));
        }
    }
    let assignment = assign_folds(&subjects, task, opts.k, opts.seed);
    let fold_of: HashMap<&str, usize> = assignment
        .iter()
        .map(|a| (a.subject_id.as_str(), a.fold))
        .collect();

    let folds = (0..opts.k)
        .into_par_iter()
        .map(|fold| run_fold(ds, task, model, opts, &fold_of, fold))
        .collect::<Result<Vec<_>>>()?;

    let fold_aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
    let excluded_folds: Vec<usize> = folds
        .iter()
        .filter(|f| f.auc.is_none())
        .map(|f| f.fold)
        .collect();
    if fold_aucs.is_empty() {
        return Err(invalid(format!(
            "no fold of task {task} has both classes in its test set"
        )));
    }
    if !excluded_folds.is_empty() {
        log::warn!(
            "{task}/{model}: folds {excluded_folds:?} lack a class in test and are excluded"
        );
    }
    let (mean_auc, std_auc) = mean_std(&fold_aucs);
    Ok(CvReport {
        task,
        model,
        k: opts.k,
        seed: opts.seed,
        folds,
        fold_aucs,
        mean_auc,
        std_auc,
        excluded_folds,
        assignment,
    })
}

fn run_fold(
    ds: &CohortDataset,
    task: Task,
    model: Model,
    opts: &CvOptions,
    fold_of: &HashMap<&str, usize>,
    fold: usize,
) -> Result<FoldResult> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in ds.rows() {
        match fold_of.get(r.subject_id.as_str()) {
            Some(&f) if f == fold => test.push(r),
            Some(_) => train.push(r),
            None => {}
        }
    }
    let train_subjects: HashSet<&str> = train.iter().map(|r| r.subject_id.as_str()).collect();
    let test_subjects: HashSet<&str> = test.iter().map(|r| r.subject_id.as_str()).collect();
    assert!(
        train_subjects.is_disjoint(&test_subjects),
        "fold {fold} shares subjects between train and test"
    );

    let mut result = FoldResult {
        fold,
        n_train_subjects: train_subjects.len(),
        n_test_subjects: test_subjects.len(),
        auc: None,
    };
    let test_has_both = [task.negative(), task.positive()]
        .iter()
        .all(|l| test.iter().any(|r| r.label == *l));
    if !test_has_both {
        return Ok(result);
    }

    let raw: Vec<&[f64]> = train.iter().map(|r| r.features.as_slice()).collect();
    let z = Standardizer::fit(&raw);
    let x: Vec<Vec<f64>> = raw.iter().map(|r| z.apply(r)).collect();
    let y: Vec<bool> = train.iter().map(|r| r.label == task.positive()).collect();
    let scorer: Box<dyn Fn(&[f64]) -> f64 + Send + Sync> = match model {
        Model::Gnb => {
            let m = gnb_fit(&x, &y)?;
            Box::new(move |v| gnb_score(&m, v))
        }
        Model::Svm => {
            let svm_opts = SvmOptions {
                seed: derive_seed(opts.svm.seed, &[fold as u64]),
                ..opts.svm.clone()
            };
            let m = svm_fit(&x, &y, &svm_opts)?;
            Box::new(move |v| svm_score(&m, v))
        }
    };

    // subject -> (is positive, score sum, epoch count)
    let mut per_subject: BTreeMap<&str, (bool, f64, usize)> = BTreeMap::new();
    for r in &test {
        let s = scorer(&z.apply(&r.features));
        let e = per_subject.entry(r.subject_id.as_str()).or_insert((
            r.label == task.positive(),
            0.0,
            0,
        ));
        e.1 += s;
        e.2 += 1;
    }
    let scores: Vec<f64> = per_subject
        .values()
        .map(|(_, s, n)| s / *n as f64)
        .collect();
    let labels: Vec<bool> = per_subject.values().map(|(l, _, _)| *l).collect();
    result.auc = Some(auc(&scores, &labels)?);
    Ok(result)
}

/// Mean AUCs of `n_permutations` runs with subject labels shuffled among
/// the task's subjects; fold construction and model seeds are unchanged.
pub fn permutation_null(
    ds: &CohortDataset,
    task: Task,
    model: Model,
    opts: &CvOptions,
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let subjects: Vec<(String, Label)> = ds
        .subjects()
        .into_iter()
        .filter(|(_, l)| *l == task.negative() || *l == task.positive())
        .collect();
    (0..n_permutations)
        .map(|p| {
            let mut labels: Vec<Label> = subjects.iter().map(|(_, l)| *l).collect();
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                seed,
                &[p as u64],
            )));
            let relabel: BTreeMap<String, Label> = subjects
                .iter()
                .map(|(s, _)| s.clone())
                .zip(labels)
                .collect();
            Ok(cross_validate(&ds.relabeled(&relabel)?, task, model, opts)?.mean_auc)
        })
        .collect()
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub feature: String,
    pub classifier: Model,
    pub task: Task,
    pub mean_auc: f64,
    pub std_auc: f64,
}

/// `feature,classifier,task,mean_auc,std_auc`.
pub fn write_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::CohortRow;
    use super::*;

    fn cohort(sizes: [(Label, usize); 3], shift: f64, epochs: usize) -> CohortDataset {
        let mut rows = Vec::new();
        for (label, n) in sizes {
            let center = match label {
                Label::Cn => 0.0,
                Label::Mci => shift / 2.0,
                Label::Ad => shift,
            };
            for j in 0..n {
                for e in 0..epochs {
                    let jitter = ((j * 31 + e * 7) as f64).sin();
                    rows.push(CohortRow {
                        features: vec![center + jitter, jitter * 0.5],
                        subject_id: format!("{label}-{j}"),
                        label,
                    });
                }
            }
        }
        CohortDataset::new(rows).unwrap()
    }

    #[test]
    fn folds_partition_subjects() {
        let ds = cohort([(Label::Cn, 24), (Label::Mci, 31), (Label::Ad, 50)], 3.0, 2);
        for task in Task::ALL {
            let rep = cross_validate(&ds, task, Model::Gnb, &CvOptions::default()).unwrap();
            let n = ds
                .subjects()
                .iter()
                .filter(|(_, l)| *l == Label::Cn || *l == task.positive())
                .count();
            assert_eq!(rep.assignment.len(), n);
            let tested: usize = rep.folds.iter().map(|f| f.n_test_subjects).sum();
            assert_eq!(tested, n);
            for f in &rep.folds {
                assert_eq!(f.n_train_subjects + f.n_test_subjects, n);
            }
        }
    }

    #[test]
    fn separated_cohort_scores_high() {
        let ds = cohort(
            [(Label::Cn, 24), (Label::Mci, 31), (Label::Ad, 50)],
            10.0,
            3,
        );
        for model in Model::ALL {
            let rep = cross_validate(&ds, Task::CnVsAd, model, &CvOptions::default()).unwrap();
            assert!(rep.mean_auc >= 0.95, "{model}: {}", rep.mean_auc);
        }
    }

    #[test]
    fn missing_class_folds_flagged() {
        let ds = cohort([(Label::Cn, 2), (Label::Mci, 0), (Label::Ad, 3)], 10.0, 1);
        let rep = cross_validate(
            &ds,
            Task::CnVsAd,
            Model::Gnb,
            &CvOptions {
                k: 3,
                ..CvOptions::default()
            },
        )
        .unwrap();
        assert!(!rep.excluded_folds.is_empty());
        assert_eq!(rep.fold_aucs.len() + rep.excluded_folds.len(), 3);
    }

    #[test]
    fn too_few_subjects_rejected() {
        let ds = cohort([(Label::Cn, 1), (Label::Mci, 0), (Label::Ad, 3)], 1.0, 1);
        assert!(cross_validate(&ds, Task::CnVsAd, Model::Gnb, &CvOptions::default()).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let ds = cohort([(Label::Cn, 10), (Label::Mci, 10), (Label::Ad, 10)], 1.0, 2);
        let o = CvOptions {
            k: 5,
            seed: 9,
            ..CvOptions::default()
        };
        let a = cross_validate(&ds, Task::CnVsMci, Model::Svm, &o).unwrap();
        let b = cross_validate(&ds, Task::CnVsMci, Model::Svm, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standardizer_uses_training_stats() {
        let rows: Vec<&[f64]> = vec![&[1.0, 5.0], &[3.0, 5.0]];
        let z = Standardizer::fit(&rows);
        assert_eq!(z.apply(&[2.0, 5.0]), [0.0, 0.0]);
        assert_eq!(z.apply(&[3.0, 6.0]), [1.0, 1.0]);
    }
}

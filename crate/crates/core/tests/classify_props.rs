use std::collections::{BTreeMap, HashSet};

use eegcpd::classify::{
    auc, cross_validate, gnb_fit, gnb_score, svm_fit, svm_objective, CohortDataset, CohortRow,
    CvOptions, Label, Model, SvmModel, SvmOptions, Task,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn scored_instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=30).prop_flat_map(|n| {
        (
            prop::collection::vec(0i32..8, n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| {
                l.iter().any(|v| *v) && l.iter().any(|v| !*v)
            })
            .prop_map(|(s, l)| (s.into_iter().map(|v| v as f64 * 0.25).collect(), l))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_matches_pairwise_count((s, l) in scored_instance()) {
        prop_assert_eq!(auc(&s, &l).unwrap(), pairwise_auc(&s, &l));
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, l) in scored_instance(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).exp()).collect();
        prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
    }
}

#[test]
fn gnb_ignores_constant_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<Vec<f64>> = (0..40)
        .map(|i| vec![rng.random::<f64>() + (i % 2) as f64, rng.random::<f64>()])
        .collect();
    let y: Vec<bool> = (0..40).map(|i| i % 2 == 1).collect();
    let with_const: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], 7.5, r[1]]).collect();
    let m1 = gnb_fit(&x, &y).unwrap();
    let m2 = gnb_fit(&with_const, &y).unwrap();
    for (a, b) in x.iter().zip(&with_const) {
        assert!((gnb_score(&m1, a) - gnb_score(&m2, b)).abs() < 1e-9);
    }
}

/// Full-batch subgradient descent with a diminishing step, keeping the best iterate.
fn subgradient_oracle(x: &[Vec<f64>], y: &[bool], c: f64, iters: usize) -> f64 {
    let dim = x[0].len();
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut best = f64::INFINITY;
    for t in 1..=iters {
        let model = SvmModel {
            w: w.clone(),
            b,
            c,
            degenerate: false,
        };
        best = best.min(svm_objective(&model, x, y));
        let mut gw = w.clone();
        let mut gb = 0.0;
        for (r, l) in x.iter().zip(y) {
            let s = if *l { 1.0 } else { -1.0 };
            let m = s * (r.iter().zip(&w).map(|(a, v)| a * v).sum::<f64>() + b);
            if m < 1.0 {
                for (g, v) in gw.iter_mut().zip(r) {
                    *g -= c * s * v;
                }
                gb -= c * s;
            }
        }
        let eta = 0.05 / (t as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= eta * g;
        }
        b -= eta * gb;
    }
    best
}

#[test]
fn svm_reaches_the_subgradient_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..100 {
        let pos = i % 2 == 0;
        let shift = if pos { 0.8 } else { -0.8 };
        x.push(vec![
            shift + rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        ]);
        y.push(pos);
    }
    let m = svm_fit(
        &x,
        &y,
        &SvmOptions {
            c: 1.0,
            seed: 3,
            ..SvmOptions::default()
        },
    )
    .unwrap();
    let oracle = subgradient_oracle(&x, &y, 1.0, 1_000_000);
    let got = svm_objective(&m, &x, &y);
    assert!(got <= 1.02 * oracle, "{got} vs oracle {oracle}");
}

fn cohort(seed: u64) -> CohortDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (label, n) in [(Label::Cn, 24), (Label::Mci, 31), (Label::Ad, 50)] {
        let shift = match label {
            Label::Cn => 0.0,
            Label::Mci => 0.5,
            Label::Ad => 1.0,
        };
        for j in 0..n {
            let subject = format!("{label}-{j:03}");
            for _ in 0..3 {
                rows.push(CohortRow {
                    features: vec![
                        shift + rng.random::<f64>(),
                        rng.random::<f64>(),
                        rng.random::<f64>(),
                    ],
                    subject_id: subject.clone(),
                    label,
                });
            }
        }
    }
    CohortDataset::new(rows).unwrap()
}

#[test]
fn folds_never_leak_subjects() {
    let ds = cohort(1);
    for seed in 0..100 {
        for task in Task::ALL {
            let rep = cross_validate(
                &ds,
                task,
                Model::Gnb,
                &CvOptions {
                    seed,
                    ..CvOptions::default()
                },
            )
            .unwrap();
            let task_subjects: HashSet<String> = ds
                .subjects()
                .into_iter()
                .filter(|(_, l)| *l == task.negative() || *l == task.positive())
                .map(|(s, _)| s)
                .collect();
            let mut by_fold: BTreeMap<usize, HashSet<String>> = BTreeMap::new();
            for a in &rep.assignment {
                by_fold
                    .entry(a.fold)
                    .or_default()
                    .insert(a.subject_id.clone());
            }
            let covered: HashSet<String> = by_fold.values().flatten().cloned().collect();
            assert_eq!(covered, task_subjects);
            let total: usize = by_fold.values().map(|s| s.len()).sum();
            assert_eq!(total, task_subjects.len());
            for f in &rep.folds {
                assert_eq!(f.n_train_subjects + f.n_test_subjects, task_subjects.len());
            }
        }
    }
}

#[test]
fn cross_validation_is_reproducible() {
    let ds = cohort(2);
    let opts = CvOptions {
        seed: 5,
        ..CvOptions::default()
    };
    for model in Model::ALL {
        let a = cross_validate(&ds, Task::CnVsAd, model, &opts).unwrap();
        let b = cross_validate(&ds, Task::CnVsAd, model, &opts).unwrap();
        assert_eq!(a, b);
        let mean = a.fold_aucs.iter().sum::<f64>() / a.fold_aucs.len() as f64;
        assert!((a.mean_auc - mean).abs() < 1e-12);
        assert!(a.mean_auc > 0.8);
    }
}

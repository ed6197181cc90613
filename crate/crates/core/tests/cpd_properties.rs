use eegcpd::cpd::{
    cpd, cpd_als, cpd_gn, factor_match_score, gn_from, random_init, CpdOptions, Solver,
};
use eegcpd::synth::{make_tensor, SynthSpec};
use eegcpd::tensor::{khatri_rao, mttkrp, reconstruct, relative_error};
use eegcpd::{FactorSet, Tensor3};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn planted(dims: [usize; 3], rank: usize, snr_db: Option<f64>, seed: u64) -> (Tensor3, FactorSet) {
    make_tensor(&SynthSpec {
        dims,
        rank,
        snr_db,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().map(|v| v.abs()).fold(f64::MIN_POSITIVE, f64::max);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}

fn tensor_strategy(max: usize) -> impl Strategy<Value = Tensor3> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(e, s, f)| {
        prop::collection::vec(-1.0f64..1.0, e * s * f)
            .prop_map(move |d| Tensor3::new([e, s, f], d).unwrap())
    })
}

fn factor_strategy(dims: [usize; 3], rank: usize) -> impl Strategy<Value = FactorSet> {
    let n = rank * (dims[0] + dims[1] + dims[2]);
    (
        prop::collection::vec(-2.0f64..2.0, n),
        prop::collection::vec(0.1f64..3.0, rank),
    )
        .prop_map(move |(v, l)| {
            let (a, rest) = v.split_at(rank * dims[0]);
            let (b, c) = rest.split_at(rank * dims[1]);
            FactorSet::new(
                DVector::from_vec(l),
                [
                    DMatrix::from_column_slice(dims[0], rank, a),
                    DMatrix::from_column_slice(dims[1], rank, b),
                    DMatrix::from_column_slice(dims[2], rank, c),
                ],
            )
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unfold_fold_round_trip(t in tensor_strategy(6), mode in 0usize..3) {
        let m = t.unfold(mode).unwrap();
        prop_assert_eq!(Tensor3::fold(&m, mode, t.dims()).unwrap(), t);
    }

    #[test]
    fn mttkrp_matches_definition(t in tensor_strategy(6), rank in 1usize..4, seed in any::<u64>(), mode in 0usize..3) {
        let fs = random_init(t.dims(), rank, seed);
        let f = fs.factors();
        // column index of the mode-n unfolding runs over the other two modes, later mode fastest
        let kr = match mode {
            0 => khatri_rao(&f[1], &f[2]).unwrap(),
            1 => khatri_rao(&f[0], &f[2]).unwrap(),
            _ => khatri_rao(&f[0], &f[1]).unwrap(),
        };
        let expected = t.unfold(mode).unwrap() * kr;
        let got = mttkrp(&t, &fs, mode).unwrap();
        prop_assert!(max_rel_diff(expected.as_slice(), got.as_slice()) < 1e-12);
    }

    #[test]
    fn normalization_keeps_the_model(fs in (1usize..5).prop_flat_map(|r| factor_strategy([4, 3, 5], r))) {
        let n = fs.normalized();
        prop_assert!(max_rel_diff(reconstruct(&fs).data(), reconstruct(&n).data()) < 1e-12);
        prop_assert!(n.lambda().as_slice().windows(2).all(|w| w[0] >= w[1]));
        for m in n.factors() {
            for c in m.column_iter() {
                let norm = c.norm();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
            }
        }
        for m in [n.spatial(), n.spectral()] {
            for c in m.column_iter() {
                let big = c.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
                prop_assert!(big >= 0.0);
            }
        }
    }

    #[test]
    fn column_order_is_irrelevant(fs in factor_strategy([3, 4, 2], 3), perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let p = fs.permuted(&perm).unwrap();
        prop_assert!(max_rel_diff(reconstruct(&fs).data(), reconstruct(&p).data()) < 1e-14);
    }

    #[test]
    fn als_trace_never_increases(seed in 0u64..1000, rank in 1usize..4) {
        let (t, _) = planted([7, 5, 9], 3, Some(10.0), seed);
        let r = cpd_als(&t, &CpdOptions { rank, n_starts: 1, seed, ..CpdOptions::default() }).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn gn_accepted_steps_descend(seed in 0u64..1000, rank in 1usize..4) {
        let (t, _) = planted([7, 5, 9], 3, Some(10.0), seed);
        let r = cpd_gn(&t, &CpdOptions { rank, n_starts: 1, seed, ..CpdOptions::default() }).unwrap();
        for w in r.trace.windows(2) {
            prop_assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn all_zero_lambda_reconstructs_zero() {
    let fs = random_init([3, 2, 4], 2, 1);
    let z = FactorSet::new(DVector::zeros(2), fs.factors().clone()).unwrap();
    assert!(reconstruct(&z).data().iter().all(|v| *v == 0.0));
    let (t, _) = planted([3, 2, 4], 1, None, 0);
    assert_eq!(relative_error(&t, &z).unwrap(), 1.0);
    assert!(relative_error(&Tensor3::zeros([3, 2, 4]), &fs).is_err());
}

/// Best rank-1 approximation by higher-order power iteration, run to a fixed point.
fn hopm(t: &Tensor3, iters: usize) -> (f64, [DVector<f64>; 3]) {
    let [ne, ns, nf] = t.dims();
    let mut u = [
        DVector::from_element(ne, 1.0),
        DVector::from_element(ns, 1.0),
        DVector::from_element(nf, 1.0),
    ];
    for x in &mut u {
        x.normalize_mut();
    }
    let mut sigma = 0.0;
    for _ in 0..iters {
        for mode in 0..3 {
            let mut v = DVector::zeros(t.dims()[mode]);
            for e in 0..ne {
                for s in 0..ns {
                    for f in 0..nf {
                        let x = t.get(e, s, f);
                        let idx = [e, s, f];
                        let w: f64 = (0..3)
                            .filter(|m| *m != mode)
                            .map(|m| u[m][idx[m]])
                            .product();
                        v[idx[mode]] += x * w;
                    }
                }
            }
            sigma = v.norm();
            u[mode] = v / sigma;
        }
    }
    (sigma, u)
}

#[test]
fn relative_error_matches_rank_one_oracle() {
    // Nonnegative entries keep the dominant rank-1 term well separated, so
    // power iteration converges to the global best rank-1 fit.
    let data: Vec<f64> = (0..5 * 4 * 6)
        .map(|i| ((i * 37 % 23) as f64 + 1.0) / 23.0)
        .collect();
    let t = Tensor3::new([5, 4, 6], data).unwrap();
    let (sigma, u) = hopm(&t, 2000);
    let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    let fs = FactorSet::new(
        DVector::from_element(1, sigma),
        [col(&u[0]), col(&u[1]), col(&u[2])],
    )
    .unwrap();
    // at a stationary point ‖X − σ u∘v∘w‖² = ‖X‖² − σ²
    let oracle = ((t.norm_sq() - sigma * sigma) / t.norm_sq()).sqrt();
    assert!((relative_error(&t, &fs).unwrap() - oracle).abs() < 1e-10);

    let als = cpd_als(
        &t,
        &CpdOptions {
            rank: 1,
            tol: 1e-14,
            max_iters: 2000,
            ..CpdOptions::default()
        },
    )
    .unwrap();
    assert!((als.rel_error - oracle).abs() < 1e-8);
}

#[test]
fn gn_starting_at_truth_stays_put() {
    let (t, truth) = planted([10, 6, 8], 3, None, 4);
    let r = gn_from(&t, &truth, &CpdOptions::with_rank(3)).unwrap();
    assert_eq!(r.iterations, 0);
    assert!(r.rel_error < 1e-10);
}

#[test]
fn gn_beats_generating_factors_on_noisy_data() {
    let (t, truth) = planted([30, 19, 89], 3, Some(20.0), 8);
    let planted_fit = 1.0 - relative_error(&t, &truth).unwrap().powi(2);
    let r = cpd_gn(&t, &CpdOptions::with_rank(3)).unwrap();
    assert!(r.fit >= planted_fit, "{} < {planted_fit}", r.fit);
}

#[test]
fn solvers_agree_on_noiseless_planted_tensors() {
    for (i, rank) in (1..=5).enumerate() {
        let (t, truth) = planted([12 + i, 9, 20], rank, None, 100 + i as u64);
        let base = CpdOptions {
            rank,
            tol: 1e-12,
            max_iters: 1000,
            seed: i as u64,
            ..CpdOptions::default()
        };
        let als = cpd(
            &t,
            &CpdOptions {
                solver: Solver::Als,
                ..base.clone()
            },
        )
        .unwrap();
        let gn = cpd(
            &t,
            &CpdOptions {
                solver: Solver::Gn,
                ..base
            },
        )
        .unwrap();
        assert!(
            (als.fit - gn.fit).abs() < 1e-4,
            "rank {rank}: {} vs {}",
            als.fit,
            gn.fit
        );
        assert!(factor_match_score(&gn.factors, &truth).unwrap() > 0.99);
    }
}

#[test]
fn independent_runs_are_stable() {
    let (t, _) = planted([40, 19, 89], 3, None, 21);
    let a = cpd_als(
        &t,
        &CpdOptions {
            seed: 1,
            tol: 1e-10,
            ..CpdOptions::default()
        },
    )
    .unwrap();
    let b = cpd_als(
        &t,
        &CpdOptions {
            seed: 2,
            tol: 1e-10,
            ..CpdOptions::default()
        },
    )
    .unwrap();
    assert!(factor_match_score(&a.factors, &b.factors).unwrap() > 0.99);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let (t, _) = planted([15, 7, 11], 2, Some(15.0), 5);
    for solver in [Solver::Als, Solver::Gn] {
        let o = CpdOptions {
            rank: 2,
            solver,
            seed: 77,
            ..CpdOptions::default()
        };
        let a = cpd(&t, &o).unwrap();
        let b = cpd(&t, &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.factors.fingerprint(), b.factors.fingerprint());
    }
}

#[test]
fn tensor_and_factor_files_round_trip() {
    let dir = std::env::temp_dir().join(format!("eegcpd-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (t, truth) = planted([4, 3, 5], 2, Some(5.0), 2);
    t.save(dir.join("t.bin")).unwrap();
    assert_eq!(Tensor3::load(dir.join("t.bin")).unwrap(), t);
    let bytes = std::fs::read(dir.join("t.bin")).unwrap();
    assert_eq!(bytes.len(), 24 + 8 * 60);
    assert_eq!(&bytes[..8], &4u64.to_le_bytes());
    truth.save(dir.join("f.json")).unwrap();
    assert_eq!(FactorSet::load(dir.join("f.json")).unwrap(), truth);
    std::fs::remove_dir_all(dir).unwrap();
}

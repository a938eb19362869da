use awa_core::attack::{AttackConfig, AttackProblem, QBounds};
use awa_core::autodiff::Array;
use awa_core::bayesopt::*;
use awa_core::fedsim::{client_update, Dataset, RoundRecord, TrainingConfig};
use awa_core::model::{build_model, ArchKind, InputShape};
use awa_core::{rng, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn kernel_1d(l: f64) -> Kernel {
    Kernel {
        signal_var: 1.0,
        length_scales: vec![l],
    }
}

fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
    xs.iter().map(|&x| vec![x]).collect()
}

#[test]
fn posterior_matches_dense_solve_on_three_points() {
    let xs = [0.1, 0.45, 0.8];
    let ys = [0.3, -1.2, 2.0];
    let k = kernel_1d(0.3);
    let gp = GpState::fit(k.clone(), &pts(&xs), &ys).unwrap();
    let (mean, std) = standardization(&ys);
    let y = DVector::from_iterator(3, ys.iter().map(|v| (v - mean) / std));
    let gram = DMatrix::from_fn(3, 3, |i, j| {
        k.eval(&[xs[i]], &[xs[j]]) + if i == j { gp.jitter } else { 0.0 }
    });
    let inv = gram.clone().try_inverse().unwrap();
    for q in [0.0, 0.2, 0.45, 0.63, 1.0] {
        let kq = DVector::from_iterator(3, xs.iter().map(|&x| k.eval(&[q], &[x])));
        let mu = (kq.transpose() * &inv * &y)[0];
        let var = k.eval(&[q], &[q]) - (kq.transpose() * &inv * &kq)[0];
        let p = gp_posterior(&gp, &[q]);
        assert!((p.mu - mu).abs() < 1e-10, "mu at {q}");
        assert!((p.sigma2 - var.max(0.0)).abs() < 1e-10, "var at {q}");
    }
}

#[test]
fn cholesky_matches_nalgebra() {
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0]);
    let mut mine: Vec<f64> = a.transpose().iter().copied().collect();
    assert!(cholesky(&mut mine, 3));
    let l = a.cholesky().unwrap().l();
    for i in 0..3 {
        for j in 0..3 {
            assert!((mine[i * 3 + j] - l[(i, j)]).abs() < 1e-14);
        }
    }
    let mut indefinite = vec![1.0, 2.0, 2.0, 1.0];
    assert!(!cholesky(&mut indefinite, 2));
}

#[test]
fn posterior_interpolates_and_decays() {
    let gp = GpState::fit(kernel_1d(0.1), &pts(&[0.2, 0.5, 0.9]), &[1.0, 3.0, 2.0]).unwrap();
    for (i, x) in [0.2, 0.5, 0.9].into_iter().enumerate() {
        let p = gp_posterior(&gp, &[x]);
        assert!((p.mu - gp.standardized()[i]).abs() < 1e-4);
        assert!(p.sigma2 < 1e-4);
    }
    let far = gp_posterior(&gp, &[0.9 + 10.0 * 0.1 + 0.5]);
    assert!(far.mu.abs() < 1e-12);
    assert!((far.sigma2 - 1.0).abs() < 1e-12);
    let d = gp.destandardize(gp_posterior(&gp, &[0.5]));
    assert!((d.mu - 3.0).abs() < 1e-4);
}

#[test]
fn duplicate_points_still_factor() {
    let gp = GpState::fit(
        kernel_1d(0.5),
        &pts(&[0.3, 0.3, 0.3, 0.7]),
        &[1.0, 1.0, 1.0, 0.0],
    )
    .unwrap();
    assert!(gp.jitter >= JITTER_START && gp.jitter <= JITTER_MAX);
}

#[test]
fn expected_improvement_examples() {
    assert_eq!(expected_improvement(2.0, 0.0, 1.0), 0.0);
    assert_eq!(expected_improvement(0.5, 0.0, 1.0), 0.5);
    assert!((expected_improvement(1.0, 1.0, 1.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
}

#[test]
fn expected_improvement_matches_monte_carlo() {
    let mut r = rng::rng_from(2024);
    for _ in 0..20 {
        let mu: f64 = r.gen_range(-1.0..1.0);
        let sigma: f64 = r.gen_range(0.05..0.5);
        let f_min: f64 = r.gen_range(-1.0..1.0);
        let draws = 1_000_000;
        let mc = (0..draws)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                (f_min - (mu + sigma * z)).max(0.0)
            })
            .sum::<f64>()
            / draws as f64;
        let ei = expected_improvement(mu, sigma * sigma, f_min);
        assert!(
            (ei - mc).abs() < 1e-3,
            "mu {mu} sigma {sigma} f_min {f_min}: {ei} vs {mc}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ei_is_nonnegative_and_grows_with_sigma(mu in -3.0f64..3.0, s in 1e-6f64..3.0, f_min in -3.0f64..3.0, ds in 1e-3f64..1.0) {
        prop_assert!(expected_improvement(mu, s * s, f_min) >= 0.0);
        if mu >= f_min {
            let lo = expected_improvement(mu, s * s, f_min);
            let hi = expected_improvement(mu, (s + ds) * (s + ds), f_min);
            prop_assert!(hi > lo || (lo == 0.0 && hi == 0.0 && (mu - f_min) / s > 30.0), "{} {}", lo, hi);
        }
    }

    #[test]
    fn posterior_variance_below_prior(
        xs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), 1..8),
        q in prop::collection::vec(0.0f64..1.0, 2),
        l in 0.05f64..2.0,
    ) {
        let ys: Vec<f64> = xs.iter().map(|p| p[0] - 2.0 * p[1]).collect();
        let k = Kernel { signal_var: 1.3, length_scales: vec![l, l] };
        let gp = GpState::fit(k.clone(), &xs, &ys).unwrap();
        let p = gp_posterior(&gp, &q);
        prop_assert!(p.sigma2 >= 0.0);
        prop_assert!(p.sigma2 <= k.eval(&q, &q) + 1e-10);
    }
}

#[test]
fn proposal_dominates_its_candidates() {
    let center = vec![vec![0.5; 6]];
    let gp = GpState::fit(Kernel::unit(6), &center, &[1.0]).unwrap();
    let prop = propose_next(&gp, 17);
    assert!(prop.point.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!((ei_at(&gp, &prop.point) - prop.ei).abs() < 1e-15);
    for c in shifted_halton(6, CANDIDATES, 17) {
        assert!(prop.ei >= ei_at(&gp, &c));
    }
    let gp = GpState::fit(kernel_1d(0.2), &pts(&[0.2, 0.8]), &[0.0, 5.0]).unwrap();
    let prop = propose_next(&gp, 3);
    assert!(prop.ei >= ei_at(&gp, &[0.2]) && prop.ei >= ei_at(&gp, &[0.8]));
}

#[test]
fn proposal_finds_grid_argmax_in_one_dimension() {
    let gp = GpState::fit(kernel_1d(0.15), &pts(&[0.1, 0.4, 0.75]), &[1.0, 0.2, 0.6]).unwrap();
    let grid = 100_000;
    let (best_x, _) = (0..=grid)
        .map(|i| i as f64 / grid as f64)
        .map(|x| (x, ei_at(&gp, &[x])))
        .fold(
            (0.0, f64::NEG_INFINITY),
            |b, c| if c.1 > b.1 { c } else { b },
        );
    let prop = propose_next(&gp, 5);
    assert!(
        (prop.point[0] - best_x).abs() < 1e-2,
        "{} vs {best_x}",
        prop.point[0]
    );
}

#[test]
fn hyperparameter_fit_defaults_and_standardization() {
    let points = pts(&[0.1, 0.5, 0.9]);
    let gp = fit_hyperparameters(&points, &[2.0, 2.0, 2.0], &[0..1]).unwrap();
    assert_eq!(gp.kernel, Kernel::unit(1));
    let gp = fit_hyperparameters(&points, &[2.0, 7.0, -1.0], &[0..1]).unwrap();
    assert!(gp.standardized().iter().sum::<f64>().abs() < 1e-12);
    assert!(fit_hyperparameters(&points[..1], &[1.0], &[0..1]).is_err());
}

#[test]
fn hyperparameter_fit_recovers_generating_scale() {
    // A draw from the prior with length scale 0.2 on 40 points.
    let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
    let truth = kernel_1d(0.2);
    let gram = DMatrix::from_fn(40, 40, |i, j| {
        truth.eval(&[xs[i]], &[xs[j]]) + if i == j { 1e-9 } else { 0.0 }
    });
    let l = gram.cholesky().unwrap().l();
    let mut r = rng::rng_from(8);
    let z = DVector::from_iterator(40, (0..40).map(|_| StandardNormal.sample(&mut r)));
    let y = l * z;
    let gp = fit_hyperparameters(&pts(&xs), y.as_slice(), &[0..1]).unwrap();
    let chosen = gp.kernel.length_scales[0];
    assert!([0.1, 0.2, 0.4].contains(&chosen), "chose {chosen}");
}

#[test]
fn observation_set_bookkeeping() {
    let mut obs = ObservationSet::new(2, 0);
    obs.insert(&[0.5, 0.5], 3.0);
    let p = obs.insert(&[0.5, 0.5], f64::INFINITY);
    assert_ne!(p, vec![0.5, 0.5]);
    assert!(p.iter().all(|v| (v - 0.5).abs() <= DUPLICATE_JITTER));
    obs.insert(&[0.1, 0.9], 1.0);
    obs.insert(&[0.2, 0.9], f64::NAN);
    assert_eq!(obs.values().unwrap(), vec![3.0, 3.0, 1.0, 3.0]);
    assert_eq!(obs.replaced(), vec![false, true, false, true]);
    assert_eq!(obs.best(), Some((2, 1.0)));
    let mut empty = ObservationSet::new(1, 0);
    empty.insert(&[0.3], f64::INFINITY);
    assert!(empty.values().is_none() && empty.best().is_none());
}

fn bowl(u: &[f64]) -> f64 {
    u.iter().map(|v| (v - 0.3).powi(2)).sum()
}

#[test]
fn minimization_loop_is_deterministic_and_monotone() {
    let cfg = SearchConfig {
        budget: 14,
        initial: 5,
        seed: 9,
        groups: vec![0..2, 2..3],
    };
    let a = bo_minimize(3, &cfg, bowl).unwrap();
    let b = bo_minimize(3, &cfg, bowl).unwrap();
    assert_eq!(a.len(), 14);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            (x.index, x.phase, &x.point, x.f.to_bits()),
            (y.index, y.phase, &y.point, y.f.to_bits())
        );
    }
    assert!(a[..5].iter().all(|t| t.phase == TrialPhase::Random));
    assert!(a[5..].iter().all(|t| t.phase == TrialPhase::Guided));
    assert!(a.windows(2).all(|w| w[1].cum_min <= w[0].cum_min));
    let bad = SearchConfig {
        budget: 3,
        initial: 3,
        ..cfg
    };
    assert!(bo_minimize(3, &bad, bowl).is_err());
}

#[test]
fn loop_falls_back_when_every_trial_diverges() {
    let cfg = SearchConfig {
        budget: 4,
        initial: 2,
        seed: 1,
        groups: vec![0..2],
    };
    let trials = bo_minimize(2, &cfg, |_| f64::INFINITY).unwrap();
    assert!(trials[2..].iter().all(|t| t.phase == TrialPhase::Fallback));
    assert!(matches!(
        best_trial(&trials),
        Err(Error::AllTrialsDiverged(4))
    ));
}

fn small_problem() -> AttackProblem {
    let input = InputShape::flat(6);
    let (arch, theta) = build_model(ArchKind::MlpSmall, input, 3, 1).unwrap();
    let mut r = rng::rng_from(2);
    let x = Array::new(vec![2, 1, 1, 6], (0..12).map(|_| r.gen()).collect()).unwrap();
    let data = Dataset::new(x, vec![0, 2], 3).unwrap();
    let cfg = TrainingConfig::new(1, 1, 0.01, 2, 0).unwrap();
    let (end, trace) = client_update(&arch, &theta, &data, &cfg, 0).unwrap();
    let labels = data.gather(&trace.permutations[0]).1;
    let record = RoundRecord {
        arch,
        theta_start: theta,
        theta_end: end,
        config: cfg,
        dataset_size: 2,
        round: 0,
    };
    AttackProblem::from_round(&record, labels, 1).unwrap()
}

#[test]
fn awa_is_reproducible_and_reruns_the_best_trial() {
    let problem = small_problem();
    let atk = AttackConfig {
        iterations: 15,
        init_seed: 4,
        ..AttackConfig::default()
    };
    let bo = BoConfig {
        n_bo: 5,
        n_init: 3,
        bounds: QBounds::default(),
        seed: 11,
    };
    let a = awa_optimize(&problem, &atk, &bo).unwrap();
    let b = awa_optimize(&problem, &atk, &bo).unwrap();
    assert_eq!(a.q_star, b.q_star);
    assert!(bo.bounds.contains(&a.q_star));
    assert_eq!(
        a.attack.f_value.to_bits(),
        a.trials[a.best_trial].f.to_bits()
    );
    assert!(a.trials.iter().all(|t| t.f >= a.trials[a.best_trial].f));

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_trials_csv(&pa, &a.trials, &bo.bounds).unwrap();
    write_trials_csv(&pb, &b.trials, &bo.bounds).unwrap();
    let text = std::fs::read_to_string(&pa).unwrap();
    assert_eq!(text, std::fs::read_to_string(&pb).unwrap());
    assert!(text.starts_with("trial,phase,q_cv,q_bn,q_fc,q_en,p_mean,p_var,f,cum_min\n0,random,"));
    write_timings_csv(&dir.path().join("t.csv"), &a.trials).unwrap();
}

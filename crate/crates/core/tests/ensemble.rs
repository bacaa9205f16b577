use rse_heat::diffusivity::estimate_a2_slope;
use rse_heat::dynamics::{simulate_with, Scheme, Stepper, TrajectoryOptions};
use rse_heat::ensemble::{
    clt_l1_metric, concentration_stats, ks_distance, ks_gaussianity, run_ensemble, CltFunctional, EnsembleConfig,
    InitialCondition, KsNull, DEFAULT_PROBE_X,
};
use rse_heat::environment::{cosine_potential, sample_env, EnvModel};
use rse_heat::quadrature::GaussHermite;
use rse_heat::rng::{stream_rng, SimRng, Stream};
use rse_heat::{Error, Grid};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn config(n_cells: usize, t_end: f64, n_env: usize, n_noise: usize, seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        n_env,
        n_noise,
        n_cells,
        dt: 1e-3,
        t_end,
        checkpoints: EnsembleConfig::uniform_checkpoints(t_end, 1e-3, 4),
        master_seed: seed,
        scheme: Scheme::SemiImplicit,
        initial: InitialCondition::Zero,
        workers: None,
    }
}

#[test]
fn replicas_match_brute_force_trajectories() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let mut cfg = config(8, 0.2, 2, 2, 42);
    cfg.initial = InitialCondition::Constant { value: 0.3 };
    let stats = run_ensemble(&cfg, &model).unwrap();
    let probes: Vec<usize> = DEFAULT_PROBE_X.iter().map(|&x| grid.nearest_cell(x)).collect();
    let opts = TrajectoryOptions { probe_cells: probes, keep_field_every: None };
    for e in 0..2u64 {
        let sigma = sample_env(&model, &mut stream_rng(42, Stream::Environment, &[e]));
        assert_eq!(stats.env_points[e as usize], sigma);
        for w in 0..2u64 {
            let mut stepper = Stepper::new(&grid, 1e-3, Scheme::SemiImplicit).unwrap();
            let mut rng = stream_rng(42, Stream::Noise, &[e, w]);
            let tr = simulate_with(&mut stepper, &model, &sigma, &grid.constant(0.3), 0.2, &cfg.checkpoints, &mut rng, &opts)
                .unwrap();
            let rec = &stats.records[(e * 2 + w) as usize];
            assert_eq!((rec.env, rec.noise), (e as usize, w as usize));
            for (i, r) in tr.records.iter().enumerate() {
                assert_eq!(rec.mean_mode[i], r.mean_mode);
                assert_eq!(rec.fluct_norm_sq[i], r.fluct_norm_sq);
                assert_eq!(rec.probes[i], r.probes);
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let mut cfg = config(8, 0.1, 5, 3, 7);
    cfg.workers = Some(1);
    let a = run_ensemble(&cfg, &model).unwrap();
    cfg.workers = Some(3);
    let b = run_ensemble(&cfg, &model).unwrap();
    cfg.workers = None;
    let c = run_ensemble(&cfg, &model).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn degenerate_ensembles_are_rejected() {
    let grid = Grid::new(4).unwrap();
    let model = EnvModel::zero(&grid);
    for (ne, nw) in [(1, 1), (0, 5), (5, 0)] {
        let r = run_ensemble(&config(4, 0.1, ne, nw, 1), &model);
        assert!(matches!(r, Err(Error::Config(_))), "{ne} x {nw}");
    }
    let r = run_ensemble(&config(8, 0.1, 2, 2, 1), &model);
    assert!(matches!(r, Err(Error::Conformity { .. })));
}

#[test]
fn free_field_mean_mode_is_brownian() {
    let grid = Grid::new(4).unwrap();
    let stats = run_ensemble(&config(4, 2.0, 100, 60, 3), &EnvModel::zero(&grid)).unwrap();
    for s in stats.summaries() {
        let rel = s.var_mean_mode / s.t - 1.0;
        assert!(rel.abs() < 4.0 * s.var_mean_mode_se / s.t, "t = {}: {}", s.t, rel);
        assert!(s.fluct_var_cells.iter().all(|&v| v >= 0.0));
    }
    let slope = estimate_a2_slope(&stats, 0.2).unwrap();
    assert!((slope.a2_hat - 1.0).abs() < 4.0 * slope.se);
    let last = stats.final_index();
    let ks = ks_gaussianity(&stats.scaled_mean_modes_at(last), 1.0).unwrap();
    assert!(ks.pass, "D_n = {}", ks.d_n);
}

#[test]
fn clt_metric_is_positive_finite_with_floors() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let stats = run_ensemble(&config(8, 1.0, 6, 5, 9), &model).unwrap();
    let mut battery = CltFunctional::default_battery();
    battery.push(CltFunctional::Constant);
    let rows = clt_l1_metric(&stats, &battery, 0.9).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        for v in &r.values[..4] {
            assert!(v.metric.is_finite() && v.metric > 0.0);
            assert!(v.floor.is_finite() && v.floor >= 0.0);
        }
        // f = 1 matches its limit exactly
        assert_eq!(r.values[4].metric, 0.0);
        assert!(r.combined().is_finite());
    }
    assert!(matches!(clt_l1_metric(&stats, &[], 0.9), Err(Error::Config(_))));
}

#[test]
fn functional_references_match_fine_quadrature() {
    let rule = GaussHermite::new(64);
    for a in [0.3, 0.8, 1.0, 1.7] {
        let h = 1e-4 * a;
        let phi = |y: f64| (-0.5 * y * y / (a * a)).exp() / (a * (2.0 * std::f64::consts::PI).sqrt());
        for f in CltFunctional::default_battery() {
            let oracle: f64 = (-120_000..=120_000).map(|i| {
                let y = i as f64 * h;
                f.eval(y, 0.0) * phi(y) * h
            })
            .sum();
            let r = f.reference(a, &rule);
            assert!((r - oracle).abs() < 1e-7, "{} at a = {a}: {r} vs {oracle}", f.name());
        }
    }
    // closed forms
    assert!((CltFunctional::CosMean.reference(1.3, &rule) - (-0.5 * 1.69f64).exp()).abs() < 1e-13);
    let g = CltFunctional::GaussMean.reference(0.7, &rule);
    assert!((g - 1.0 / (1.0 + 2.0 * 0.49f64).sqrt()).abs() < 1e-13);
}

#[test]
fn ks_null_quantile_is_near_asymptotic_value() {
    // sqrt(n) D_n has 99% quantile near 1.628 for large n
    let null = KsNull::simulate(1000, 2000, 17);
    let scaled = null.quantile_99 * (1000f64).sqrt();
    assert!((scaled - 1.628).abs() < 0.1, "{scaled}");
}

#[test]
fn ks_detects_wrong_variance() {
    let mut rng = SimRng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let samples: Vec<f64> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
    assert!(ks_gaussianity(&samples, 1.0).unwrap().pass);
    assert!(!ks_gaussianity(&samples, 1.2).unwrap().pass);
    assert!(ks_distance(samples, 1.0) < 0.05);
    assert!(ks_gaussianity(&[0.0; 10], 1.0).is_err());
}

#[test]
fn concentration_needs_a_doubling_span() {
    let grid = Grid::new(4).unwrap();
    let mut cfg = config(4, 0.4, 2, 2, 1);
    cfg.checkpoints = vec![0.3, 0.4];
    let stats = run_ensemble(&cfg, &EnvModel::zero(&grid)).unwrap();
    assert!(concentration_stats(&stats).is_err());
}

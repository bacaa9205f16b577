use proptest::prelude::*;
use rand::SeedableRng;
use rse_heat::diffusivity::sample_pi;
use rse_heat::dynamics::{
    environment_view, simulate_trajectory, step_exact_free, step_semi_implicit, Scheme, SimState, Stepper,
    BLOW_UP_THRESHOLD,
};
use rse_heat::environment::{cosine_potential, eval_v, sample_env, EnvModel, EnvPoint};
use rse_heat::lattice::{sample_wiener_shape, Direction};
use rse_heat::quadrature::{sample_variance, MeanEstimate};
use rse_heat::rng::{stream_rng, SimRng, Stream};
use rse_heat::{Error, Grid};

fn modes(grid: &Grid, u: &[f64]) -> Vec<f64> {
    grid.transform().apply(u, Direction::Forward).unwrap()
}

#[test]
fn semi_implicit_stationary_variance_matches_scheme_prediction() {
    // per mode a' = g (a + sqrt(dt) z), g = 1 / (1 + dt mu / 2), whose
    // stationary variance is (1 / mu) / (1 + dt mu / 4)
    let grid = Grid::new(16).unwrap();
    let model = EnvModel::zero(&grid);
    let dt = 2e-3;
    let mut stepper = Stepper::new(&grid, dt, Scheme::SemiImplicit).unwrap();
    let ks = [1usize, 4, 10, 15];
    let mut samples: Vec<Vec<f64>> = vec![vec![]; ks.len()];
    for r in 0..40u64 {
        let mut rng = stream_rng(1, Stream::Noise, &[r]);
        let mut st = SimState::new(grid.constant(0.0), EnvPoint::new(vec![]));
        for step in 1..=50_000 {
            stepper.advance(&model, &mut st, &mut rng).unwrap();
            if step >= 1000 && step % 250 == 0 {
                let c = modes(&grid, &st.u);
                for (s, &k) in samples.iter_mut().zip(&ks) {
                    s.push(c[k]);
                }
            }
        }
    }
    let mu = grid.eigenvalues();
    for (s, &k) in samples.iter().zip(&ks) {
        let predicted = 1.0 / (mu[k] * (1.0 + dt * mu[k] / 4.0));
        let rel = sample_variance(s) / predicted - 1.0;
        let tol = 4.0 * (2.0 / s.len() as f64).sqrt();
        assert!(rel.abs() < tol, "k = {k}: rel err {rel} (tol {tol})");
    }
}

#[test]
fn exact_free_matches_ou_transition() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::zero(&grid);
    let t = 0.05;
    let mut stepper = Stepper::new(&grid, t, Scheme::ExactFree).unwrap();
    let v0 = grid.cosine_mode(2).scaled(3.0);
    let n = 20_000;
    let mut c2 = Vec::with_capacity(n);
    let mut c0 = Vec::with_capacity(n);
    for r in 0..n as u64 {
        let mut rng = stream_rng(2, Stream::Noise, &[r]);
        let mut st = SimState::new(v0.clone(), EnvPoint::new(vec![]));
        stepper.advance(&model, &mut st, &mut rng).unwrap();
        let c = modes(&grid, &st.u);
        c0.push(c[0]);
        c2.push(c[2]);
    }
    let mu = grid.eigenvalues()[2];
    let a0 = modes(&grid, &v0)[2];
    let mean = MeanEstimate::from_samples(&c2);
    assert!((mean.mean - a0 * (-0.5 * mu * t).exp()).abs() < 4.0 * mean.se);
    let var = (1.0 - (-mu * t).exp()) / mu;
    assert!((sample_variance(&c2) / var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    assert!((sample_variance(&c0) / t - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
}

#[test]
fn exact_free_rejects_environments() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let mut rng = SimRng::seed_from_u64(3);
    let r = simulate_trajectory(&grid, &model, &EnvPoint::new(vec![0.2]), &grid.constant(0.0), 0.1, 0.01, &[0.1], &mut rng, Scheme::ExactFree);
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn blow_up_is_reported() {
    let grid = Grid::new(4).unwrap();
    let model = EnvModel::zero(&grid);
    let state = SimState::new(grid.constant(2.0 * BLOW_UP_THRESHOLD), EnvPoint::new(vec![]));
    let mut rng = SimRng::seed_from_u64(4);
    let r = step_semi_implicit(&grid, &model, &state, 1e-3, &mut rng);
    assert!(matches!(r, Err(Error::BlowUp { .. })));
    let state = SimState::new(grid.constant(f64::NAN), EnvPoint::new(vec![]));
    assert!(matches!(step_exact_free(&grid, &state, 1e-3, &mut rng), Err(Error::BlowUp { .. })));
}

#[test]
fn bad_checkpoints_are_configuration_errors() {
    let grid = Grid::new(4).unwrap();
    let model = EnvModel::zero(&grid);
    let v0 = grid.constant(0.0);
    let mut rng = SimRng::seed_from_u64(5);
    for cps in [vec![], vec![0.2, 0.1], vec![2.0], vec![0.00015]] {
        let r = simulate_trajectory(&grid, &model, &EnvPoint::new(vec![]), &v0, 1.0, 1e-3, &cps, &mut rng, Scheme::SemiImplicit);
        assert!(matches!(r, Err(Error::Config(_))), "{cps:?}");
    }
}

#[test]
fn environment_view_is_shift_invariant() {
    let grid = Grid::new(8).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let mut rng = SimRng::seed_from_u64(6);
    let sigma = sample_env(&model, &mut rng);
    let u = sample_wiener_shape(&grid, &mut rng);
    let (v, base) = environment_view(&model, &SimState::new(u.clone(), sigma.clone()));
    let c = 0.731;
    let (v2, base2) = environment_view(&model, &SimState::new(u.shifted(c), model.shift(&sigma, -c)));
    assert!(v.iter().zip(v2.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    assert!((base.phases[0] - base2.phases[0]).abs() < 1e-12);
    assert_eq!(v[0], 0.0);
    let a = eval_v(&model, &sigma, &u).unwrap();
    let b = eval_v(&model, &base, &v).unwrap();
    assert!((a - b).abs() < 1e-12);
}

/// Functionals of `(u, sigma)` that do not depend on the choice of base point.
fn observables(model: &EnvModel, grid: &Grid, sigma: &EnvPoint, u: &[f64]) -> [f64; 3] {
    let mean = grid.mean(u);
    let fluct = grid.dx() * u.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let phase = model.shift(sigma, mean).phases[0];
    [eval_v(model, sigma, u).unwrap(), fluct, (2.0 * std::f64::consts::PI * phase).cos()]
}

#[test]
fn invariant_measure_is_preserved() {
    let n = 8;
    let grid = Grid::new(n).unwrap();
    let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
    let pi = sample_pi(&model, 3000, &mut SimRng::seed_from_u64(7)).unwrap();
    let dt = 2e-4;
    let mut stepper = Stepper::new(&grid, dt, Scheme::SemiImplicit).unwrap();
    let mut diffs: [Vec<f64>; 3] = Default::default();
    let mut unweighted_v = vec![];
    for (i, s) in pi.samples.iter().enumerate() {
        let before = observables(&model, &grid, &s.sigma, &s.v);
        let mut rng = stream_rng(7, Stream::Noise, &[i as u64]);
        let mut st = SimState::new(s.v.clone(), s.sigma.clone());
        for _ in 0..2500 {
            stepper.advance(&model, &mut st, &mut rng).unwrap();
        }
        let after = observables(&model, &grid, &st.sigma, &st.u);
        for k in 0..3 {
            diffs[k].push(after[k] - before[k]);
        }
        unweighted_v.push(after[0] - before[0]);
    }
    let w = pi.weights();
    for (k, d) in diffs.iter().enumerate() {
        let est = MeanEstimate::weighted(d, &w);
        assert!(est.mean.abs() < 4.0 * est.se + 1e-3, "observable {k}: drift {} +- {}", est.mean, est.se);
    }
    // without the e^{-2V} weights the law is not stationary, and the test sees it
    let est = MeanEstimate::from_samples(&unweighted_v);
    assert!(est.mean < -5.0 * est.se, "unweighted drift {} +- {}", est.mean, est.se);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn implicit_solve_inverts_the_operator(n in 1usize..40, dt in 1e-5f64..1e-1, seed in any::<u64>()) {
        let grid = Grid::new(n).unwrap();
        let stepper = Stepper::new(&grid, dt, Scheme::SemiImplicit).unwrap();
        let mut rng = SimRng::seed_from_u64(seed);
        let x = sample_wiener_shape(&grid, &mut rng);
        let lap = rse_heat::lattice::neumann_laplacian_apply(&grid, &x).unwrap();
        let mut rhs: Vec<f64> = x.iter().zip(lap.iter()).map(|(a, l)| a - 0.5 * dt * l).collect();
        stepper.implicit_solve(&mut rhs);
        for (a, b) in rhs.iter().zip(x.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn deterministic_given_noise(seed in any::<u64>()) {
        let grid = Grid::new(8).unwrap();
        let model = EnvModel::periodic(&grid, cosine_potential(0.5)).unwrap();
        let sigma = sample_env(&model, &mut SimRng::seed_from_u64(seed));
        let cps = [0.01, 0.02];
        let a = simulate_trajectory(&grid, &model, &sigma, &grid.constant(0.1), 0.02, 1e-3, &cps, &mut SimRng::seed_from_u64(seed), Scheme::SemiImplicit).unwrap();
        let b = simulate_trajectory(&grid, &model, &sigma, &grid.constant(0.1), 0.02, 1e-3, &cps, &mut SimRng::seed_from_u64(seed), Scheme::SemiImplicit).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn free_mean_mode_is_a_random_walk(seed in any::<u64>()) {
        // the constant mode has eigenvalue 0, so each step adds sqrt(dt) times
        // the mean of the standard normals scaled by sqrt(n)
        let grid = Grid::new(6).unwrap();
        let model = EnvModel::zero(&grid);
        let dt = 1e-3;
        let mut stepper = Stepper::new(&grid, dt, Scheme::SemiImplicit).unwrap();
        let mut st = SimState::new(grid.constant(0.0), EnvPoint::new(vec![]));
        let mut rng = SimRng::seed_from_u64(seed);
        let mut expected = 0.0;
        for _ in 0..20 {
            let z: Vec<f64> = (0..6).map(|_| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)).collect();
            expected += (dt / grid.dx()).sqrt() * grid.mean(&z);
            stepper.advance_with(&model, &mut st, Some(&z)).unwrap();
        }
        prop_assert!((grid.mean(&st.u) - expected).abs() < 1e-12);
    }
}

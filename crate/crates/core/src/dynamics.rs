//! Time stepping for `du = (1/2) Delta u dt - (DV + B)(sigma, u) dt + dW`.
//!
//! Two integrators are provided. The semi-implicit scheme treats the
//! Laplacian implicitly and the drift explicitly,
//! `u+ = (I - dt/2 Delta)^{-1} (u - dt (DV + B) + dW)`, with `dW_i ~ N(0, dt/dx)`.
//! The implicit operator is diagonal in the cosine basis (mode `k` is divided
//! by `1 + dt mu_k / 2`); since it is also tridiagonal in cell space, the hot
//! path uses a prefactored Thomas solve, which gives the same result in
//! `O(n)`. The exact free integrator advances each cosine mode of the
//! zero-drift equation by its Ornstein-Uhlenbeck transition.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environment::{EnvModel, EnvPoint};
use crate::error::{Error, Result};
use crate::lattice::{Direction, Field, Grid};

/// States with `max |u_i|` above this are treated as numerical blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e6;

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_N_CELLS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SemiImplicit,
    ExactFree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub u: Field,
    pub sigma: EnvPoint,
}

impl SimState {
    pub fn new(u: Field, sigma: EnvPoint) -> Self {
        SimState { t: 0.0, u, sigma }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    SemiImplicit {
        /// Modified super-diagonal of the Thomas sweep.
        upper: Vec<f64>,
        /// Reciprocal pivots.
        inv_pivot: Vec<f64>,
        off: f64,
        noise_sd: f64,
    },
    ExactFree {
        decay: Vec<f64>,
        noise_sd: Vec<f64>,
        coeffs: Vec<f64>,
    },
}

/// One integrator with its precomputed factors and scratch space. Each worker
/// owns its own stepper.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid,
    dt: f64,
    scheme: Scheme,
    kernel: Kernel,
    drift: Vec<f64>,
    noise: Vec<f64>,
    steps: usize,
}

impl Stepper {
    pub fn new(grid: &Grid, dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive and finite, got {dt}")));
        }
        let n = grid.n_cells();
        let kernel = match scheme {
            Scheme::SemiImplicit => {
                // I - (dt/2) Delta: diagonal 1 + 2r (1 + r at the ends), off-diagonal -r.
                let r = 0.5 * dt / (grid.dx() * grid.dx());
                let diag = |i: usize| {
                    if n == 1 {
                        1.0
                    } else if i == 0 || i + 1 == n {
                        1.0 + r
                    } else {
                        1.0 + 2.0 * r
                    }
                };
                let mut upper = vec![0.0; n];
                let mut inv_pivot = vec![0.0; n];
                let mut prev_upper = 0.0;
                for i in 0..n {
                    let pivot = diag(i) + r * prev_upper;
                    inv_pivot[i] = 1.0 / pivot;
                    upper[i] = -r / pivot;
                    prev_upper = upper[i];
                }
                Kernel::SemiImplicit {
                    upper,
                    inv_pivot,
                    off: r,
                    noise_sd: (dt / grid.dx()).sqrt(),
                }
            }
            Scheme::ExactFree => {
                let mu = grid.eigenvalues();
                Kernel::ExactFree {
                    decay: mu.iter().map(|&m| (-0.5 * m * dt).exp()).collect(),
                    noise_sd: mu
                        .iter()
                        .map(|&m| if m == 0.0 { dt.sqrt() } else { (-(-m * dt).exp_m1() / m).sqrt() })
                        .collect(),
                    coeffs: vec![0.0; n],
                }
            }
        };
        Ok(Stepper {
            grid: grid.clone(),
            dt,
            scheme,
            kernel,
            drift: vec![0.0; n],
            noise: vec![0.0; n],
            steps: 0,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Solves `(I - dt/2 Delta) x = rhs` in place.
    pub fn implicit_solve(&self, rhs: &mut [f64]) {
        if let Kernel::SemiImplicit { upper, inv_pivot, off, .. } = &self.kernel {
            let n = rhs.len();
            let mut prev = 0.0;
            for i in 0..n {
                let v = (rhs[i] + off * prev) * inv_pivot[i];
                rhs[i] = v;
                prev = v;
            }
            for i in (0..n.saturating_sub(1)).rev() {
                rhs[i] -= upper[i] * rhs[i + 1];
            }
        } else {
            let mu = self.grid.eigenvalues();
            let mut coeffs = self.grid.transform().apply(rhs, Direction::Forward).expect("conforming");
            for (a, m) in coeffs.iter_mut().zip(mu) {
                *a /= 1.0 + 0.5 * self.dt * m;
            }
            self.grid.transform().apply_into(&coeffs, rhs, Direction::Inverse).expect("conforming");
        }
    }

    /// Advances `state` by one step with fresh Gaussian noise.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        model: &EnvModel,
        state: &mut SimState,
        rng: &mut R,
    ) -> Result<()> {
        for z in self.noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        self.advance_inner(model, state)
    }

    /// Advances `state` by one step with the given standard-normal draws
    /// (`None` suppresses the noise).
    pub fn advance_with(
        &mut self,
        model: &EnvModel,
        state: &mut SimState,
        standard_normals: Option<&[f64]>,
    ) -> Result<()> {
        match standard_normals {
            Some(z) => {
                self.grid.check(z)?;
                self.noise.copy_from_slice(z);
            }
            None => self.noise.iter_mut().for_each(|z| *z = 0.0),
        }
        self.advance_inner(model, state)
    }

    fn advance_inner(&mut self, model: &EnvModel, state: &mut SimState) -> Result<()> {
        self.grid.check(&state.u)?;
        let dt = self.dt;
        match &mut self.kernel {
            Kernel::SemiImplicit { noise_sd, .. } => {
                let sd = *noise_sd;
                model.drift_into(&state.sigma, &state.u, &mut self.drift);
                if !self.drift.iter().all(|d| d.is_finite()) {
                    return Err(Error::BlowUp {
                        step: self.steps,
                        t: state.t,
                        detail: format!("non-finite drift at sigma = {:?}", state.sigma.phases),
                    });
                }
                for ((u, d), z) in state.u.iter_mut().zip(&self.drift).zip(&self.noise) {
                    *u += -dt * d + sd * z;
                }
                self.implicit_solve(&mut state.u);
            }
            Kernel::ExactFree { decay, noise_sd, coeffs } => {
                let t = self.grid.transform();
                t.apply_into(&state.u, coeffs, Direction::Forward)?;
                for (((a, d), s), z) in coeffs.iter_mut().zip(decay.iter()).zip(noise_sd.iter()).zip(&self.noise) {
                    *a = d * *a + s * z;
                }
                t.apply_into(coeffs, &mut state.u, Direction::Inverse)?;
            }
        }
        self.steps += 1;
        state.t += dt;
        let max = state.u.iter().fold(0.0_f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
        if max > BLOW_UP_THRESHOLD {
            return Err(Error::BlowUp {
                step: self.steps,
                t: state.t,
                detail: format!("max |u| = {max} at sigma = {:?}", state.sigma.phases),
            });
        }
        Ok(())
    }
}

fn require_free(model: &EnvModel) -> Result<()> {
    if model.sup_v_bound() != 0.0 || model.has_drift() {
        return Err(Error::Precondition(
            "the exact integrator only applies to the zero-drift equation".into(),
        ));
    }
    Ok(())
}

/// One semi-implicit step, returning the new state.
pub fn step_semi_implicit<R: Rng + ?Sized>(
    grid: &Grid,
    model: &EnvModel,
    state: &SimState,
    dt: f64,
    rng: &mut R,
) -> Result<SimState> {
    let mut stepper = Stepper::new(grid, dt, Scheme::SemiImplicit)?;
    let mut next = state.clone();
    stepper.advance(model, &mut next, rng)?;
    Ok(next)
}

/// One exact Ornstein-Uhlenbeck step of the free field.
pub fn step_exact_free<R: Rng + ?Sized>(
    grid: &Grid,
    state: &SimState,
    dt: f64,
    rng: &mut R,
) -> Result<SimState> {
    let mut stepper = Stepper::new(grid, dt, Scheme::ExactFree)?;
    let mut next = state.clone();
    let zero = EnvModel::zero(grid);
    stepper.advance(&zero, &mut next, rng)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub t: f64,
    /// `<u, 1>_H`.
    pub mean_mode: f64,
    /// `||u - mean_mode 1||_H^2`.
    pub fluct_norm_sq: f64,
    /// `u_i - mean_mode` at the probe cells.
    pub probes: Vec<f64>,
    pub field: Option<Field>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<CheckpointRecord>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryOptions {
    pub probe_cells: Vec<usize>,
    /// Keep the full field at every `k`-th checkpoint.
    pub keep_field_every: Option<usize>,
}

/// Converts checkpoint times to step counts, checking they are increasing
/// multiples of `dt` within `[0, t_end]`.
pub fn checkpoint_steps(checkpoints: &[f64], dt: f64, t_end: f64) -> Result<Vec<usize>> {
    if checkpoints.is_empty() {
        return Err(Error::config("at least one checkpoint is required"));
    }
    let mut out = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        if !(t >= 0.0) || t > t_end * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::config(format!("checkpoint {t} outside [0, {t_end}]")));
        }
        let k = (t / dt).round();
        if (k * dt - t).abs() > 1e-9 * t.max(1.0) {
            return Err(Error::config(format!("checkpoint {t} is not a multiple of dt = {dt}")));
        }
        let k = k as usize;
        if out.last().is_some_and(|&p| k <= p) {
            return Err(Error::config("checkpoints must be strictly increasing"));
        }
        out.push(k);
    }
    Ok(out)
}

fn record(grid: &Grid, t: f64, u: &[f64], opts: &TrajectoryOptions, keep: bool) -> CheckpointRecord {
    let mean = grid.mean(u);
    let fluct = grid.dx() * u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    CheckpointRecord {
        t,
        mean_mode: mean,
        fluct_norm_sq: fluct,
        probes: opts.probe_cells.iter().map(|&i| u[i] - mean).collect(),
        field: keep.then(|| Field::new(u.to_vec())),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_trajectory<R: Rng + ?Sized>(
    grid: &Grid,
    model: &EnvModel,
    sigma: &EnvPoint,
    v0: &[f64],
    t_end: f64,
    dt: f64,
    checkpoints: &[f64],
    rng: &mut R,
    scheme: Scheme,
) -> Result<Trajectory> {
    let opts = TrajectoryOptions { probe_cells: vec![], keep_field_every: Some(1) };
    let mut stepper = Stepper::new(grid, dt, scheme)?;
    simulate_with(&mut stepper, model, sigma, v0, t_end, checkpoints, rng, &opts)
}

/// Trajectory driver reusing a caller-owned stepper.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with<R: Rng + ?Sized>(
    stepper: &mut Stepper,
    model: &EnvModel,
    sigma: &EnvPoint,
    v0: &[f64],
    t_end: f64,
    checkpoints: &[f64],
    rng: &mut R,
    opts: &TrajectoryOptions,
) -> Result<Trajectory> {
    let grid = stepper.grid.clone();
    grid.check(v0)?;
    if model.grid() != &grid {
        return Err(Error::Conformity { expected: grid.n_cells(), found: model.grid().n_cells() });
    }
    if stepper.scheme == Scheme::ExactFree {
        require_free(model)?;
    }
    if let Some(&bad) = opts.probe_cells.iter().find(|&&i| i >= grid.n_cells()) {
        return Err(Error::config(format!("probe cell {bad} outside grid")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::config(format!("T must be finite and nonnegative, got {t_end}")));
    }
    let dt = stepper.dt;
    let steps = checkpoint_steps(checkpoints, dt, t_end)?;
    let mut state = SimState::new(Field::new(v0.to_vec()), sigma.clone());
    let mut records = Vec::with_capacity(steps.len());
    let mut done = 0usize;
    stepper.steps = 0;
    for (idx, (&target, &t)) in steps.iter().zip(checkpoints).enumerate() {
        while done < target {
            stepper.advance(model, &mut state, rng)?;
            done += 1;
        }
        let keep = opts.keep_field_every.is_some_and(|k| k > 0 && idx % k == 0);
        records.push(record(&grid, t, &state.u, opts, keep));
    }
    Ok(Trajectory { records })
}

/// Standard expression of a state: the shape `u - u_0 1` and the base
/// environment `tau_{u_0} sigma`, with `u_0` the first-cell value.
pub fn environment_view(model: &EnvModel, state: &SimState) -> (Field, EnvPoint) {
    let u0 = state.u.first().copied().unwrap_or(0.0);
    (state.u.shifted(-u0), model.shift(&state.sigma, u0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{cosine_potential, frac};
    use crate::lattice::neumann_laplacian_apply;
    use crate::rng::SimRng;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;

    fn zero_state(grid: &Grid) -> SimState {
        SimState::new(grid.constant(0.0), EnvPoint::new(vec![0.0]))
    }

    #[test]
    fn noiseless_free_step_keeps_constants() {
        let g = Grid::new(16).unwrap();
        let m = EnvModel::zero(&g);
        let mut s = Stepper::new(&g, 1e-3, Scheme::SemiImplicit).unwrap();
        let mut st = SimState::new(g.constant(2.5), EnvPoint::new(vec![0.0]));
        s.advance_with(&m, &mut st, None).unwrap();
        assert!(st.u.iter().all(|v| (v - 2.5).abs() < 1e-13));
        assert!((st.t - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn noiseless_step_divides_cosine_modes() {
        let g = Grid::new(24).unwrap();
        let m = EnvModel::zero(&g);
        let dt = 3e-3;
        let mut s = Stepper::new(&g, dt, Scheme::SemiImplicit).unwrap();
        for k in [1, 5, 23] {
            let mut st = SimState::new(g.cosine_mode(k), EnvPoint::new(vec![0.0]));
            s.advance_with(&m, &mut st, None).unwrap();
            let factor = 1.0 / (1.0 + 0.5 * dt * g.eigenvalues()[k]);
            for (a, b) in st.u.iter().zip(g.cosine_mode(k).iter()) {
                assert!((a - factor * b).abs() < 1e-12);
            }
        }
    }

    /// The Thomas solve and the spectral division are the same linear map.
    #[test]
    fn tridiagonal_solve_matches_dense_and_spectral() {
        for n in [1usize, 2, 3, 17, 64] {
            let g = Grid::new(n).unwrap();
            let dt = 2e-3;
            let s = Stepper::new(&g, dt, Scheme::SemiImplicit).unwrap();
            let mut rng = SimRng::seed_from_u64(n as u64);
            let rhs: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut fast = rhs.clone();
            s.implicit_solve(&mut fast);

            // dense oracle: assemble I - dt/2 Delta column by column
            let mat = DMatrix::from_fn(n, n, |i, j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let lap = neumann_laplacian_apply(&g, &e).unwrap();
                (if i == j { 1.0 } else { 0.0 }) - 0.5 * dt * lap[i]
            });
            let dense = mat.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();

            let mut coeffs = g.transform().apply(&rhs, Direction::Forward).unwrap();
            for (a, m) in coeffs.iter_mut().zip(g.eigenvalues()) {
                *a /= 1.0 + 0.5 * dt * m;
            }
            let spectral = g.transform().apply(&coeffs, Direction::Inverse).unwrap();
            for i in 0..n {
                assert!((fast[i] - dense[i]).abs() < 1e-12, "n={n}");
                assert!((fast[i] - spectral[i]).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn exact_free_noiseless_decay() {
        let g = Grid::new(8).unwrap();
        let m = EnvModel::zero(&g);
        let dt = 0.01;
        let mut s = Stepper::new(&g, dt, Scheme::ExactFree).unwrap();
        let mut st = SimState::new(g.cosine_mode(3).shifted(1.0), EnvPoint::new(vec![0.0]));
        s.advance_with(&m, &mut st, None).unwrap();
        let d = (-0.5 * g.eigenvalues()[3] * dt).exp();
        let expect = g.cosine_mode(3).scaled(d).shifted(1.0);
        for (a, b) in st.u.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_free_refuses_drift() {
        let g = Grid::new(8).unwrap();
        let m = EnvModel::periodic(&g, cosine_potential(0.5)).unwrap();
        let mut rng = SimRng::seed_from_u64(0);
        let sigma = EnvPoint::new(vec![0.0]);
        let r = simulate_trajectory(&g, &m, &sigma, &g.constant(0.0), 0.01, 1e-3, &[0.01], &mut rng, Scheme::ExactFree);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn one_step_mode_variance() {
        let g = Grid::new(16).unwrap();
        let dt = 1e-2;
        let m = EnvModel::zero(&g);
        let mut rng = SimRng::seed_from_u64(42);
        let n = 100_000;
        let ks = [0usize, 1, 4, 15];
        let mut acc = [0.0; 4];
        let mut s = Stepper::new(&g, dt, Scheme::SemiImplicit).unwrap();
        for _ in 0..n {
            let mut st = zero_state(&g);
            s.advance(&m, &mut st, &mut rng).unwrap();
            let c = g.transform().apply(&st.u, Direction::Forward).unwrap();
            for (a, &k) in acc.iter_mut().zip(&ks) {
                *a += c[k] * c[k];
            }
        }
        for (a, &k) in acc.iter().zip(&ks) {
            let var = a / n as f64;
            let expect = dt / (1.0 + 0.5 * dt * g.eigenvalues()[k]).powi(2);
            // relative SE of a variance estimate is sqrt(2/n)
            assert!((var / expect - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt(), "k={k}: {var} vs {expect}");
        }
    }

    #[test]
    fn exact_free_reaches_stationary_variances() {
        let g = Grid::new(16).unwrap();
        let mut rng = SimRng::seed_from_u64(9);
        let n = 100_000;
        let mut acc = vec![0.0; 16];
        for _ in 0..n {
            let st = step_exact_free(&g, &zero_state(&g), 50.0, &mut rng).unwrap();
            let c = g.transform().apply(&st.u, Direction::Forward).unwrap();
            for (a, v) in acc.iter_mut().zip(&c) {
                *a += v * v;
            }
        }
        let tol = 5.0 * (2.0 / n as f64).sqrt();
        assert!((acc[0] / n as f64 / 50.0 - 1.0).abs() < tol);
        for k in 1..16 {
            let var = acc[k] / n as f64;
            assert!((var * g.eigenvalues()[k] - 1.0).abs() < tol, "k={k}");
        }
    }

    #[test]
    fn zero_horizon_records_initial_statistics() {
        let g = Grid::new(8).unwrap();
        let m = EnvModel::zero(&g);
        let v0 = g.from_fn(|x| x * x);
        let mut rng = SimRng::seed_from_u64(1);
        let tr = simulate_trajectory(&g, &m, &EnvPoint::new(vec![0.0]), &v0, 0.0, 1e-3, &[0.0], &mut rng, Scheme::SemiImplicit).unwrap();
        assert_eq!(tr.records.len(), 1);
        let r = &tr.records[0];
        assert_eq!(r.t, 0.0);
        assert!((r.mean_mode - g.mean(&v0)).abs() < 1e-15);
        assert_eq!(r.field.as_deref(), Some(&v0[..]));
    }

    #[test]
    fn checkpoint_validation() {
        assert!(checkpoint_steps(&[0.1, 0.2], 1e-3, 1.0).is_ok());
        assert!(checkpoint_steps(&[0.2, 0.1], 1e-3, 1.0).is_err());
        assert!(checkpoint_steps(&[0.1005], 1e-3, 1.0).is_err());
        assert!(checkpoint_steps(&[2.0], 1e-3, 1.0).is_err());
        assert!(checkpoint_steps(&[], 1e-3, 1.0).is_err());
        assert!(Stepper::new(&Grid::new(4).unwrap(), -1.0, Scheme::SemiImplicit).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let g = Grid::new(4).unwrap();
        let m = EnvModel::zero(&g);
        let mut s = Stepper::new(&g, 1e-3, Scheme::SemiImplicit).unwrap();
        let mut st = SimState::new(g.constant(2e6), EnvPoint::new(vec![0.0]));
        assert!(matches!(s.advance_with(&m, &mut st, None), Err(Error::BlowUp { .. })));
        let mut st = SimState::new(g.constant(f64::NAN), EnvPoint::new(vec![0.0]));
        assert!(matches!(s.advance_with(&m, &mut st, None), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn environment_view_examples() {
        let g = Grid::new(8).unwrap();
        let m = EnvModel::periodic(&g, cosine_potential(0.5)).unwrap();
        let st = SimState::new(g.constant(1.3), EnvPoint::new(vec![0.9]));
        let (v, base) = environment_view(&m, &st);
        assert!(v.iter().all(|x| *x == 0.0));
        assert!((base.phases[0] - frac(2.2)).abs() < 1e-14);

        let mut u = g.from_fn(|x| x.sin());
        u[0] = 0.0;
        let st = SimState::new(u.clone(), EnvPoint::new(vec![0.4]));
        let (v, base) = environment_view(&m, &st);
        assert_eq!(v, u);
        assert_eq!(base.phases, vec![0.4]);
    }
}

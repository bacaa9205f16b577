//! Estimators and bounds for the effective variance `a^2`.
//!
//! * [`estimate_a2_slope`]: weighted regression of `E (u_bar(t) - u_bar(0))^2` on `t`.
//! * [`sample_pi`], [`lower_bound_c`]: importance sampling of the invariant
//!   measure `pi ~ exp(-2V) mu_0 x Q` and the lower bound `C = exp(-2 sup|V|) / Z`.
//! * [`variational_bound`]: `min_theta E_pi ||D f_theta + 1||_H^2` over a
//!   shift-invariant trigonometric trial family, an upper bound when `B = 0`.
//! * [`enhancement_check`]: `a^2(V, B)` against `a^2(V, 0)` on common seeds.
//! * [`poincare_check`]: `Var f <= E ||Df||_H^2` under the discrete Wiener law.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{run_ensemble, EnsembleConfig, EnsembleStats};
use crate::environment::{
    eval_v, exponential_battery, sample_env, verify_divergence_free, Drift, EnvModel, EnvPoint,
};
use crate::error::{Error, Result};
use crate::lattice::{sample_wiener_shape, Field, Grid};
use crate::quadrature::MeanEstimate;
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_BURN_IN: f64 = 0.2;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Spectral truncation threshold for the normal equations.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub a2_hat: f64,
    pub se: f64,
    pub intercept: f64,
    pub n_points: usize,
}

fn wls_slope(t: &[f64], y: &[f64]) -> (f64, f64) {
    let mut sw = 0.0;
    let mut st = 0.0;
    let mut sy = 0.0;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (&ti, &yi) in t.iter().zip(y) {
        let w = 1.0 / (ti * ti);
        sw += w;
        st += w * ti;
        sy += w * yi;
        stt += w * ti * ti;
        sty += w * ti * yi;
    }
    let det = sw * stt - st * st;
    let slope = (sw * sty - st * sy) / det;
    let intercept = (sy - slope * st) / sw;
    (slope, intercept)
}

/// Slope of the pooled second moment of `u_bar(t) - u_bar(0)` against `t`
/// over checkpoints with `t >= burn_in_fraction * T`, weights `1/t^2`.
/// The standard error comes from resampling whole environments.
pub fn estimate_a2_slope(stats: &EnsembleStats, burn_in_fraction: f64) -> Result<SlopeEstimate> {
    if !(0.0..1.0).contains(&burn_in_fraction) {
        return Err(Error::config(format!("burn-in fraction must be in [0, 1), got {burn_in_fraction}")));
    }
    let t_last = stats.times.last().copied().unwrap_or(0.0);
    let idx: Vec<usize> = (0..stats.times.len())
        .filter(|&i| stats.times[i] > 0.0 && stats.times[i] >= burn_in_fraction * t_last)
        .collect();
    if idx.len() < 3 {
        return Err(Error::config(format!(
            "slope estimate needs >= 3 checkpoints after burn-in, found {}",
            idx.len()
        )));
    }
    let t: Vec<f64> = idx.iter().map(|&i| stats.times[i]).collect();
    let u0 = stats.initial_mean;
    // per-environment sums of squared displacements, per checkpoint
    let sums: Vec<Vec<f64>> = (0..stats.n_env)
        .map(|e| {
            idx.iter()
                .map(|&i| stats.env_records(e).iter().map(|r| (r.mean_mode[i] - u0).powi(2)).sum())
                .collect()
        })
        .collect();
    let fit = |envs: &mut dyn Iterator<Item = usize>| {
        let mut y = vec![0.0; t.len()];
        let mut count = 0usize;
        for e in envs {
            for (a, s) in y.iter_mut().zip(&sums[e]) {
                *a += s;
            }
            count += stats.n_noise;
        }
        y.iter_mut().for_each(|v| *v /= count as f64);
        wls_slope(&t, &y)
    };
    let (a2_hat, intercept) = fit(&mut (0..stats.n_env));
    let mut rng = stream_rng(stats.master_seed, Stream::Bootstrap, &[]);
    let boot: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let draws: Vec<usize> = (0..stats.n_env).map(|_| rng.random_range(0..stats.n_env)).collect();
            fit(&mut draws.into_iter()).0
        })
        .collect();
    let mean = boot.iter().sum::<f64>() / boot.len() as f64;
    let se = (boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len() - 1) as f64).sqrt();
    Ok(SlopeEstimate { a2_hat, se, intercept, n_points: t.len() })
}

/// A draw from the proposal `mu_0 x Q` with its weight `exp(-2V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiSample {
    pub v: Field,
    pub sigma: EnvPoint,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiSampleSet {
    pub samples: Vec<PiSample>,
    /// Mean weight, estimating the normalising constant `Z`.
    pub z_hat: MeanEstimate,
}

impl PiSampleSet {
    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.weight).collect()
    }

    /// Self-normalised `E_pi g`.
    pub fn expectation(&self, g: impl Fn(&PiSample) -> f64) -> MeanEstimate {
        let values: Vec<f64> = self.samples.iter().map(&g).collect();
        MeanEstimate::weighted(&values, &self.weights())
    }
}

pub fn sample_pi<R: Rng + ?Sized>(model: &EnvModel, n: usize, rng: &mut R) -> Result<PiSampleSet> {
    if n < 100 {
        return Err(Error::Precondition(format!("sample_pi needs n >= 100, got {n}")));
    }
    let grid = model.grid();
    let samples: Vec<PiSample> = (0..n)
        .map(|_| {
            let sigma = sample_env(model, rng);
            let v = sample_wiener_shape(grid, rng);
            let weight = (-2.0 * eval_v(model, &sigma, &v).expect("conforming")).exp();
            PiSample { v, sigma, weight }
        })
        .collect();
    let z_hat = MeanEstimate::from_samples(&samples.iter().map(|s| s.weight).collect::<Vec<_>>());
    Ok(PiSampleSet { samples, z_hat })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub c: f64,
    pub se: f64,
}

/// `C = exp(-2 sup|V|) / Z_hat` with `sup|V|` from the model envelope.
pub fn lower_bound_c(model: &EnvModel, pi: &PiSampleSet) -> LowerBound {
    let c = (-2.0 * model.sup_v_bound()).exp() / pi.z_hat.mean;
    LowerBound { c, se: c * pi.z_hat.se / pi.z_hat.mean }
}

/// `f_theta(sigma, v) = dx sum_i sum_c sum_{m <= M} [theta cos + theta' sin](2 pi m y_c(v_i))`
/// with `y_c = lambda_c v + sigma_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFamily {
    pub modes: usize,
}

impl TrialFamily {
    pub fn dimension(&self, model: &EnvModel) -> usize {
        2 * self.modes * model.dimension()
    }

    /// Writes the H-gradient entries of every basis function at one cell.
    fn gradients_at(&self, model: &EnvModel, sigma: &EnvPoint, vi: f64, out: &mut [f64]) {
        let mut k = 0;
        for (&lambda, &phase) in model.frequencies().iter().zip(&sigma.phases) {
            let y = lambda * vi + phase;
            for m in 1..=self.modes {
                let w = 2.0 * PI * m as f64;
                let (s, c) = (w * y).sin_cos();
                out[k] = -lambda * w * s;
                out[k + 1] = lambda * w * c;
                k += 2;
            }
        }
    }

    /// `f_theta(sigma, v)`.
    pub fn value(&self, model: &EnvModel, theta: &[f64], sigma: &EnvPoint, v: &[f64]) -> f64 {
        let dx = model.grid().dx();
        let mut total = 0.0;
        for &vi in v {
            let mut k = 0;
            for (&lambda, &phase) in model.frequencies().iter().zip(&sigma.phases) {
                let y = lambda * vi + phase;
                for m in 1..=self.modes {
                    let (s, c) = (2.0 * PI * m as f64 * y).sin_cos();
                    total += theta[k] * c + theta[k + 1] * s;
                    k += 2;
                }
            }
        }
        dx * total
    }

    pub fn gradient(&self, model: &EnvModel, theta: &[f64], sigma: &EnvPoint, v: &[f64]) -> Field {
        let mut g = vec![0.0; self.dimension(model)];
        Field::new(
            v.iter()
                .map(|&vi| {
                    self.gradients_at(model, sigma, vi, &mut g);
                    g.iter().zip(theta).map(|(a, b)| a * b).sum()
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalBound {
    pub bound: f64,
    pub se: f64,
    pub theta: Vec<f64>,
    pub condition: f64,
    /// The normal equations were solved on a truncated spectrum.
    pub truncated: bool,
}

/// Minimises `E_pi ||D f_theta + 1||_H^2` over the trial family by the normal
/// equations; the minimum is evaluated directly on the samples.
pub fn variational_bound(
    model: &EnvModel,
    trial: &TrialFamily,
    pi: &PiSampleSet,
) -> Result<VariationalBound> {
    if !matches!(model.drift(), Drift::None) {
        return Err(Error::Precondition("the variational principle requires B = 0".into()));
    }
    let p = trial.dimension(model);
    if p == 0 {
        return Ok(VariationalBound { bound: 1.0, se: 0.0, theta: vec![], condition: 1.0, truncated: false });
    }
    let dx = model.grid().dx();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut wsum = 0.0;
    let mut g = vec![0.0; p];
    for s in &pi.samples {
        let w = s.weight;
        wsum += w;
        for &vi in s.v.iter() {
            trial.gradients_at(model, &s.sigma, vi, &mut g);
            for a in 0..p {
                rhs[a] += w * dx * g[a];
                let ga = w * dx * g[a];
                for b in a..p {
                    gram[(a, b)] += ga * g[b];
                }
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    gram /= wsum;
    rhs /= wsum;
    let eig = SymmetricEigen::new(gram);
    let max_ev = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min_ev = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };
    let cutoff = max_ev / MAX_CONDITION;
    let truncated = condition > MAX_CONDITION;
    // theta = -G^+ b on the retained spectrum
    let mut theta = DVector::<f64>::zeros(p);
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cutoff && ev > 0.0 {
            let v = eig.eigenvectors.column(k);
            theta -= v * (v.dot(&rhs) / ev);
        }
    }
    let theta: Vec<f64> = theta.iter().copied().collect();
    let values: Vec<f64> = pi
        .samples
        .iter()
        .map(|s| {
            let grad = trial.gradient(model, &theta, &s.sigma, &s.v);
            dx * grad.iter().map(|d| (d + 1.0).powi(2)).sum::<f64>()
        })
        .collect();
    let est = MeanEstimate::weighted(&values, &pi.weights());
    Ok(VariationalBound { bound: est.mean, se: est.se, theta, condition, truncated })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhancementOptions {
    pub burn_in_fraction: f64,
    pub divergence_samples: usize,
    pub divergence_functions: usize,
    pub validation_seed: u64,
}

impl Default for EnhancementOptions {
    fn default() -> Self {
        EnhancementOptions {
            burn_in_fraction: DEFAULT_BURN_IN,
            divergence_samples: 100_000,
            divergence_functions: 10,
            validation_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancementReport {
    pub a2_v: SlopeEstimate,
    pub a2_vb: SlopeEstimate,
    /// `a2(V, B) - a2(V, 0)`.
    pub margin: f64,
    pub combined_se: f64,
    pub divergence: Vec<MeanEstimate>,
}

impl EnhancementReport {
    pub fn passes(&self) -> bool {
        self.margin >= -3.0 * self.combined_se
    }
}

/// Runs both ensembles on identical seeds after checking that `B` passes the
/// divergence-free gate.
pub fn enhancement_check(
    model_v: &EnvModel,
    model_vb: &EnvModel,
    config: &EnsembleConfig,
    opts: &EnhancementOptions,
) -> Result<EnhancementReport> {
    if model_v.has_drift() {
        return Err(Error::Precondition("reference model must have B = 0".into()));
    }
    if model_v.potential() != model_vb.potential() || model_v.grid() != model_vb.grid() {
        return Err(Error::Precondition("models must share the potential and grid".into()));
    }
    let grid = model_vb.grid();
    let battery = exponential_battery(grid, opts.divergence_functions);
    let mut rng = stream_rng(opts.validation_seed, Stream::Validation, &[]);
    let sigma = sample_env(model_vb, &mut rng);
    let divergence = verify_divergence_free(model_vb, &sigma, &battery, opts.divergence_samples, &mut rng)?;
    let bad: Vec<String> = battery
        .iter()
        .zip(&divergence)
        .filter(|(_, e)| e.mean.abs() > 3.0 * e.se)
        .map(|(f, e)| format!("{}: {} (se {})", f.label, e.mean, e.se))
        .collect();
    if !bad.is_empty() {
        return Err(Error::NotDivergenceFree(bad.join("; ")));
    }
    let a2_v = estimate_a2_slope(&run_ensemble(config, model_v)?, opts.burn_in_fraction)?;
    let a2_vb = estimate_a2_slope(&run_ensemble(config, model_vb)?, opts.burn_in_fraction)?;
    Ok(EnhancementReport {
        a2_v,
        a2_vb,
        margin: a2_vb.a2_hat - a2_v.a2_hat,
        combined_se: a2_v.se.hypot(a2_vb.se),
        divergence,
    })
}

/// Cylinder functions `g(<v, h_1>_H, ..., <v, h_k>_H)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CylinderFunction {
    Constant(f64),
    /// `<v, h>_H`
    Linear(Field),
    /// `cos(<v, h>_H)`
    Cosine(Field),
    /// `tanh(<v, h_1>_H) cos(<v, h_2>_H)`
    TanhCos(Field, Field),
}

impl CylinderFunction {
    pub fn name(&self) -> &'static str {
        match self {
            CylinderFunction::Constant(_) => "constant",
            CylinderFunction::Linear(_) => "linear",
            CylinderFunction::Cosine(_) => "cosine",
            CylinderFunction::TanhCos(..) => "tanh_cos",
        }
    }

    /// Value and `||Df||_H^2`.
    pub fn value_and_energy(&self, grid: &Grid, v: &[f64]) -> (f64, f64) {
        let dot = |h: &Field| grid.dx() * v.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>();
        match self {
            CylinderFunction::Constant(c) => (*c, 0.0),
            CylinderFunction::Linear(h) => (dot(h), grid.norm_sq(h)),
            CylinderFunction::Cosine(h) => {
                let (s, c) = dot(h).sin_cos();
                (c, s * s * grid.norm_sq(h))
            }
            CylinderFunction::TanhCos(h1, h2) => {
                let th = dot(h1).tanh();
                let (s, c) = dot(h2).sin_cos();
                let a = (1.0 - th * th) * c;
                let b = -th * s;
                let df = h1.scaled(a).axpy(b, h2);
                (th * c, grid.norm_sq(&df))
            }
        }
    }
}

/// Constant, linear, cosine and product members on low cosine modes.
pub fn default_cylinder_battery(grid: &Grid) -> Vec<CylinderFunction> {
    let c1 = grid.cosine_mode(1).scaled(PI);
    let c2 = grid.cosine_mode(2).scaled(2.0 * PI);
    vec![
        CylinderFunction::Constant(1.0),
        CylinderFunction::Linear(grid.constant(1.0)),
        CylinderFunction::Linear(c1.clone()),
        CylinderFunction::Cosine(grid.constant(1.0)),
        CylinderFunction::Cosine(c2.clone()),
        CylinderFunction::TanhCos(grid.constant(1.0), c1.axpy(1.0, &c2)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoincareResult {
    pub name: String,
    pub variance: f64,
    pub variance_se: f64,
    pub energy: f64,
    pub energy_se: f64,
    pub passed: bool,
}

/// Monte Carlo `Var f` and `E ||Df||_H^2` under the discrete Wiener law, with
/// the gate `Var <= energy + 3 combined SE`.
pub fn poincare_check<R: Rng + ?Sized>(
    grid: &Grid,
    battery: &[CylinderFunction],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<PoincareResult>> {
    if n_samples < 2 {
        return Err(Error::config("poincare check needs at least two samples"));
    }
    let mut values = vec![Vec::with_capacity(n_samples); battery.len()];
    let mut energies = vec![Vec::with_capacity(n_samples); battery.len()];
    for _ in 0..n_samples {
        let v = sample_wiener_shape(grid, rng);
        for (k, f) in battery.iter().enumerate() {
            let (val, en) = f.value_and_energy(grid, &v);
            values[k].push(val);
            energies[k].push(en);
        }
    }
    Ok(battery
        .iter()
        .zip(values.iter().zip(&energies))
        .map(|(f, (vals, ens))| {
            let (variance, variance_se) = variance_with_se(vals);
            let e = MeanEstimate::from_samples(ens);
            let tol = 3.0 * variance_se.hypot(e.se);
            PoincareResult {
                name: f.name().to_string(),
                variance,
                variance_se,
                energy: e.mean,
                energy_se: e.se,
                passed: variance <= e.mean + tol,
            }
        })
        .collect())
}

/// Sample variance and its large-sample standard error `sqrt((m4 - s^4) / n)`.
fn variance_with_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), ((m4 - m2 * m2).max(0.0) / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityReport {
    pub a2_hat: f64,
    pub se: f64,
    pub intercept: f64,
    pub lower_c: f64,
    pub lower_c_se: f64,
    pub upper: f64,
    pub variational_bound: Option<f64>,
    pub variational_se: Option<f64>,
    pub trial_modes: Option<usize>,
    pub burn_in_fraction: f64,
    pub n_pi_samples: usize,
    pub method: String,
    /// `C - 3 SE <= a2_hat <= 1 + 3 SE`.
    pub sandwich_pass: bool,
    /// `a2_hat <= bound + 3 SE` when a bound is available.
    pub variational_pass: Option<bool>,
}

impl DiffusivityReport {
    pub fn new(
        slope: &SlopeEstimate,
        lower: &LowerBound,
        variational: Option<(&VariationalBound, usize)>,
        burn_in_fraction: f64,
        n_pi_samples: usize,
    ) -> Self {
        let low_tol = 3.0 * slope.se.hypot(lower.se);
        let sandwich_pass =
            lower.c - low_tol <= slope.a2_hat && slope.a2_hat <= 1.0 + 3.0 * slope.se;
        let variational_pass =
            variational.map(|(v, _)| slope.a2_hat <= v.bound + 3.0 * slope.se.hypot(v.se));
        DiffusivityReport {
            a2_hat: slope.a2_hat,
            se: slope.se,
            intercept: slope.intercept,
            lower_c: lower.c,
            lower_c_se: lower.se,
            upper: 1.0,
            variational_bound: variational.map(|(v, _)| v.bound),
            variational_se: variational.map(|(v, _)| v.se),
            trial_modes: variational.map(|(_, m)| m),
            burn_in_fraction,
            n_pi_samples,
            method: format!(
                "wls slope of E(u_bar(t) - u_bar(0))^2 over t >= {burn_in_fraction} T, weights 1/t^2, \
                 environment bootstrap ({BOOTSTRAP_RESAMPLES} resamples); C from importance-sampled Z"
            ),
            sandwich_pass,
            variational_pass,
        }
    }
}

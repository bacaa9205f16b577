//! Random environments `(V, B)` and their validators.
//!
//! A potential is a finite sum of modes
//! `V(x, y) = sum_c sum_m kappa_m w(x) cos(2 pi m y_c + theta_m)` with
//! `y_c = lambda_c u + sigma_c`; one coordinate with `lambda = 1` is the
//! periodic model, two or more rationally independent frequencies give the
//! quasi-periodic one. The functional on fields is the midpoint rule
//! `V(sigma, u) = dx sum_i V(x_i, u_i)` and its H-gradient has entries
//! `(DV)_i = sum_c lambda_c d_{y_c} V(x_i, y(u_i))`.
//!
//! The divergence-free drift is built from a stream function of two Gaussian
//! scores. With `k_1, k_2` H-orthonormal directions vanishing at the first
//! cell and `l_a(u) = <Sigma_0^{-1} u, k_a>` the scores of the discrete Wiener
//! law, `psi = chi(l_1, l_2)` and
//!
//! ```text
//! B = exp(2V) [ (d_{k_2} psi - l_2 psi) k_1 - (d_{k_1} psi - l_1 psi) k_2 ]
//! ```
//!
//! Gaussian integration by parts makes `int exp(-2V) <Df, B> dmu_0` vanish for
//! every smooth `f`. Because `Sigma_0^{-1} 1` is supported on the first cell,
//! the scores do not see constant shifts of `u`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{inner_h, sample_wiener_shape, Field, Grid};
use crate::quadrature::MeanEstimate;

/// Spatial profile `w(x)` of a potential mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XProfile {
    Constant,
    /// `cos(j pi x)`.
    Cosine(u32),
}

impl XProfile {
    fn eval(self, x: f64) -> f64 {
        match self {
            XProfile::Constant => 1.0,
            XProfile::Cosine(j) => (j as f64 * PI * x).cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialMode {
    pub m: u32,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default = "default_profile")]
    pub profile: XProfile,
}

fn default_profile() -> XProfile {
    XProfile::Constant
}

impl PotentialMode {
    pub fn new(m: u32, amplitude: f64) -> Self {
        PotentialMode { m, amplitude, phase: 0.0, profile: XProfile::Constant }
    }
}

/// Frequencies `lambda` and one mode list per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub frequencies: Vec<f64>,
    pub coordinates: Vec<Vec<PotentialMode>>,
}

impl PotentialSpec {
    fn modes(&self) -> impl Iterator<Item = (f64, &PotentialMode)> {
        self.frequencies
            .iter()
            .zip(&self.coordinates)
            .flat_map(|(&l, modes)| modes.iter().map(move |m| (l, m)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Zero,
    Periodic,
    QuasiPeriodic,
}

/// A realisation `sigma` of the environment: one phase per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPoint {
    pub phases: Vec<f64>,
}

impl EnvPoint {
    pub fn new(phases: Vec<f64>) -> Self {
        EnvPoint { phases: phases.into_iter().map(frac).collect() }
    }
}

/// Fractional part in `[0, 1)`.
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Smooth bump `A exp(1 - 1/(1 - r^2/R^2))` supported on the disc of radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: [f64; 2],
    pub radius: f64,
    pub amplitude: f64,
}

impl Bump {
    /// Value and gradient at `(a, b)`.
    pub fn eval(&self, a: f64, b: f64) -> (f64, f64, f64) {
        let r2 = self.radius * self.radius;
        let da = a - self.center[0];
        let db = b - self.center[1];
        let s = (da * da + db * db) / r2;
        if s >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let inv = 1.0 / (1.0 - s);
        let chi = self.amplitude * (1.0 - inv).exp();
        let factor = -chi * inv * inv * 2.0 / r2;
        (chi, factor * da, factor * db)
    }

    /// Supremum of `|grad chi|`, found on a fine radial grid (the profile is
    /// radial and unimodal in its slope).
    pub fn gradient_sup(&self) -> f64 {
        let steps = 20_000;
        (1..steps)
            .map(|i| {
                let r = i as f64 / steps as f64;
                let s = r * r;
                let inv = 1.0 / (1.0 - s);
                self.amplitude.abs() * (1.0 - inv).exp() * inv * inv * 2.0 * r / self.radius
            })
            .fold(0.0, f64::max)
    }
}

/// Stream data for the divergence-free drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivFreeSpec {
    /// Cosine mode indices generating `k_1`, `k_2`.
    pub directions: [usize; 2],
    pub bump: Bump,
}

impl DivFreeSpec {
    /// Bump centred at the origin with radius given in units of the larger
    /// score standard deviation `sqrt(G_aa)` under the discrete Wiener law.
    pub fn with_score_scaled_radius(
        grid: &Grid,
        directions: [usize; 2],
        radius_in_sd: f64,
        amplitude: f64,
    ) -> Result<Self> {
        let probe = DivFreeSpec {
            directions,
            bump: Bump { center: [0.0, 0.0], radius: 1.0, amplitude },
        };
        let stream = StreamDrift::new(grid, &probe)?;
        let sd = stream.gram[0][0].max(stream.gram[1][1]).sqrt();
        Ok(DivFreeSpec {
            directions,
            bump: Bump { center: [0.0, 0.0], radius: radius_in_sd * sd, amplitude },
        })
    }
}

/// Precomputed pieces of the stream drift on a given grid.
#[derive(Debug, Clone)]
pub struct StreamDrift {
    spec: DivFreeSpec,
    k: [Field; 2],
    /// `Delta k_a[j] / d_j`, so that `l_a(u) = sum_j coef[j] Delta u_j`.
    score_coef: [Vec<f64>; 2],
    gram: [[f64; 2]; 2],
    grad_sup: f64,
}

impl StreamDrift {
    pub fn new(grid: &Grid, spec: &DivFreeSpec) -> Result<Self> {
        let [j1, j2] = spec.directions;
        if j1 == j2 {
            return Err(Error::config("divergence-free directions must differ"));
        }
        if !(spec.bump.radius > 0.0 && spec.bump.radius.is_finite()) {
            return Err(Error::config("bump radius must be positive and finite"));
        }
        if !spec.bump.amplitude.is_finite() || spec.bump.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("bump amplitude and center must be finite"));
        }
        let pinned = |j: usize| {
            let mut c = grid.cosine_mode(j);
            c[0] = 0.0;
            c
        };
        let degenerate = || {
            Error::config(format!(
                "directions {:?} are degenerate on a {}-cell grid",
                spec.directions,
                grid.n_cells()
            ))
        };
        let c1 = pinned(j1);
        let n1 = grid.norm_sq(&c1).sqrt();
        if n1 < 1e-8 {
            return Err(degenerate());
        }
        let k1 = c1.scaled(1.0 / n1);
        let c2 = pinned(j2);
        let proj = inner_h(grid, &c2, &k1)?;
        let r2 = c2.axpy(-proj, &k1);
        let n2 = grid.norm_sq(&r2).sqrt();
        if n2 < 1e-8 * grid.norm_sq(&c2).sqrt().max(1e-300) || n2 < 1e-10 {
            return Err(degenerate());
        }
        let k2 = r2.scaled(1.0 / n2);

        let dx = grid.dx();
        let coef = |k: &Field| -> Vec<f64> {
            (0..k.len())
                .map(|j| {
                    let (dk, d) = if j == 0 { (k[0], 0.5 * dx) } else { (k[j] - k[j - 1], dx) };
                    dk / d
                })
                .collect()
        };
        let s1 = coef(&k1);
        let s2 = coef(&k2);
        // G_ab = k_a^T Sigma_0^{-1} k_b = sum_j Delta k_a Delta k_b / d_j
        let gram_entry = |a: &Field, sb: &[f64]| -> f64 {
            (0..a.len()).map(|j| (if j == 0 { a[0] } else { a[j] - a[j - 1] }) * sb[j]).sum()
        };
        let g12 = gram_entry(&k1, &s2);
        let gram = [[gram_entry(&k1, &s1), g12], [g12, gram_entry(&k2, &s2)]];
        Ok(StreamDrift {
            spec: spec.clone(),
            k: [k1, k2],
            score_coef: [s1, s2],
            gram,
            grad_sup: spec.bump.gradient_sup(),
        })
    }

    pub fn directions(&self) -> &[Field; 2] {
        &self.k
    }

    pub fn gram(&self) -> [[f64; 2]; 2] {
        self.gram
    }

    pub fn spec(&self) -> &DivFreeSpec {
        &self.spec
    }

    /// Gaussian scores `(l_1(u), l_2(u))`.
    pub fn scores(&self, u: &[f64]) -> (f64, f64) {
        let mut l = [0.0, 0.0];
        let mut prev = 0.0;
        for (j, &uj) in u.iter().enumerate() {
            let du = uj - prev;
            prev = uj;
            l[0] += self.score_coef[0][j] * du;
            l[1] += self.score_coef[1][j] * du;
        }
        (l[0], l[1])
    }

    /// Coefficients `(alpha, beta)` with `B = exp(2V) (alpha k_1 - beta k_2)`.
    fn coefficients(&self, u: &[f64]) -> (f64, f64) {
        let (l1, l2) = self.scores(u);
        let (chi, chi_a, chi_b) = self.spec.bump.eval(l1, l2);
        if chi == 0.0 && chi_a == 0.0 && chi_b == 0.0 {
            return (0.0, 0.0);
        }
        let g = &self.gram;
        let d1 = chi_a * g[0][0] + chi_b * g[1][0];
        let d2 = chi_a * g[0][1] + chi_b * g[1][1];
        (d2 - l2 * chi, d1 - l1 * chi)
    }

    /// Envelope for `|alpha|` and `|beta|` from the bump and the Gram matrix.
    fn coefficient_bounds(&self) -> (f64, f64) {
        let b = &self.spec.bump;
        let g = &self.gram;
        let alpha = self.grad_sup * g[0][1].hypot(g[1][1])
            + (b.center[1].abs() + b.radius) * b.amplitude.abs();
        let beta = self.grad_sup * g[0][0].hypot(g[1][0])
            + (b.center[0].abs() + b.radius) * b.amplitude.abs();
        (alpha, beta)
    }
}

#[derive(Debug, Clone)]
pub enum Drift {
    None,
    Stream(Box<StreamDrift>),
    /// `B := DV`. Not divergence-free; exists so the validator has something
    /// to reject.
    GradientImposter,
}

#[derive(Debug, Clone)]
struct ModeTable {
    m: u32,
    cos_phase: f64,
    sin_phase: f64,
    /// `kappa w(x_i)` per cell.
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct CoordTable {
    lambda: f64,
    modes: Vec<ModeTable>,
}

/// An environment model on a fixed grid. Immutable; share it by reference.
#[derive(Debug, Clone)]
pub struct EnvModel {
    kind: EnvKind,
    potential: PotentialSpec,
    drift: Drift,
    grid: Grid,
    tables: Vec<CoordTable>,
}

/// `kappa cos(2 pi y)`, the default single-mode potential.
pub fn cosine_potential(kappa: f64) -> Vec<PotentialMode> {
    vec![PotentialMode::new(1, kappa)]
}

/// Two-mode, x-dependent default.
pub fn two_mode_potential(kappa: f64) -> Vec<PotentialMode> {
    vec![
        PotentialMode::new(1, 0.6 * kappa),
        PotentialMode { m: 2, amplitude: 0.4 * kappa, phase: 0.7, profile: XProfile::Cosine(1) },
    ]
}

impl EnvModel {
    pub fn zero(grid: &Grid) -> Self {
        Self::build(EnvKind::Zero, grid, vec![1.0], vec![vec![]]).expect("zero model is valid")
    }

    pub fn periodic(grid: &Grid, modes: Vec<PotentialMode>) -> Result<Self> {
        Self::build(EnvKind::Periodic, grid, vec![1.0], vec![modes])
    }

    pub fn quasi_periodic(
        grid: &Grid,
        frequencies: Vec<f64>,
        coordinate_modes: Vec<Vec<PotentialMode>>,
    ) -> Result<Self> {
        if frequencies.len() < 2 {
            return Err(Error::config("quasi-periodic model needs at least two frequencies"));
        }
        check_rational_independence(&frequencies)?;
        Self::build(EnvKind::QuasiPeriodic, grid, frequencies, coordinate_modes)
    }

    fn build(
        kind: EnvKind,
        grid: &Grid,
        frequencies: Vec<f64>,
        coordinates: Vec<Vec<PotentialMode>>,
    ) -> Result<Self> {
        if frequencies.len() != coordinates.len() {
            return Err(Error::config(format!(
                "{} frequencies but {} mode lists",
                frequencies.len(),
                coordinates.len()
            )));
        }
        if frequencies.iter().any(|l| !l.is_finite() || *l == 0.0) {
            return Err(Error::config("frequencies must be finite and nonzero"));
        }
        let mut tables = Vec::with_capacity(coordinates.len());
        for (&lambda, modes) in frequencies.iter().zip(&coordinates) {
            let mut table = CoordTable { lambda, modes: vec![] };
            for mode in modes {
                if mode.m == 0 {
                    return Err(Error::config("potential mode index m must be >= 1"));
                }
                if !mode.amplitude.is_finite() || !mode.phase.is_finite() {
                    return Err(Error::config("potential amplitudes and phases must be finite"));
                }
                table.modes.push(ModeTable {
                    m: mode.m,
                    cos_phase: mode.phase.cos(),
                    sin_phase: mode.phase.sin(),
                    weights: grid
                        .centers()
                        .iter()
                        .map(|&x| mode.amplitude * mode.profile.eval(x))
                        .collect(),
                });
            }
            table.modes.sort_by_key(|md| md.m);
            tables.push(table);
        }
        Ok(EnvModel {
            kind,
            potential: PotentialSpec { frequencies, coordinates },
            drift: Drift::None,
            grid: grid.clone(),
            tables,
        })
    }

    /// Attaches the divergence-free stream drift.
    pub fn with_divfree(mut self, spec: &DivFreeSpec) -> Result<Self> {
        self.drift = Drift::Stream(Box::new(StreamDrift::new(&self.grid, spec)?));
        Ok(self)
    }

    pub fn with_gradient_imposter(mut self) -> Self {
        self.drift = Drift::GradientImposter;
        self
    }

    pub fn without_drift(mut self) -> Self {
        self.drift = Drift::None;
        self
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn divfree(&self) -> Option<&DivFreeSpec> {
        match &self.drift {
            Drift::Stream(s) => Some(s.spec()),
            _ => None,
        }
    }

    pub fn has_drift(&self) -> bool {
        !matches!(self.drift, Drift::None)
    }

    pub fn dimension(&self) -> usize {
        self.potential.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.potential.frequencies
    }

    /// `tau_c sigma`: phases advanced by `lambda c`, wrapped to `[0, 1)`.
    pub fn shift(&self, sigma: &EnvPoint, c: f64) -> EnvPoint {
        EnvPoint {
            phases: sigma
                .phases
                .iter()
                .zip(&self.potential.frequencies)
                .map(|(&s, &l)| frac(s + l * c))
                .collect(),
        }
    }

    /// `sup |V| <= sum |kappa| sup |w|`.
    pub fn sup_v_bound(&self) -> f64 {
        self.potential.modes().map(|(_, m)| m.amplitude.abs()).sum()
    }

    /// Bound on `||DV||_H` (pointwise bound on each entry).
    pub fn dv_bound(&self) -> f64 {
        self.potential
            .modes()
            .map(|(l, m)| l.abs() * 2.0 * PI * m.m as f64 * m.amplitude.abs())
            .sum()
    }

    /// Lipschitz constant of `DV` in `H`, from the second `y`-derivative.
    pub fn dv_lipschitz_bound(&self) -> f64 {
        self.potential
            .modes()
            .map(|(l, m)| l * l * (2.0 * PI * m.m as f64).powi(2) * m.amplitude.abs())
            .sum()
    }

    pub fn b_bound(&self) -> f64 {
        match &self.drift {
            Drift::None => 0.0,
            Drift::GradientImposter => self.dv_bound(),
            Drift::Stream(s) => {
                let (a, b) = s.coefficient_bounds();
                (2.0 * self.sup_v_bound()).exp() * a.hypot(b)
            }
        }
    }

    fn check_point(&self, sigma: &EnvPoint) -> Result<()> {
        if sigma.phases.len() != self.dimension() {
            return Err(Error::Conformity { expected: self.dimension(), found: sigma.phases.len() });
        }
        Ok(())
    }

    /// `V(sigma, u)`, optionally writing `DV(sigma, u)` into `grad`.
    pub(crate) fn potential_and_gradient(
        &self,
        sigma: &EnvPoint,
        u: &[f64],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = 0.0;
        for (table, &phase) in self.tables.iter().zip(&sigma.phases) {
            if table.modes.is_empty() {
                continue;
            }
            for (i, &ui) in u.iter().enumerate() {
                let y = frac(table.lambda * ui + phase);
                let (s1, c1) = (2.0 * PI * y).sin_cos();
                let (mut sm, mut cm) = (s1, c1);
                let mut m = 1;
                let mut dvdy = 0.0;
                for mode in &table.modes {
                    while m < mode.m {
                        let next_c = cm * c1 - sm * s1;
                        sm = sm * c1 + cm * s1;
                        cm = next_c;
                        m += 1;
                    }
                    let w = mode.weights[i];
                    let cos_arg = cm * mode.cos_phase - sm * mode.sin_phase;
                    let sin_arg = sm * mode.cos_phase + cm * mode.sin_phase;
                    total += w * cos_arg;
                    dvdy -= 2.0 * PI * m as f64 * w * sin_arg;
                }
                if let Some(g) = grad.as_deref_mut() {
                    g[i] += table.lambda * dvdy;
                }
            }
        }
        self.grid.dx() * total
    }

    /// Writes `DV + B` into `out` without allocating.
    pub(crate) fn drift_into(&self, sigma: &EnvPoint, u: &[f64], out: &mut [f64]) {
        let v = self.potential_and_gradient(sigma, u, Some(out));
        match &self.drift {
            Drift::None => {}
            Drift::GradientImposter => out.iter_mut().for_each(|x| *x *= 2.0),
            Drift::Stream(s) => {
                let (alpha, beta) = s.coefficients(u);
                if alpha != 0.0 || beta != 0.0 {
                    let e = (2.0 * v).exp();
                    for ((o, a), b) in out.iter_mut().zip(s.k[0].iter()).zip(s.k[1].iter()) {
                        *o += e * (alpha * a - beta * b);
                    }
                }
            }
        }
    }

    fn b_from(&self, sigma: &EnvPoint, u: &[f64]) -> Field {
        let n = u.len();
        match &self.drift {
            Drift::None => Field::zeros(n),
            Drift::GradientImposter => {
                let mut g = vec![0.0; n];
                self.potential_and_gradient(sigma, u, Some(&mut g));
                Field::new(g)
            }
            Drift::Stream(s) => {
                let (alpha, beta) = s.coefficients(u);
                if alpha == 0.0 && beta == 0.0 {
                    return Field::zeros(n);
                }
                let e = (2.0 * self.potential_and_gradient(sigma, u, None)).exp();
                Field::new(
                    s.k[0].iter().zip(s.k[1].iter()).map(|(a, b)| e * (alpha * a - beta * b)).collect(),
                )
            }
        }
    }
}

fn check_rational_independence(freqs: &[f64]) -> Result<()> {
    // Only small integer relations are detectable numerically.
    for i in 0..freqs.len() {
        for j in i + 1..freqs.len() {
            for p in 1..=64i32 {
                for q in -64..=64i32 {
                    if q == 0 {
                        continue;
                    }
                    if (p as f64 * freqs[i] - q as f64 * freqs[j]).abs()
                        < 1e-9 * freqs[i].abs().max(freqs[j].abs())
                    {
                        return Err(Error::config(format!(
                            "frequencies {} and {} satisfy {p}*a = {q}*b",
                            freqs[i], freqs[j]
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Draws `sigma ~ Q`: independent uniform phases.
pub fn sample_env<R: Rng + ?Sized>(model: &EnvModel, rng: &mut R) -> EnvPoint {
    EnvPoint { phases: (0..model.dimension()).map(|_| rng.random::<f64>()).collect() }
}

pub fn eval_v(model: &EnvModel, sigma: &EnvPoint, u: &[f64]) -> Result<f64> {
    model.grid.check(u)?;
    model.check_point(sigma)?;
    Ok(model.potential_and_gradient(sigma, u, None))
}

pub fn eval_dv(model: &EnvModel, sigma: &EnvPoint, u: &[f64]) -> Result<Field> {
    model.grid.check(u)?;
    model.check_point(sigma)?;
    let mut g = vec![0.0; u.len()];
    model.potential_and_gradient(sigma, u, Some(&mut g));
    Ok(Field::new(g))
}

pub fn eval_b(model: &EnvModel, sigma: &EnvPoint, u: &[f64]) -> Result<Field> {
    model.grid.check(u)?;
    model.check_point(sigma)?;
    Ok(model.b_from(sigma, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpPart {
    Real,
    Imaginary,
}

/// Real or imaginary part of `exp(i <v, h>_H)` with `h` a Neumann cosine
/// polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTestFunction {
    pub h: Field,
    pub part: ExpPart,
    pub label: String,
}

impl ExpTestFunction {
    /// `f(v)` and the scalar `g` with `Df(v) = g h`.
    pub fn value_and_slope(&self, grid: &Grid, v: &[f64]) -> (f64, f64) {
        let p = grid.dx() * v.iter().zip(self.h.iter()).map(|(a, b)| a * b).sum::<f64>();
        let (s, c) = p.sin_cos();
        match self.part {
            ExpPart::Real => (c, -s),
            ExpPart::Imaginary => (s, c),
        }
    }
}

/// `count` exponential test functions built on `h_j = max(1, j pi) cos(j pi x)`,
/// alternating real and imaginary parts. The scale keeps `Var <v, h_j>` of
/// order one under the Wiener measure.
pub fn exponential_battery(grid: &Grid, count: usize) -> Vec<ExpTestFunction> {
    (0..count)
        .map(|idx| {
            let j = idx / 2;
            let part = if idx % 2 == 0 { ExpPart::Real } else { ExpPart::Imaginary };
            let scale = (j as f64 * PI).max(1.0);
            let mut h = grid.cosine_mode(j).scaled(scale);
            if j >= 3 {
                // mix in the mean mode so higher directions are not near-orthogonal
                // to everything the drift does
                h = h.axpy(1.0, &grid.constant(1.0));
            }
            let label = format!(
                "{}(exp(i<v,h{j}>))",
                if part == ExpPart::Real { "re" } else { "im" }
            );
            ExpTestFunction { h, part, label }
        })
        .collect()
}

/// Monte Carlo estimate of `int exp(-2V) <Df, B>_H dmu_0` for each test
/// function, using draws from the discrete Wiener measure.
pub fn verify_divergence_free<R: Rng + ?Sized>(
    model: &EnvModel,
    sigma: &EnvPoint,
    test_fns: &[ExpTestFunction],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<MeanEstimate>> {
    if n_samples < 100 {
        return Err(Error::config(format!("divergence check needs >= 100 samples, got {n_samples}")));
    }
    model.check_point(sigma)?;
    for f in test_fns {
        model.grid.check(&f.h)?;
    }
    if !model.has_drift() {
        return Ok(vec![MeanEstimate { mean: 0.0, se: 0.0 }; test_fns.len()]);
    }
    let grid = &model.grid;
    let mut sums = vec![(0.0, 0.0); test_fns.len()];
    for _ in 0..n_samples {
        let u = sample_wiener_shape(grid, rng);
        let v = model.potential_and_gradient(sigma, &u, None);
        let b = model.b_from(sigma, &u);
        let weight = (-2.0 * v).exp();
        for (f, acc) in test_fns.iter().zip(sums.iter_mut()) {
            let (_, slope) = f.value_and_slope(grid, &u);
            let hb = grid.dx() * f.h.iter().zip(b.iter()).map(|(a, c)| a * c).sum::<f64>();
            let x = weight * slope * hb;
            acc.0 += x;
            acc.1 += x * x;
        }
    }
    let n = n_samples as f64;
    Ok(sums
        .into_iter()
        .map(|(s, s2)| {
            let mean = s / n;
            let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
            MeanEstimate { mean, se: (var / n).sqrt() }
        })
        .collect())
}

/// Max discrepancy of `V(sigma, u + c) = V(tau_c sigma, u)` and the same for
/// `DV` and `B`.
pub fn verify_shift_covariance(model: &EnvModel, sigma: &EnvPoint, u: &[f64], c: f64) -> f64 {
    let shifted_u: Vec<f64> = u.iter().map(|x| x + c).collect();
    let shifted_sigma = model.shift(sigma, c);
    let mut g1 = vec![0.0; u.len()];
    let mut g2 = vec![0.0; u.len()];
    let v1 = model.potential_and_gradient(sigma, &shifted_u, Some(&mut g1));
    let v2 = model.potential_and_gradient(&shifted_sigma, u, Some(&mut g2));
    let b1 = model.b_from(sigma, &shifted_u);
    let b2 = model.b_from(&shifted_sigma, u);
    let max_diff = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    (v1 - v2).abs().max(max_diff(&g1, &g2)).max(max_diff(&b1, &b2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n_samples: usize,
    pub sup_v: f64,
    pub sup_dv_norm: f64,
    pub sup_b_norm: f64,
    pub max_dv_lipschitz_ratio: f64,
    pub max_b_lipschitz_ratio: f64,
    pub bound_v: f64,
    pub bound_dv: f64,
    pub bound_dv_lipschitz: f64,
    pub bound_b: f64,
    pub violations: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Samples boundedness and Lipschitz ratios of `V`, `DV`, `B` and compares
/// them with the envelopes implied by the model parameters.
pub fn assumption_report<R: Rng + ?Sized>(
    model: &EnvModel,
    n_samples: usize,
    rng: &mut R,
) -> AssumptionReport {
    let grid = &model.grid;
    let mut rep = AssumptionReport {
        n_samples,
        sup_v: 0.0,
        sup_dv_norm: 0.0,
        sup_b_norm: 0.0,
        max_dv_lipschitz_ratio: 0.0,
        max_b_lipschitz_ratio: 0.0,
        bound_v: model.sup_v_bound(),
        bound_dv: model.dv_bound(),
        bound_dv_lipschitz: model.dv_lipschitz_bound(),
        bound_b: model.b_bound(),
        violations: vec![],
    };
    let n = grid.n_cells();
    let mut g = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    for _ in 0..n_samples {
        let sigma = sample_env(model, rng);
        let scale = 3.0 * rng.random::<f64>();
        let shift = 4.0 * rng.random::<f64>() - 2.0;
        let u = sample_wiener_shape(grid, rng).scaled(scale).shifted(shift);
        let v = model.potential_and_gradient(&sigma, &u, Some(&mut g));
        rep.sup_v = rep.sup_v.max(v.abs());
        rep.sup_dv_norm = rep.sup_dv_norm.max(grid.norm_sq(&g).sqrt());
        let b = model.b_from(&sigma, &u);
        rep.sup_b_norm = rep.sup_b_norm.max(grid.norm_sq(&b).sqrt());

        let dir = sample_wiener_shape(grid, rng);
        let dir_norm = grid.norm_sq(&dir).sqrt();
        if dir_norm == 0.0 {
            continue;
        }
        let eps = 10f64.powf(-3.0 * rng.random::<f64>());
        let u2 = u.axpy(eps / dir_norm, &dir);
        model.potential_and_gradient(&sigma, &u2, Some(&mut g2));
        let diff: Vec<f64> = g.iter().zip(&g2).map(|(a, b)| a - b).collect();
        rep.max_dv_lipschitz_ratio = rep.max_dv_lipschitz_ratio.max(grid.norm_sq(&diff).sqrt() / eps);
        let b2 = model.b_from(&sigma, &u2);
        let diff: Vec<f64> = b.iter().zip(b2.iter()).map(|(a, c)| a - c).collect();
        rep.max_b_lipschitz_ratio = rep.max_b_lipschitz_ratio.max(grid.norm_sq(&diff).sqrt() / eps);
    }
    let tol = |bound: f64| bound * (1.0 + 1e-9) + 1e-12;
    let checks = [
        ("sup |V|", rep.sup_v, rep.bound_v),
        ("sup ||DV||_H", rep.sup_dv_norm, rep.bound_dv),
        ("Lip(DV)", rep.max_dv_lipschitz_ratio, rep.bound_dv_lipschitz),
        ("sup ||B||_H", rep.sup_b_norm, rep.bound_b),
    ];
    for (name, sampled, bound) in checks {
        if !sampled.is_finite() || sampled > tol(bound) {
            rep.violations.push(format!("{name}: sampled {sampled} exceeds bound {bound}"));
        }
    }
    rep
}

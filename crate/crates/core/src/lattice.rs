//! Cell-centred discretisation of `[0, 1]` with reflecting (Neumann) ends.
//!
//! The grid has `n` cells of width `dx = 1/n` with centres `x_i = (i + 1/2) dx`.
//! The reflecting three-point stencil is diagonalised by the sampled cosines
//! `cos(k pi x_i)`, with eigenvalues `-mu_k`, `mu_k = 2 n^2 (1 - cos(k pi / n))`.
//! Inner products are the midpoint rule `dx * sum f_i g_i`, the discrete
//! counterpart of the `L^2[0, 1]` product.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this size the cosine transform switches from a dense orthonormal
/// matrix to an FFT-based evaluation.
pub const DENSE_TRANSFORM_LIMIT: usize = 512;

/// Real-valued grid function: one value per cell centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field(vec![c; n])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + c * other`, element-wise.
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        Field(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
    }

    pub fn shifted(&self, c: f64) -> Field {
        Field(self.0.iter().map(|v| v + c).collect())
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field(self.0.iter().map(|v| v * c).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Orthonormal cosine transform onto `e_0 = 1`, `e_k = sqrt(2) cos(k pi x)`.
///
/// Forward coefficients are `a_k = <f, e_k>_H`; the inverse is `f = sum a_k e_k`.
#[derive(Clone)]
pub enum CosineTransform {
    /// Row `k` holds `e_k(x_i)`.
    Dense { n: usize, basis: Vec<f64> },
    Fast {
        n: usize,
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
        /// `exp(-i pi k / 2n)` for `k < n`.
        twiddle: Vec<Complex64>,
    },
}

impl std::fmt::Debug for CosineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CosineTransform::Dense { n, .. } => write!(f, "CosineTransform::Dense({n})"),
            CosineTransform::Fast { n, .. } => write!(f, "CosineTransform::Fast({n})"),
        }
    }
}

impl CosineTransform {
    pub fn for_size(n: usize) -> Self {
        if n <= DENSE_TRANSFORM_LIMIT {
            Self::dense(n)
        } else {
            Self::fast(n)
        }
    }

    pub fn dense(n: usize) -> Self {
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 { 1.0 } else { 2f64.sqrt() };
            for i in 0..n {
                let x = (i as f64 + 0.5) / n as f64;
                basis[k * n + i] = scale * (k as f64 * PI * x).cos();
            }
        }
        CosineTransform::Dense { n, basis }
    }

    pub fn fast(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(2 * n);
        let inverse = planner.plan_fft_inverse(2 * n);
        let twiddle = (0..n)
            .map(|k| Complex64::from_polar(1.0, -PI * k as f64 / (2 * n) as f64))
            .collect();
        CosineTransform::Fast { n, forward, inverse, twiddle }
    }

    pub fn len(&self) -> usize {
        match self {
            CosineTransform::Dense { n, .. } | CosineTransform::Fast { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, input: &[f64], direction: Direction) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(input, &mut out, direction)?;
        Ok(out)
    }

    pub fn apply_into(&self, input: &[f64], out: &mut [f64], direction: Direction) -> Result<()> {
        let n = self.len();
        for len in [input.len(), out.len()] {
            if len != n {
                return Err(Error::Conformity { expected: n, found: len });
            }
        }
        let dx = 1.0 / n as f64;
        match (self, direction) {
            (CosineTransform::Dense { basis, .. }, Direction::Forward) => {
                for (k, o) in out.iter_mut().enumerate() {
                    let row = &basis[k * n..(k + 1) * n];
                    *o = dx * row.iter().zip(input).map(|(b, f)| b * f).sum::<f64>();
                }
            }
            (CosineTransform::Dense { basis, .. }, Direction::Inverse) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (k, &a) in input.iter().enumerate() {
                    let row = &basis[k * n..(k + 1) * n];
                    for (o, b) in out.iter_mut().zip(row) {
                        *o += a * b;
                    }
                }
            }
            (CosineTransform::Fast { forward, twiddle, .. }, Direction::Forward) => {
                // Even extension of length 2n; its DFT carries the DCT-II.
                let mut buf: Vec<Complex64> = input
                    .iter()
                    .chain(input.iter().rev())
                    .map(|&v| Complex64::new(v, 0.0))
                    .collect();
                forward.process(&mut buf);
                for k in 0..n {
                    let s = 0.5 * (twiddle[k] * buf[k]).re;
                    let scale = if k == 0 { 1.0 } else { 2f64.sqrt() };
                    out[k] = dx * scale * s;
                }
            }
            (CosineTransform::Fast { inverse, twiddle, .. }, Direction::Inverse) => {
                let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
                for k in 0..n {
                    let scale = if k == 0 { 1.0 } else { 2f64.sqrt() };
                    buf[k] = twiddle[k].conj() * (scale * input[k]);
                }
                inverse.process(&mut buf);
                for (o, z) in out.iter_mut().zip(&buf) {
                    *o = z.re;
                }
            }
        }
        Ok(())
    }
}

/// Uniform cell-centred grid on `[0, 1]`. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Grid {
    n_cells: usize,
    dx: f64,
    centers: Vec<f64>,
    eigenvalues: Vec<f64>,
    transform: Arc<CosineTransform>,
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n_cells == other.n_cells
    }
}

impl Grid {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::config("grid needs at least one cell"));
        }
        let n = n_cells as f64;
        let dx = 1.0 / n;
        let centers = (0..n_cells).map(|i| (i as f64 + 0.5) * dx).collect();
        let eigenvalues = (0..n_cells)
            .map(|k| 2.0 * n * n * (1.0 - (k as f64 * PI / n).cos()))
            .collect();
        Ok(Grid {
            n_cells,
            dx,
            centers,
            eigenvalues,
            transform: Arc::new(CosineTransform::for_size(n_cells)),
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// `mu_k`, the negated spectrum of the Neumann stencil.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn transform(&self) -> &CosineTransform {
        &self.transform
    }

    pub fn check(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_cells {
            return Err(Error::Conformity { expected: self.n_cells, found: f.len() });
        }
        Ok(())
    }

    /// Index of the cell whose centre is closest to `x`.
    pub fn nearest_cell(&self, x: f64) -> usize {
        let i = (x * self.n_cells as f64 - 0.5).round();
        i.clamp(0.0, (self.n_cells - 1) as f64) as usize
    }

    pub fn constant(&self, c: f64) -> Field {
        Field::constant(self.n_cells, c)
    }

    /// Unnormalised sampled cosine `cos(k pi x_i)`.
    pub fn cosine_mode(&self, k: usize) -> Field {
        Field(self.centers.iter().map(|x| (k as f64 * PI * x).cos()).collect())
    }

    /// H-orthonormal basis vector `e_k`.
    pub fn basis_vector(&self, k: usize) -> Field {
        let scale = if k == 0 { 1.0 } else { 2f64.sqrt() };
        self.cosine_mode(k).scaled(scale)
    }

    pub fn from_fn(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.centers.iter().map(|&x| f(x)).collect())
    }

    /// `<f, 1>_H`, the mean mode.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.dx * f.iter().sum::<f64>()
    }

    pub fn norm_sq(&self, f: &[f64]) -> f64 {
        self.dx * f.iter().map(|v| v * v).sum::<f64>()
    }
}

pub fn inner_h(grid: &Grid, f: &[f64], g: &[f64]) -> Result<f64> {
    grid.check(f)?;
    grid.check(g)?;
    Ok(grid.dx * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
}

/// Reflecting stencil `(f_{i-1} - 2 f_i + f_{i+1}) / dx^2` with mirrored ghosts.
pub fn neumann_laplacian_apply(grid: &Grid, f: &[f64]) -> Result<Field> {
    grid.check(f)?;
    let n = f.len();
    let inv = 1.0 / (grid.dx * grid.dx);
    let out = (0..n)
        .map(|i| {
            let left = if i == 0 { f[0] } else { f[i - 1] };
            let right = if i + 1 == n { f[n - 1] } else { f[i + 1] };
            (left - 2.0 * f[i] + right) * inv
        })
        .collect();
    Ok(Field(out))
}

pub fn cosine_transform(grid: &Grid, f: &[f64], direction: Direction) -> Result<Vec<f64>> {
    grid.transform.apply(f, direction)
}

/// Brownian path from the origin sampled at the cell centres: the discrete
/// Wiener measure, `Cov(v_i, v_j) = min(x_i, x_j)`.
pub fn sample_wiener_shape<R: Rng + ?Sized>(grid: &Grid, rng: &mut R) -> Field {
    let mut v = Vec::with_capacity(grid.n_cells);
    let first_sd = (0.5 * grid.dx).sqrt();
    let sd = grid.dx.sqrt();
    let mut acc = 0.0;
    for i in 0..grid.n_cells {
        let z: f64 = rng.sample(StandardNormal);
        acc += if i == 0 { first_sd * z } else { sd * z };
        v.push(acc);
    }
    Field(v)
}

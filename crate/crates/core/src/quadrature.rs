//! Small numerical helpers: Gauss-Hermite rules, the normal CDF and
//! Monte Carlo mean estimates.

use serde::{Deserialize, Serialize};

/// Gauss-Hermite nodes and weights for the weight `exp(-x^2)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        GaussHermite { nodes: x, weights: w }
    }

    /// `E f(Y)` for `Y ~ Normal(0, sd^2)`.
    pub fn gaussian_expectation(&self, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        let s: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(scale * x))
            .sum();
        s / std::f64::consts::PI.sqrt()
    }
}

pub fn normal_cdf(x: f64, sd: f64) -> f64 {
    0.5 * libm::erfc(-x / (sd * std::f64::consts::SQRT_2))
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        if samples.is_empty() {
            return MeanEstimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return MeanEstimate { mean, se: f64::NAN };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MeanEstimate { mean, se: (var / n).sqrt() }
    }

    /// Self-normalised importance-weighted mean; the standard error uses the
    /// usual delta-method variance of the ratio estimator.
    pub fn weighted(values: &[f64], weights: &[f64]) -> Self {
        let wsum: f64 = weights.iter().sum();
        let mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
        let var = values
            .iter()
            .zip(weights)
            .map(|(v, w)| (w / wsum).powi(2) * (v - mean).powi(2))
            .sum::<f64>();
        MeanEstimate { mean, se: var.sqrt() }
    }
}

pub fn sample_variance(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_moments() {
        let gh = GaussHermite::new(64);
        let total: f64 = gh.weights.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        for sd in [0.3, 1.0, 2.5] {
            assert!((gh.gaussian_expectation(sd, |y| y * y) - sd * sd).abs() < 1e-12);
            assert!((gh.gaussian_expectation(sd, |y| y.powi(4)) - 3.0 * sd.powi(4)).abs() < 1e-10);
            let cf = gh.gaussian_expectation(sd, f64::cos);
            assert!((cf - (-sd * sd / 2.0).exp()).abs() < 1e-13);
        }
        let gh5 = GaussHermite::new(5);
        assert!(gh5.nodes.windows(2).all(|w| w[0] > w[1]));
        assert!(gh5.nodes[2].abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0, 2.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959_963_984_540_054, 1.0) - 0.975).abs() < 1e-12);
        assert!((normal_cdf(-2.0, 2.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
    }

    #[test]
    fn weighted_mean_with_unit_weights_is_plain_mean() {
        let v = [1.0, 2.0, 4.0, 7.0];
        let w = [1.0; 4];
        let a = MeanEstimate::weighted(&v, &w);
        let b = MeanEstimate::from_samples(&v);
        assert_eq!(a.mean, b.mean);
    }
}

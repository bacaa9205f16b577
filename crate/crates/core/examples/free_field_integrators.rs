//! Semi-implicit versus exact Ornstein-Uhlenbeck integration of the free
//! field: stationary mode variances against `1/mu_k`.

use rse_heat::dynamics::{Scheme, SimState, Stepper};
use rse_heat::environment::{EnvModel, EnvPoint};
use rse_heat::lattice::Direction;
use rse_heat::quadrature::sample_variance;
use rse_heat::rng::{stream_rng, Stream};
use rse_heat::Grid;

fn stationary_variances(grid: &Grid, scheme: Scheme, dt: f64, steps: usize, every: usize) -> rse_heat::Result<Vec<f64>> {
    let model = EnvModel::zero(grid);
    let mut stepper = Stepper::new(grid, dt, scheme)?;
    let mut coeffs: Vec<Vec<f64>> = vec![vec![]; grid.n_cells()];
    for r in 0..50u64 {
        let mut rng = stream_rng(1, Stream::Noise, &[r]);
        let mut st = SimState::new(grid.constant(0.0), EnvPoint::new(vec![]));
        for step in 1..=steps {
            stepper.advance(&model, &mut st, &mut rng)?;
            if step % every == 0 && step * 5 >= steps {
                let c = grid.transform().apply(&st.u, Direction::Forward)?;
                coeffs.iter_mut().zip(c).for_each(|(v, x)| v.push(x));
            }
        }
    }
    Ok(coeffs.iter().map(|c| sample_variance(c)).collect())
}

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(32)?;
    let dt = 1e-3;
    let exact = stationary_variances(&grid, Scheme::ExactFree, 0.5, 200, 1)?;
    let semi = stationary_variances(&grid, Scheme::SemiImplicit, dt, 20_000, 500)?;
    println!("{:>3} {:>10} {:>10} {:>10} {:>12}", "k", "1/mu_k", "exact", "semi", "1/(1+dt mu/4)");
    for k in [1, 2, 4, 8, 16, 31] {
        let mu = grid.eigenvalues()[k];
        println!(
            "{k:>3} {:>10.3e} {:>10.3e} {:>10.3e} {:>12.4}  (semi/exact {:.4})",
            1.0 / mu,
            exact[k],
            semi[k],
            1.0 / (1.0 + dt * mu / 4.0),
            semi[k] / exact[k]
        );
    }
    Ok(())
}

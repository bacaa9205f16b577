//! Neumann Laplacian spectrum, cosine transform round trip and the discrete
//! Wiener measure on a small grid.

use rand::SeedableRng;
use rse_heat::lattice::{cosine_transform, inner_h, neumann_laplacian_apply, sample_wiener_shape, Direction};
use rse_heat::quadrature::sample_variance;
use rse_heat::rng::SimRng;
use rse_heat::Grid;

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(16)?;
    println!("n = {}, dx = {}", grid.n_cells(), grid.dx());

    println!("{:>3} {:>12} {:>12} {:>12}", "k", "mu_k", "(k pi)^2", "Rayleigh");
    for k in [0, 1, 2, 4, 8, 15] {
        let e = grid.cosine_mode(k);
        let lap = neumann_laplacian_apply(&grid, &e)?;
        let rayleigh = -inner_h(&grid, &e, &lap)? / grid.norm_sq(&e);
        let continuum = (k as f64 * std::f64::consts::PI).powi(2);
        println!("{k:>3} {:>12.4} {continuum:>12.4} {rayleigh:>12.4}", grid.eigenvalues()[k]);
    }

    let f = grid.from_fn(|x| (3.0 * x).exp());
    let coeffs = cosine_transform(&grid, &f, Direction::Forward)?;
    let back = cosine_transform(&grid, &coeffs, Direction::Inverse)?;
    let err = f.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("transform round trip max error {err:.2e}");
    println!("Parseval: ||f||^2 = {:.10}, sum c_k^2 = {:.10}", grid.norm_sq(&f), coeffs.iter().map(|c| c * c).sum::<f64>());

    let mut rng = SimRng::seed_from_u64(1);
    let paths: Vec<_> = (0..20_000).map(|_| sample_wiener_shape(&grid, &mut rng)).collect();
    println!("Wiener shape: Var v(x_i) vs x_i");
    for i in [0, 7, 15] {
        let vals: Vec<f64> = paths.iter().map(|p| p[i]).collect();
        println!("  x = {:.4}: {:.4}", grid.centers()[i], sample_variance(&vals));
    }
    Ok(())
}

//! Monte Carlo check of `Var f <= E ||Df||^2` for cylinder functions under
//! the discrete Wiener measure.

use rse_heat::diffusivity::{default_cylinder_battery, poincare_check};
use rse_heat::rng::{stream_rng, Stream};
use rse_heat::Grid;

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(32)?;
    let battery = default_cylinder_battery(&grid);
    let results = poincare_check(&grid, &battery, 50_000, &mut stream_rng(3, Stream::Validation, &[]))?;
    println!("{:<10} {:>10} {:>10} {:>10} {:>10} {:>6}", "f", "Var f", "se", "E|Df|^2", "se", "pass");
    for r in results {
        println!(
            "{:<10} {:>10.5} {:>10.1e} {:>10.5} {:>10.1e} {:>6}",
            r.name, r.variance, r.variance_se, r.energy, r.energy_se, r.passed
        );
    }
    Ok(())
}

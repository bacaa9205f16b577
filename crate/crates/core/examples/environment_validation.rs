//! Builds gradient, quasi-periodic and divergence-free environments and runs
//! the validators on each, including a deliberately wrong drift `B = DV`.

use rand::SeedableRng;
use rse_heat::environment::{
    assumption_report, cosine_potential, exponential_battery, sample_env, verify_divergence_free,
    verify_shift_covariance, DivFreeSpec, EnvModel, PotentialMode,
};
use rse_heat::lattice::sample_wiener_shape;
use rse_heat::rng::SimRng;
use rse_heat::Grid;

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(16)?;
    let spec = DivFreeSpec::with_score_scaled_radius(&grid, [0, 1], 2.5, 1.0)?;
    let models = [
        ("cosine", EnvModel::periodic(&grid, cosine_potential(0.5))?),
        (
            "quasi-periodic",
            EnvModel::quasi_periodic(&grid, vec![1.0, 2f64.sqrt()], vec![cosine_potential(0.3), vec![PotentialMode::new(2, 0.2)]])?,
        ),
        ("cosine + stream B", EnvModel::periodic(&grid, cosine_potential(0.5))?.with_divfree(&spec)?),
        ("imposter B = DV", EnvModel::periodic(&grid, cosine_potential(0.5))?.with_gradient_imposter()),
    ];
    let battery = exponential_battery(&grid, 6);
    let mut rng = SimRng::seed_from_u64(7);
    for (name, model) in &models {
        println!("== {name}");
        let rep = assumption_report(model, 500, &mut rng);
        println!(
            "  sup|V| {:.3} <= {:.3}, sup||DV|| {:.3} <= {:.3}, sup||B|| {:.3} <= {:.3}, violations {}",
            rep.sup_v, rep.bound_v, rep.sup_dv_norm, rep.bound_dv, rep.sup_b_norm, rep.bound_b, rep.violations.len()
        );
        let sigma = sample_env(model, &mut rng);
        let u = sample_wiener_shape(&grid, &mut rng);
        println!("  shift covariance deviation {:.1e}", verify_shift_covariance(model, &sigma, &u, 1.37));
        let est = verify_divergence_free(model, &sigma, &battery, 200_000, &mut rng)?;
        let z: Vec<String> = est.iter().map(|e| format!("{:+.1}", e.mean / e.se)).collect();
        println!("  divergence z-scores [{}]", z.join(", "));
    }
    Ok(())
}

//! Brackets the effective variance of a one-cell cosine environment:
//! Monte Carlo slope, the lower bound `C`, the variational upper bound and
//! the closed form `1/I0(1)^2`.

use rse_heat::diffusivity::{estimate_a2_slope, lower_bound_c, sample_pi, variational_bound, DiffusivityReport, TrialFamily};
use rse_heat::dynamics::Scheme;
use rse_heat::ensemble::{run_ensemble, EnsembleConfig, InitialCondition};
use rse_heat::environment::{cosine_potential, EnvModel};
use rse_heat::rng::{stream_rng, Stream};
use rse_heat::Grid;

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(1)?;
    let model = EnvModel::periodic(&grid, cosine_potential(0.5))?;
    let pi = sample_pi(&model, 50_000, &mut stream_rng(5, Stream::Pi, &[]))?;
    let lower = lower_bound_c(&model, &pi);
    println!("C = {:.5} +- {:.1e}", lower.c, lower.se);
    let mut last = None;
    for m in 1..=4 {
        let vb = variational_bound(&model, &TrialFamily { modes: m }, &pi)?;
        println!("variational bound, M = {m}: {:.5} (cond {:.1e})", vb.bound, vb.condition);
        last = Some(vb);
    }
    let vb = last.expect("at least one trial size");

    let t_end = 20.0;
    let config = EnsembleConfig {
        n_env: 40,
        n_noise: 50,
        n_cells: 1,
        dt: 1e-3,
        t_end,
        checkpoints: EnsembleConfig::uniform_checkpoints(t_end, 1e-3, 20),
        master_seed: 5,
        scheme: Scheme::SemiImplicit,
        initial: InitialCondition::Zero,
        workers: None,
    };
    let slope = estimate_a2_slope(&run_ensemble(&config, &model)?, 0.2)?;
    let report = DiffusivityReport::new(&slope, &lower, Some((&vb, 4)), 0.2, pi.samples.len());
    let i0: f64 = (0..30).map(|k| 0.25f64.powi(k) / (1..=k).map(|j| j as f64).product::<f64>().powi(2)).sum();
    println!("a2_hat = {:.4} +- {:.4}, closed form {:.5}", slope.a2_hat, slope.se, 1.0 / (i0 * i0));
    println!("sandwich pass {}, variational pass {:?}", report.sandwich_pass, report.variational_pass);
    Ok(())
}

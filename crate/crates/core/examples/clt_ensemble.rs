//! Environment x noise ensemble over a cosine potential: variance growth of
//! the mean mode, concentration on constants, the L1 CLT metric and a KS
//! test of `u_bar(T)/sqrt(T)`.

use rse_heat::diffusivity::estimate_a2_slope;
use rse_heat::dynamics::Scheme;
use rse_heat::ensemble::{
    clt_l1_metric, concentration_stats, ks_gaussianity, run_ensemble, CltFunctional, EnsembleConfig, InitialCondition,
};
use rse_heat::environment::{cosine_potential, EnvModel};
use rse_heat::Grid;

fn main() -> rse_heat::Result<()> {
    let grid = Grid::new(16)?;
    let model = EnvModel::periodic(&grid, cosine_potential(0.5))?;
    let t_end = 8.0;
    let config = EnsembleConfig {
        n_env: 30,
        n_noise: 20,
        n_cells: 16,
        dt: 1e-3,
        t_end,
        checkpoints: EnsembleConfig::uniform_checkpoints(t_end, 1e-3, 16),
        master_seed: 2024,
        scheme: Scheme::SemiImplicit,
        initial: InitialCondition::Constant { value: 1.0 },
        workers: None,
    };
    let stats = run_ensemble(&config, &model)?;
    let slope = estimate_a2_slope(&stats, 0.2)?;
    println!("a2_hat = {:.4} +- {:.4}", slope.a2_hat, slope.se);

    let conc = concentration_stats(&stats)?;
    println!("{:>6} {:>14} {:>12}", "t", "fluct var", "Var u_bar");
    for r in conc.rows.iter().step_by(3) {
        println!("{:>6.2} {:>14.5} {:>12.5}", r.t, r.sup_cell_fluct_var, r.var_mean_mode);
    }
    let (f, v) = conc.ratios(4.0, 8.0);
    println!("ratios 8/4: fluctuation {f:.3}, mean-mode variance {v:.3}");

    let battery = CltFunctional::default_battery();
    let rows = clt_l1_metric(&stats, &battery, slope.a2_hat.sqrt())?;
    for r in rows.iter().step_by(5) {
        println!("t = {:>5.2}: combined metric {:.4} (floor {:.4})", r.t, r.combined(), r.combined_floor());
    }

    let last = stats.final_index();
    let ks = ks_gaussianity(&stats.scaled_mean_modes_at(last), slope.a2_hat.sqrt())?;
    println!("KS: n = {}, D_n = {:.4}, 99% threshold {:.4}, pass {}", ks.n, ks.d_n, ks.threshold, ks.pass);
    Ok(())
}

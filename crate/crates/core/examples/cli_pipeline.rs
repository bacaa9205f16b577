//! Drives the validate / simulate / analyze pipeline from code, writing the
//! same files as the `rse-heat` binary.

use rse_heat::cli::{cmd_full, ExperimentConfig, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ExperimentConfig::from_json(
        r#"{
            "environment": {"kind": "periodic", "modes": [{"m": 1, "amplitude": 0.5}]},
            "grid": {"n_cells": 8},
            "dynamics": {"dt": 0.001, "t_end": 4.0, "n_checkpoints": 8},
            "ensemble": {"n_env": 20, "n_noise": 15, "master_seed": 3},
            "analysis": {"pi_samples": 20000},
            "validation": {"divergence_samples": 20000}
        }"#,
        "inline",
    )?;
    let out = std::env::temp_dir().join("rse-heat-pipeline");
    let outcome = cmd_full(&config, &RunOptions { out_dir: Some(out.clone()), ..Default::default() })?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    println!("gates passed: {}", outcome.passed);
    println!("{}", std::fs::read_to_string(out.join("diffusivity.json"))?);
    Ok(())
}

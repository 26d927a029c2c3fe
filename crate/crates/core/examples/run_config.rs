//! Driving a run from a JSON config, as the `dpdr train` subcommand does.

use dpdr::experiment::{execute, resolve, RunConfig};
use dpdr::RunOptions;

const CONFIG: &str = r#"{
  "method": "dpdr",
  "total_steps": 60,
  "switch_step": 10,
  "batch": 64,
  "lr": 0.5,
  "clip": { "c_g": 1.0, "c_perp": 1.0, "c_alpha": 1.0 },
  "privacy": { "eps": 3.0, "delta": 1e-5, "sigma_alpha": 2.0 },
  "dataset": { "kind": "synthetic", "params": { "n": 2000, "d_in": 10, "n_classes": 2, "margin": 4.0, "seed": 1 } },
  "seed": 7
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = RunConfig::from_json(CONFIG)?;
    let run = resolve(config)?;
    let noise = run.train.noise;
    println!(
        "calibrated σ_g {:.4}, σ⊥ {:.4}, σ_α {}",
        noise.sigma_g, noise.sigma_perp, noise.sigma_alpha
    );

    let out = std::env::temp_dir().join(format!("dpdr-config-example-{}", std::process::id()));
    let artifacts = execute(&run, &out, RunOptions::default())?;
    println!("wrote {}", artifacts.metrics_csv_path.display());
    print!("{}", artifacts.summary.to_json());

    match RunConfig::from_json(r#"{"method": "dpdr", "lr_schedule": 1}"#) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    let _ = std::fs::remove_dir_all(&out);
    Ok(())
}

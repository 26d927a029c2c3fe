//! All four methods on the same data and sampling seed, DP methods at equal ε.

use dpdr::accountant::dpdr_schedule;
use dpdr::data::gen_synthetic;
use dpdr::experiment::steps_to_target_loss;
use dpdr::trainer::train;
use dpdr::{calibrate_sigma, Architecture, ClipSpec, Conversion, Method, NoisePlan, RunOptions, TrainConfig};

fn main() -> dpdr::Result<()> {
    let data = gen_synthetic(4096, 30, 3, 4.0, 11)?;
    let arch = Architecture::LogisticRegression { d_in: 30, n_classes: 3 };
    let (batch, steps) = (128usize, 150u64);
    let q = batch as f64 / data.len() as f64;

    println!("method  final loss  accuracy  steps to 0.2  eps");
    for method in [Method::Sgd, Method::Dpsgd, Method::Diff, Method::Dpdr] {
        let switch = if method == Method::Dpdr { 30 } else { 1 };
        let noise = if method.is_private() {
            let cal = calibrate_sigma(2.0, 1e-5, &dpdr_schedule(q, steps, switch), 2.0, 1.0, Conversion::default())?;
            NoisePlan {
                sigma_g: cal.sigma_g,
                sigma_perp: if cal.perp_used() { cal.sigma_perp } else { 0.0 },
                sigma_alpha: if cal.perp_used() { cal.sigma_alpha } else { 0.0 },
            }
        } else {
            NoisePlan::default()
        };
        let config = TrainConfig {
            method,
            total_steps: steps,
            switch_step: switch,
            expected_batch: batch,
            lr: 0.5,
            clip: ClipSpec::new(1.0, 1.0, 1.0)?,
            noise,
            seed: 1,
            delta: 1e-5,
        };
        let run = train(&config, &arch, &data, RunOptions::default())?;
        let last = run.final_metrics();
        println!(
            "{:<6}  {:.4}      {:.4}    {:>12}  {:.3}",
            method.as_str(),
            last.train_loss,
            last.train_accuracy,
            steps_to_target_loss(&run.metrics, 0.2).map_or("-".into(), |s| s.to_string()),
            last.eps_cum
        );
    }
    Ok(())
}

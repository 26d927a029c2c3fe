//! A calibrated DPDR run on synthetic blobs, printing the per-step telemetry
//! of the decomposition phase.

use dpdr::accountant::dpdr_schedule;
use dpdr::data::gen_synthetic;
use dpdr::trainer::train;
use dpdr::{calibrate_sigma, Architecture, ClipSpec, Conversion, Method, NoisePlan, RunOptions, TrainConfig};

fn main() -> dpdr::Result<()> {
    let data = gen_synthetic(2048, 20, 2, 4.0, 3)?;
    let arch = Architecture::LogisticRegression { d_in: 20, n_classes: 2 };
    let (batch, steps, switch) = (64usize, 120u64, 20u64);
    let q = batch as f64 / data.len() as f64;

    let cal = calibrate_sigma(3.0, 1e-5, &dpdr_schedule(q, steps, switch), 2.0, 1.0, Conversion::default())?;
    let config = TrainConfig {
        method: Method::Dpdr,
        total_steps: steps,
        switch_step: switch,
        expected_batch: batch,
        lr: 0.5,
        clip: ClipSpec::new(1.0, 1.0, 1.0)?,
        noise: NoisePlan {
            sigma_g: cal.sigma_g,
            sigma_perp: cal.sigma_perp,
            sigma_alpha: cal.sigma_alpha,
        },
        seed: 5,
        delta: 1e-5,
    };

    let run = train(&config, &arch, &data, RunOptions::default())?;
    println!("step  loss     |g| med  |g_perp| med  |alpha|   eps");
    for m in run.metrics.iter().filter(|m| m.step <= 5 || m.step % 20 == 0) {
        println!(
            "{:>4}  {:.4}   {:>7}  {:>12}  {:>7}  {:.3}",
            m.step,
            m.train_loss,
            fmt(m.grad_norm_median),
            fmt(m.perp_norm_median),
            fmt(m.alpha_vec_norm),
            m.eps_cum
        );
    }
    let last = run.final_metrics();
    println!(
        "phases {:?}; final accuracy {:.4}, ε {:.3}",
        run.phase_steps, last.train_accuracy, last.eps_cum
    );
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

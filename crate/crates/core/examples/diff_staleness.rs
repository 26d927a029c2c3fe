//! Why the DIFF strawman does not save budget: when the previous release is
//! stale the differences are larger than the gradients themselves.

use dpdr::trainer::{diff_step, StepContext};
use dpdr::{Architecture, Batch, Model};

fn main() -> dpdr::Result<()> {
    let arch = Architecture::LogisticRegression { d_in: 2, n_classes: 2 };
    let model = Model::init(arch, 0)?;
    let batch = Batch::new(vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![1.1, -0.1]], vec![0, 0, 0])?;
    let grads = model.per_sample_gradients(&batch)?;
    let mean = dpdr::model::mean(&grads)?;

    for (label, prev) in [("fresh", mean.clone()), ("zero", mean.zeros_like()), ("stale (-g)", mean.scale(-1.0))] {
        let ctx = StepContext {
            seed: 1,
            step: 2,
            q: 0.01,
            lr: 0.1,
            expected_batch: 3,
            prev_release: Some(&prev),
        };
        let out = diff_step(&model, &batch, &prev, 1e9, 0.0, &ctx)?;
        let t = out.telemetry;
        println!(
            "{label:<10} median |g| {:.4}, median |g - prev| {:.4}, ratio {:.3}",
            t.grad_norm_median.unwrap(),
            t.diff_norm_median.unwrap(),
            t.diff_norm_median.unwrap() / t.grad_norm_median.unwrap()
        );
    }
    Ok(())
}

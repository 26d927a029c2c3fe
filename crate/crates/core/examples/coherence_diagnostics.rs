//! Gradient-coherence diagnostics: cosine between consecutive releases,
//! a sensitivity probe against a base, and a histogram of |g_perp|.

use dpdr::data::{gen_synthetic, poisson_sample};
use dpdr::diagnostics::{coherence_stats, histogram, sensitivity_probe};
use dpdr::experiment::histogram_text;
use dpdr::{normalize_base, Architecture, Model, RngStream, StreamTag};

fn main() -> dpdr::Result<()> {
    let data = gen_synthetic(1000, 8, 2, 3.0, 2)?;
    let model = Model::init(Architecture::LogisticRegression { d_in: 8, n_classes: 2 }, 4)?;

    let draw = |step| poisson_sample(&data, 0.1, &RngStream::aggregate(9, step, StreamTag::Sampling));
    let first = model.mean_gradient(&draw(1)?)?;
    let second = model.mean_gradient(&draw(2)?)?;
    let c = coherence_stats(&first, &second)?;
    println!("cosine {:.4}, |g2 - g1| / |g2| {:.4}", c.cosine, c.norm_ratio);

    let base = normalize_base(&first, 1);
    let per_sample = model.per_sample_gradients(&draw(2)?)?;
    let probe = sensitivity_probe(&per_sample, &base, 0.0)?;
    println!(
        "median |g| {:.4}, median |g_perp| {:.4}, median ratio {:.4}",
        probe.grad_norm.median, probe.perp_norm.median, probe.perp_ratio_median
    );
    print!("{}", histogram_text(&histogram(&probe.perp_norms, 8)?));
    Ok(())
}

//! Exact per-sample gradients for a small MLP, checked against central
//! differences on the first sample.

use dpdr::{Activation, Architecture, Batch, LayeredVector, Model};

fn main() -> dpdr::Result<()> {
    let arch = Architecture::Mlp {
        d_in: 3,
        hidden: vec![4],
        n_classes: 2,
        activation: Activation::Tanh,
    };
    let model = Model::init(arch.clone(), 1)?;
    let batch = Batch::new(
        vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.3]],
        vec![1, 0],
    )?;

    let grads = model.per_sample_gradients(&batch)?;
    for (i, g) in grads.iter().enumerate() {
        println!("sample {i}: layer norms {:.4?}", g.layer_norms());
    }

    let first = Batch::new(vec![batch.inputs[0].clone()], vec![1])?;
    let theta = model.parameters().as_slice().to_vec();
    let dims = arch.layer_dims();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let loss_at = |d: f64| -> dpdr::Result<f64> {
            let mut t = theta.clone();
            t[i] += d;
            Model::from_parameters(arch.clone(), LayeredVector::from_flat(t, &dims)?)?.loss(&first)
        };
        let fd = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        worst = worst.max((fd - grads[0].as_slice()[i]).abs());
    }
    println!("max |analytic - numeric| = {worst:.2e}");
    Ok(())
}

//! Layered vectors and counter-based noise streams.
//!
//! Every random draw is addressed by (seed, step, tag, sample), so a step can
//! be replayed without touching the rest of the run.

use dpdr::{LayeredVector, RngStream, StreamTag};

fn main() -> dpdr::Result<()> {
    let v = LayeredVector::from_layers(vec![vec![3.0, 4.0], vec![1.0, 0.0, 0.0]])?;
    println!("dims {:?}, total {}", v.layer_dims(), v.total_dim());
    println!("layer norms {:?}, global norm {:.4}", v.layer_norms(), v.norm());

    let a = RngStream::aggregate(7, 12, StreamTag::NoiseGrad);
    let b = RngStream::aggregate(7, 12, StreamTag::NoiseGrad);
    let c = RngStream::aggregate(7, 13, StreamTag::NoiseGrad);
    println!("replayed: {}", a.gaussians(4, 1.0) == b.gaussians(4, 1.0));
    println!("next step differs: {}", a.gaussians(4, 1.0) != c.gaussians(4, 1.0));

    let noise = LayeredVector::gaussian(&a, v.layer_dims(), 0.5)?;
    println!("noisy {:?}", v.add(&noise)?.as_slice());
    Ok(())
}

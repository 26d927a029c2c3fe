#![allow(dead_code)]

use dpdr::gdr::normalize_base;
use dpdr::{Activation, Architecture, Batch, GdrBase, LayeredVector, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_architecture(rng: &mut ChaCha8Rng) -> Architecture {
    let d_in = rng.random_range(1..=8);
    let n_classes = rng.random_range(2..=4);
    if rng.random_bool(0.4) {
        Architecture::LogisticRegression { d_in, n_classes }
    } else {
        Architecture::Mlp {
            d_in,
            hidden: (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=6)).collect(),
            n_classes,
            activation: if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Relu },
        }
    }
}

/// A random model, a nonempty batch and a unit base with random layers.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Model, Batch, GdrBase) {
    let arch = random_architecture(rng);
    let model = Model::init(arch.clone(), rng.random()).unwrap();
    let n = rng.random_range(1..=12);
    let inputs = (0..n)
        .map(|_| (0..arch.d_in()).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..arch.n_classes())).collect();
    let batch = Batch::new(inputs, labels).unwrap();
    let dims = arch.layer_dims();
    let flat = (0..dims.iter().sum::<usize>()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let base = normalize_base(&LayeredVector::from_flat(flat, &dims).unwrap(), 1);
    (model, batch, base)
}

pub fn relative_error(a: &LayeredVector, b: &LayeredVector) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Update direction implied by two models: `w_before − w_after`.
pub fn update(before: &Model, after: &Model) -> LayeredVector {
    before.parameters().sub(after.parameters()).unwrap()
}

/// Central differences of one example's loss, coordinate by coordinate.
pub fn numeric_gradient(model: &Model, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    let arch = model.architecture().clone();
    let dims = arch.layer_dims();
    let theta = model.parameters().as_slice().to_vec();
    let one = Batch::new(vec![x.to_vec()], vec![y]).unwrap();
    let loss_at = |t: Vec<f64>| {
        Model::from_parameters(arch.clone(), LayeredVector::from_flat(t, &dims).unwrap())
            .unwrap()
            .loss(&one)
            .unwrap()
    };
    (0..theta.len())
        .map(|i| {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[i] += h;
            minus[i] -= h;
            (loss_at(plus) - loss_at(minus)) / (2.0 * h)
        })
        .collect()
}

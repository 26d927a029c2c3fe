//! Dense classifiers with exact per-sample gradients.
//!
//! Parameters are laid out as one block per weight matrix (row-major,
//! `out × in`) followed by one block per bias vector, layer by layer. These
//! blocks are the layers used by the per-layer decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamTag};
use crate::vector::LayeredVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Architecture {
    LogisticRegression {
        d_in: usize,
        n_classes: usize,
    },
    Mlp {
        d_in: usize,
        hidden: Vec<usize>,
        n_classes: usize,
        #[serde(default)]
        activation: Activation,
    },
}

impl Architecture {
    pub fn d_in(&self) -> usize {
        match self {
            Architecture::LogisticRegression { d_in, .. } | Architecture::Mlp { d_in, .. } => *d_in,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Architecture::LogisticRegression { n_classes, .. }
            | Architecture::Mlp { n_classes, .. } => *n_classes,
        }
    }

    fn widths(&self) -> Vec<usize> {
        match self {
            Architecture::LogisticRegression { d_in, n_classes } => vec![*d_in, *n_classes],
            Architecture::Mlp {
                d_in,
                hidden,
                n_classes,
                ..
            } => {
                let mut w = vec![*d_in];
                w.extend(hidden);
                w.push(*n_classes);
                w
            }
        }
    }

    fn activation(&self) -> Activation {
        match self {
            Architecture::LogisticRegression { .. } => Activation::Relu,
            Architecture::Mlp { activation, .. } => *activation,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d_in() == 0 {
            return Err(Error::contract("d_in must be positive"));
        }
        if self.n_classes() < 2 {
            return Err(Error::contract("a classifier needs at least two classes"));
        }
        if self.widths().contains(&0) {
            return Err(Error::contract("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// Block sizes of the parameter vector.
    pub fn layer_dims(&self) -> Vec<usize> {
        self.widths()
            .windows(2)
            .flat_map(|w| [w[0] * w[1], w[1]])
            .collect()
    }
}

/// A labelled batch. Empty batches are representable because Poisson
/// sampling can produce them; operations that need samples reject them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::contract(format!(
                "batch has {} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.inputs.iter().map(Vec::as_slice).zip(self.labels.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    architecture: Architecture,
    params: LayeredVector,
}

struct Trace {
    /// Activations per layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Model {
    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let dims = architecture.layer_dims();
        let widths = architecture.widths();
        let mut params = LayeredVector::zeros(&dims)?;
        for (k, w) in widths.windows(2).enumerate() {
            let fan_in = w[0];
            let stream = RngStream::new(seed, 0, StreamTag::Init, k as i64);
            let draws = stream.gaussians(w[0] * w[1], 1.0 / (fan_in as f64).sqrt());
            params.layer_mut(2 * k).copy_from_slice(&draws);
        }
        Ok(Self {
            architecture,
            params,
        })
    }

    pub fn from_parameters(architecture: Architecture, params: LayeredVector) -> Result<Self> {
        architecture.validate()?;
        if params.layer_dims() != architecture.layer_dims().as_slice() {
            return Err(Error::ShapeMismatch {
                left: architecture.layer_dims(),
                right: params.layer_dims().to_vec(),
            });
        }
        Ok(Self {
            architecture,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn parameters(&self) -> &LayeredVector {
        &self.params
    }

    pub fn n_classes(&self) -> usize {
        self.architecture.n_classes()
    }

    fn check_sample(&self, x: &[f64], y: usize) -> Result<()> {
        if x.len() != self.architecture.d_in() {
            return Err(Error::contract(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.architecture.d_in()
            )));
        }
        if y >= self.n_classes() {
            return Err(Error::contract(format!(
                "label {y} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let widths = self.architecture.widths();
        let act = self.architecture.activation();
        let n_dense = widths.len() - 1;
        let mut acts = vec![x.to_vec()];
        let mut logits = Vec::new();
        for k in 0..n_dense {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let w = self.params.layer(2 * k);
            let b = self.params.layer(2 * k + 1);
            let a = acts.last().expect("input activation");
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    row.iter().zip(a).fold(b[o], |acc, (wi, ai)| acc + wi * ai)
                })
                .collect();
            if k + 1 == n_dense {
                logits = z;
            } else {
                acts.push(z.into_iter().map(|v| act.apply(v)).collect());
            }
        }
        Trace { acts, logits }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).logits
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn sample_loss(&self, x: &[f64], y: usize) -> f64 {
        let z = self.logits(x);
        log_sum_exp(&z) - z[y]
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("loss of an empty batch"));
        }
        let mut total = 0.0;
        for (x, y) in batch.iter() {
            self.check_sample(x, y)?;
            total += self.sample_loss(x, y);
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean loss and accuracy over labelled examples.
    pub fn evaluate<'a>(
        &self,
        examples: impl IntoIterator<Item = (&'a [f64], usize)>,
    ) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut correct = 0usize;
        let mut n = 0usize;
        for (x, y) in examples {
            self.check_sample(x, y)?;
            let z = self.logits(x);
            loss += log_sum_exp(&z) - z[y];
            if argmax(&z) == y {
                correct += 1;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::contract("evaluation over zero examples"));
        }
        Ok((loss / n as f64, correct as f64 / n as f64))
    }

    fn sample_gradient(&self, x: &[f64], y: usize) -> LayeredVector {
        let widths = self.architecture.widths();
        let act = self.architecture.activation();
        let n_dense = widths.len() - 1;
        let trace = self.trace(x);
        let mut grad = self.params.zeros_like();

        // d loss / d logits = softmax - onehot
        let lse = log_sum_exp(&trace.logits);
        let mut delta: Vec<f64> = trace.logits.iter().map(|z| (z - lse).exp()).collect();
        delta[y] -= 1.0;

        for k in (0..n_dense).rev() {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let a_prev = &trace.acts[k];
            {
                let gw = grad.layer_mut(2 * k);
                for o in 0..fan_out {
                    let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, a) in row.iter_mut().zip(a_prev) {
                        *g = delta[o] * a;
                    }
                }
            }
            grad.layer_mut(2 * k + 1).copy_from_slice(&delta);
            if k > 0 {
                let w = self.params.layer(2 * k);
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += wi * delta[o];
                    }
                }
                for (p, a) in prev.iter_mut().zip(a_prev) {
                    *p *= act.derivative(*a);
                }
                delta = prev;
            }
        }
        grad
    }

    /// One gradient per sample, in batch order.
    pub fn per_sample_gradients(&self, batch: &Batch) -> Result<Vec<LayeredVector>> {
        if batch.is_empty() {
            return Err(Error::contract("per-sample gradients of an empty batch"));
        }
        batch
            .iter()
            .map(|(x, y)| {
                self.check_sample(x, y)?;
                Ok(self.sample_gradient(x, y))
            })
            .collect()
    }

    /// Gradient of the mean batch loss.
    pub fn mean_gradient(&self, batch: &Batch) -> Result<LayeredVector> {
        let grads = self.per_sample_gradients(batch)?;
        mean(&grads)
    }

    /// `w − lr·direction`.
    pub fn apply_update(&self, direction: &LayeredVector, lr: f64) -> Result<Self> {
        let params = direction.axpy(-lr, &self.params)?;
        if params.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("update produced non-finite parameters"));
        }
        Ok(Self {
            architecture: self.architecture.clone(),
            params,
        })
    }
}

pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// Coordinate-wise mean, summed in list order.
pub fn mean(vectors: &[LayeredVector]) -> Result<LayeredVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::contract("mean of an empty list"))?;
    let mut acc = first.zeros_like();
    for v in vectors {
        acc.add_assign(v)?;
    }
    Ok(acc.scale(1.0 / vectors.len() as f64))
}

//! Gradient decomposition against a released base direction and
//! reconstruction from the privatized components.
//!
//! Everything is per layer: the base has one unit block per layer and the
//! parallel part of a gradient is an `m`-vector of coefficients, one per
//! layer. A layer whose base block is zero is degenerate: its coefficient
//! is 0 and the whole layer travels in the orthogonal channel.

use crate::error::{Error, Result};
use crate::vector::{dot_slice, LayeredVector};

const DEGENERATE_REL: f64 = 1e-12;

/// Unit-per-layer direction derived from a released (noisy) gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GdrBase {
    b: LayeredVector,
    source_step: u64,
    degenerate: Vec<bool>,
}

impl GdrBase {
    pub fn direction(&self) -> &LayeredVector {
        &self.b
    }

    pub fn source_step(&self) -> u64 {
        self.source_step
    }

    pub fn is_degenerate(&self, layer: usize) -> bool {
        self.degenerate[layer]
    }

    pub fn degenerate_layers(&self) -> Vec<usize> {
        (0..self.degenerate.len()).filter(|&l| self.degenerate[l]).collect()
    }

    pub fn layer_count(&self) -> usize {
        self.degenerate.len()
    }
}

/// Per-layer normalization of a released gradient.
pub fn normalize_base(noisy_grad: &LayeredVector, step: u64) -> GdrBase {
    let threshold = DEGENERATE_REL * f64::max(1.0, noisy_grad.norm());
    let mut b = noisy_grad.clone();
    let mut degenerate = Vec::with_capacity(b.layer_count());
    for l in 0..b.layer_count() {
        let n = noisy_grad.norm_layer(l);
        let block = b.layer_mut(l);
        if n < threshold {
            block.iter_mut().for_each(|x| *x = 0.0);
            degenerate.push(true);
        } else {
            block.iter_mut().for_each(|x| *x /= n);
            degenerate.push(false);
        }
    }
    GdrBase {
        b,
        source_step: step,
        degenerate,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub alphas: Vec<f64>,
    pub g_perp: LayeredVector,
}

/// `α_l = ⟨g_l, b_l⟩`, `g⊥_l = g_l − α_l·b_l`.
pub fn decompose(g: &LayeredVector, base: &GdrBase) -> Result<Decomposition> {
    g.ensure_compatible(&base.b)?;
    let mut g_perp = g.clone();
    let mut alphas = Vec::with_capacity(g.layer_count());
    for l in 0..g.layer_count() {
        if base.degenerate[l] {
            alphas.push(0.0);
            continue;
        }
        let b = base.b.layer(l);
        let alpha = dot_slice(g.layer(l), b);
        for (p, bi) in g_perp.layer_mut(l).iter_mut().zip(b) {
            *p -= alpha * bi;
        }
        alphas.push(alpha);
    }
    Ok(Decomposition { alphas, g_perp })
}

pub fn decompose_batch(per_sample: &[LayeredVector], base: &GdrBase) -> Result<Vec<Decomposition>> {
    per_sample.iter().map(|g| decompose(g, base)).collect()
}

/// `α̃_l·b_l + g̃⊥_l` per layer; degenerate layers pass `g̃⊥_l` through.
pub fn reconstruct(
    alphas: &[f64],
    g_perp: &LayeredVector,
    base: &GdrBase,
) -> Result<LayeredVector> {
    g_perp.ensure_compatible(&base.b)?;
    if alphas.len() != base.layer_count() {
        return Err(Error::ShapeMismatch {
            left: vec![base.layer_count()],
            right: vec![alphas.len()],
        });
    }
    let mut out = g_perp.clone();
    for (l, alpha) in alphas.iter().enumerate() {
        if base.degenerate[l] {
            continue;
        }
        for (o, bi) in out.layer_mut(l).iter_mut().zip(base.b.layer(l)) {
            *o += alpha * bi;
        }
    }
    Ok(out)
}

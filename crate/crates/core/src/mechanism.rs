//! Per-sample clipping and Gaussian perturbation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::vector::{norm_slice, LayeredVector};

/// Clipping bounds for the full gradient, the orthogonal component and the
/// per-layer parallel coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    pub c_g: f64,
    pub c_perp: f64,
    pub c_alpha: f64,
}

impl ClipSpec {
    pub fn new(c_g: f64, c_perp: f64, c_alpha: f64) -> Result<Self> {
        let spec = Self { c_g, c_perp, c_alpha };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c_g", self.c_g), ("c_perp", self.c_perp), ("c_alpha", self.c_alpha)] {
            check_bound(c).map_err(|_| {
                Error::contract(format!("{name} must be positive and finite, got {c}"))
            })?;
        }
        Ok(())
    }
}

/// Noise multipliers. Zero is allowed for non-private ablations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoisePlan {
    pub sigma_g: f64,
    pub sigma_perp: f64,
    pub sigma_alpha: f64,
}

impl NoisePlan {
    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("sigma_g", self.sigma_g),
            ("sigma_perp", self.sigma_perp),
            ("sigma_alpha", self.sigma_alpha),
        ] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::contract(format!(
                    "{name} must be finite and non-negative, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_g == 0.0 && self.sigma_perp == 0.0 && self.sigma_alpha == 0.0
    }
}

fn check_bound(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "clip bound must be positive and finite, got {c}"
        )))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "noise multiplier must be finite and non-negative, got {sigma}"
        )))
    }
}

fn clip_factor(norm: f64, c: f64) -> f64 {
    1.0 / f64::max(1.0, norm / c)
}

/// Scales `v` by `1/max(1, ‖v‖/c)` using the global norm.
///
/// The factor is nudged down by ulps until the rounded result has norm at
/// most `c`, which keeps the bound exact and makes clipping idempotent.
pub fn clip_to_norm(v: &LayeredVector, c: f64) -> Result<LayeredVector> {
    check_bound(c)?;
    let mut f = clip_factor(v.norm(), c);
    if f == 1.0 {
        return Ok(v.clone());
    }
    loop {
        let out = v.scale(f);
        if out.norm() <= c {
            return Ok(out);
        }
        f = f.next_down();
    }
}

/// Joint L2 clip of a per-sample coefficient vector; signs are kept.
pub fn clip_alpha_vec(alphas: &[f64], c: f64) -> Result<Vec<f64>> {
    check_bound(c)?;
    let mut f = clip_factor(norm_slice(alphas), c);
    if f == 1.0 {
        return Ok(alphas.to_vec());
    }
    loop {
        let out: Vec<f64> = alphas.iter().map(|a| a * f).collect();
        if norm_slice(&out) <= c {
            return Ok(out);
        }
        f = f.next_down();
    }
}

/// Sum of clipped per-sample vectors. `per_sample` must be non-empty.
pub(crate) fn clipped_sum(per_sample: &[LayeredVector], c: f64) -> Result<LayeredVector> {
    let first = per_sample
        .first()
        .ok_or_else(|| Error::contract("cannot aggregate an empty list"))?;
    let mut sum = first.zeros_like();
    for g in per_sample {
        sum.add_assign(&clip_to_norm(g, c)?)?;
    }
    Ok(sum)
}

/// `(sum + N(0, σ²c²I)) / denom`.
pub(crate) fn perturb_sum(
    sum: &LayeredVector,
    c: f64,
    sigma: f64,
    stream: &RngStream,
    denom: f64,
) -> Result<LayeredVector> {
    check_sigma(sigma)?;
    let noise = LayeredVector::gaussian(stream, sum.layer_dims(), sigma * c)?;
    Ok(sum.add(&noise)?.scale(1.0 / denom))
}

pub(crate) fn perturb_scalar_sum(
    sum: &[f64],
    c: f64,
    sigma: f64,
    stream: &RngStream,
    denom: f64,
) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    let noise = if sigma > 0.0 {
        stream.gaussians(sum.len(), sigma * c)
    } else {
        vec![0.0; sum.len()]
    };
    Ok(sum.iter().zip(noise).map(|(s, n)| (s + n) / denom).collect())
}

/// Clips each vector to `c`, sums, adds `N(0, σ²c²I)` once and divides by
/// the list length.
pub fn aggregate_and_perturb(
    per_sample: &[LayeredVector],
    c: f64,
    sigma: f64,
    stream: &RngStream,
) -> Result<LayeredVector> {
    check_bound(c)?;
    let sum = clipped_sum(per_sample, c)?;
    perturb_sum(&sum, c, sigma, stream, per_sample.len() as f64)
}

pub(crate) fn clipped_scalar_sum(per_sample: &[Vec<f64>], c: f64) -> Result<Vec<f64>> {
    let m = per_sample
        .first()
        .ok_or_else(|| Error::contract("cannot aggregate an empty list"))?
        .len();
    let mut sum = vec![0.0; m];
    for a in per_sample {
        if a.len() != m {
            return Err(Error::ShapeMismatch {
                left: vec![m],
                right: vec![a.len()],
            });
        }
        for (s, v) in sum.iter_mut().zip(clip_alpha_vec(a, c)?) {
            *s += v;
        }
    }
    Ok(sum)
}

/// Coefficient-vector counterpart of [`aggregate_and_perturb`].
pub fn aggregate_and_perturb_scalars(
    per_sample: &[Vec<f64>],
    c: f64,
    sigma: f64,
    stream: &RngStream,
) -> Result<Vec<f64>> {
    check_bound(c)?;
    let sum = clipped_scalar_sum(per_sample, c)?;
    perturb_scalar_sum(&sum, c, sigma, stream, per_sample.len() as f64)
}

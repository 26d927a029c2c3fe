//! Training loops: plain SGD, DP-SGD, the difference-based DIFF strawman
//! and DPDR (decomposition steps early, DP-SGD afterwards).
//!
//! Each private step releases exactly one gradient and records exactly one
//! ledger event, including steps whose Poisson sample came out empty. An
//! empty step releases pure noise divided by the expected batch size.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accountant::{effective_sigma, PrivacyLedger, ReleaseEvent};
use crate::data::{poisson_sample, Dataset};
use crate::diagnostics::{coherence_stats, median, MetricsRow};
use crate::error::{Error, Result};
use crate::gdr::{decompose_batch, normalize_base, reconstruct, GdrBase};
use crate::mechanism::{
    clipped_scalar_sum, clipped_sum, perturb_scalar_sum, perturb_sum, ClipSpec, NoisePlan,
};
use crate::model::{mean, Architecture, Batch, Model};
use crate::rng::{RngStream, StreamTag};
use crate::vector::{norm_slice, LayeredVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Dpsgd,
    Diff,
    Dpdr,
}

impl Method {
    pub fn is_private(self) -> bool {
        self != Method::Sgd
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Dpsgd => "dpsgd",
            Method::Diff => "diff",
            Method::Dpdr => "dpdr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Method::Sgd),
            "dpsgd" => Ok(Method::Dpsgd),
            "diff" => Ok(Method::Diff),
            "dpdr" => Ok(Method::Dpdr),
            other => Err(Error::Config {
                key: "method".into(),
                message: format!("unknown method {other:?}"),
            }),
        }
    }
}

/// A fully resolved training run. DIFF uses `clip.c_g` and
/// `noise.sigma_g` as its difference bound and multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub total_steps: u64,
    pub switch_step: u64,
    pub expected_batch: usize,
    pub lr: f64,
    pub clip: ClipSpec,
    pub noise: NoisePlan,
    pub seed: u64,
    pub delta: f64,
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let bad = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if self.total_steps == 0 {
            return Err(bad("total_steps", "must be positive".into()));
        }
        if self.method == Method::Dpdr && !(1..=self.total_steps).contains(&self.switch_step) {
            return Err(bad(
                "switch_step",
                format!("must lie in [1, {}], got {}", self.total_steps, self.switch_step),
            ));
        }
        if self.expected_batch == 0 || self.expected_batch > dataset_len {
            return Err(bad(
                "batch",
                format!("must lie in [1, {dataset_len}], got {}", self.expected_batch),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(bad("lr", format!("must be positive, got {}", self.lr)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(bad("privacy.delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        self.clip.validate().map_err(|e| bad("clip", e.to_string()))?;
        self.noise.validate().map_err(|e| bad("noise", e.to_string()))?;
        Ok(())
    }

    pub fn sampling_ratio(&self, dataset_len: usize) -> f64 {
        self.expected_batch as f64 / dataset_len as f64
    }

    /// Whether a step is a decomposition step (DPDR steps 2..=s).
    pub fn is_gdr_step(&self, step: u64) -> bool {
        self.method == Method::Dpdr && step >= 2 && step <= self.switch_step
    }

    /// True when a private method runs with a zero multiplier on a channel
    /// it actually releases; such runs have unbounded ε.
    pub fn is_ablation(&self) -> bool {
        match self.method {
            Method::Sgd => false,
            Method::Dpsgd | Method::Diff => self.noise.sigma_g == 0.0,
            Method::Dpdr => {
                self.noise.sigma_g == 0.0
                    || (self.switch_step >= 2
                        && (self.noise.sigma_perp == 0.0 || self.noise.sigma_alpha == 0.0))
            }
        }
    }

    pub fn phase_steps(&self) -> PhaseSteps {
        match self.method {
            Method::Sgd => PhaseSteps::default(),
            Method::Dpsgd | Method::Diff => PhaseSteps {
                first: 0,
                gdr: 0,
                dpsgd: self.total_steps,
            },
            Method::Dpdr => {
                let gdr = self.switch_step.min(self.total_steps).saturating_sub(1);
                PhaseSteps {
                    first: 1,
                    gdr,
                    dpsgd: self.total_steps - 1 - gdr,
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSteps {
    pub first: u64,
    pub gdr: u64,
    pub dpsgd: u64,
}

/// Per-step inputs shared by every step function.
#[derive(Clone, Debug)]
pub struct StepContext<'a> {
    pub seed: u64,
    pub step: u64,
    pub q: f64,
    pub lr: f64,
    /// Normalizer for an empty Poisson sample.
    pub expected_batch: usize,
    /// Previous released gradient, for difference telemetry.
    pub prev_release: Option<&'a LayeredVector>,
}

impl StepContext<'_> {
    fn stream(&self, tag: StreamTag) -> RngStream {
        RngStream::aggregate(self.seed, self.step, tag)
    }

    fn denom(&self, batch: &Batch) -> f64 {
        if batch.is_empty() {
            self.expected_batch as f64
        } else {
            batch.len() as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTelemetry {
    pub grad_norm_median: Option<f64>,
    pub perp_norm_median: Option<f64>,
    pub diff_norm_median: Option<f64>,
    pub alpha_vec_norm: Option<f64>,
    /// Per-sample `‖g⊥‖` of a decomposition step.
    pub perp_norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub model: Model,
    pub released_gradient: LayeredVector,
    pub telemetry: StepTelemetry,
    /// `None` for non-private steps and zero-noise ablations.
    pub ledger_event: Option<ReleaseEvent>,
}

fn per_sample_or_empty(model: &Model, batch: &Batch) -> Result<Vec<LayeredVector>> {
    if batch.is_empty() {
        Ok(Vec::new())
    } else {
        model.per_sample_gradients(batch)
    }
}

fn norms_median(vs: &[LayeredVector]) -> Option<f64> {
    median(&vs.iter().map(LayeredVector::norm).collect::<Vec<_>>())
}

fn diff_median(grads: &[LayeredVector], prev: Option<&LayeredVector>) -> Result<Option<f64>> {
    let Some(prev) = prev else { return Ok(None) };
    let norms = grads
        .iter()
        .map(|g| Ok(g.sub(prev)?.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(median(&norms))
}

fn event(q: f64, sigma: f64) -> Result<Option<ReleaseEvent>> {
    if sigma > 0.0 {
        Ok(Some(ReleaseEvent::new(q, sigma, 1)?))
    } else {
        Ok(None)
    }
}

/// Non-private step on the batch mean gradient.
pub fn sgd_step(model: &Model, batch: &Batch, ctx: &StepContext<'_>) -> Result<StepOutcome> {
    let grads = per_sample_or_empty(model, batch)?;
    let released = if grads.is_empty() {
        model.parameters().zeros_like()
    } else {
        mean(&grads)?
    };
    Ok(StepOutcome {
        model: model.apply_update(&released, ctx.lr)?,
        telemetry: StepTelemetry {
            grad_norm_median: norms_median(&grads),
            diff_norm_median: diff_median(&grads, ctx.prev_release)?,
            ..Default::default()
        },
        released_gradient: released,
        ledger_event: None,
    })
}

/// Clip to `c_g`, sum, add `N(0, σ_g²c_g²I)`, divide by the batch size.
pub fn dpsgd_step(
    model: &Model,
    batch: &Batch,
    c_g: f64,
    sigma_g: f64,
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    let grads = per_sample_or_empty(model, batch)?;
    let sum = if grads.is_empty() {
        model.parameters().zeros_like()
    } else {
        clipped_sum(&grads, c_g)?
    };
    let released = perturb_sum(&sum, c_g, sigma_g, &ctx.stream(StreamTag::NoiseGrad), ctx.denom(batch))?;
    Ok(StepOutcome {
        model: model.apply_update(&released, ctx.lr)?,
        telemetry: StepTelemetry {
            grad_norm_median: norms_median(&grads),
            diff_norm_median: diff_median(&grads, ctx.prev_release)?,
            ..Default::default()
        },
        released_gradient: released,
        ledger_event: event(ctx.q, sigma_g)?,
    })
}

/// Privatizes `g_i − prev_release` and adds `prev_release` back.
pub fn diff_step(
    model: &Model,
    batch: &Batch,
    prev_release: &LayeredVector,
    c_d: f64,
    sigma_d: f64,
    ctx: &StepContext<'_>,
) -> Result<StepOutcome> {
    prev_release.ensure_compatible(model.parameters())?;
    let grads = per_sample_or_empty(model, batch)?;
    let diffs = grads
        .iter()
        .map(|g| g.sub(prev_release))
        .collect::<Result<Vec<_>>>()?;
    let sum = if diffs.is_empty() {
        prev_release.zeros_like()
    } else {
        clipped_sum(&diffs, c_d)?
    };
    let noisy_diff = perturb_sum(&sum, c_d, sigma_d, &ctx.stream(StreamTag::NoiseGrad), ctx.denom(batch))?;
    let released = noisy_diff.add(prev_release)?;
    Ok(StepOutcome {
        model: model.apply_update(&released, ctx.lr)?,
        telemetry: StepTelemetry {
            grad_norm_median: norms_median(&grads),
            diff_norm_median: norms_median(&diffs),
            ..Default::default()
        },
        released_gradient: released,
        ledger_event: event(ctx.q, sigma_d)?,
    })
}

/// Decomposes per-sample gradients against `base`, privatizes the
/// orthogonal parts and the coefficient vectors separately, reconstructs,
/// updates the model and derives the next base from the release.
pub fn gdr_step(
    model: &Model,
    batch: &Batch,
    base: &GdrBase,
    clip: &ClipSpec,
    noise: &NoisePlan,
    ctx: &StepContext<'_>,
) -> Result<(StepOutcome, GdrBase)> {
    let grads = per_sample_or_empty(model, batch)?;
    let parts = decompose_batch(&grads, base)?;
    let perps: Vec<LayeredVector> = parts.iter().map(|d| d.g_perp.clone()).collect();
    let alphas: Vec<Vec<f64>> = parts.iter().map(|d| d.alphas.clone()).collect();
    let denom = ctx.denom(batch);

    let perp_sum = if perps.is_empty() {
        model.parameters().zeros_like()
    } else {
        clipped_sum(&perps, clip.c_perp)?
    };
    let alpha_sum = if alphas.is_empty() {
        vec![0.0; base.layer_count()]
    } else {
        clipped_scalar_sum(&alphas, clip.c_alpha)?
    };
    let noisy_perp = perturb_sum(
        &perp_sum,
        clip.c_perp,
        noise.sigma_perp,
        &ctx.stream(StreamTag::NoisePerp),
        denom,
    )?;
    let noisy_alpha = perturb_scalar_sum(
        &alpha_sum,
        clip.c_alpha,
        noise.sigma_alpha,
        &ctx.stream(StreamTag::NoiseAlpha),
        denom,
    )?;
    let released = reconstruct(&noisy_alpha, &noisy_perp, base)?;
    let next_base = normalize_base(&released, ctx.step);

    let perp_norms: Vec<f64> = perps.iter().map(LayeredVector::norm).collect();
    let ledger_event = if noise.sigma_perp > 0.0 && noise.sigma_alpha > 0.0 {
        Some(ReleaseEvent::new(
            ctx.q,
            effective_sigma(noise.sigma_perp, noise.sigma_alpha)?,
            1,
        )?)
    } else {
        None
    };
    let outcome = StepOutcome {
        model: model.apply_update(&released, ctx.lr)?,
        telemetry: StepTelemetry {
            grad_norm_median: norms_median(&grads),
            perp_norm_median: median(&perp_norms),
            diff_norm_median: diff_median(&grads, ctx.prev_release)?,
            alpha_vec_norm: Some(norm_slice(&noisy_alpha)),
            perp_norms,
        },
        released_gradient: released,
        ledger_event,
    };
    Ok((outcome, next_base))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall-clock milliseconds. Off by default so that artifacts are
    /// reproducible byte for byte.
    pub record_timing: bool,
    /// Evaluate the per-step training metrics on the first `n` examples
    /// only. `None` uses the whole dataset.
    pub eval_limit: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model,
    pub metrics: Vec<MetricsRow>,
    /// `None` for SGD and zero-noise ablations.
    pub ledger: Option<PrivacyLedger>,
    /// Per-sample `‖g⊥‖` of the last decomposition step.
    pub perp_snapshot: Vec<f64>,
    pub phase_steps: PhaseSteps,
    pub runtime_ms: u64,
}

impl RunResult {
    pub fn final_metrics(&self) -> &MetricsRow {
        self.metrics.last().expect("runs have at least one step")
    }
}

/// Runs any method.
pub fn train(
    config: &TrainConfig,
    architecture: &Architecture,
    dataset: &Dataset,
    options: RunOptions,
) -> Result<RunResult> {
    config.validate(dataset.len())?;
    if architecture.d_in() != dataset.d_in || architecture.n_classes() != dataset.n_classes {
        return Err(Error::Config {
            key: "model".into(),
            message: format!(
                "model expects d_in={} n_classes={}, dataset has d_in={} n_classes={}",
                architecture.d_in(),
                architecture.n_classes(),
                dataset.d_in,
                dataset.n_classes
            ),
        });
    }
    let started = Instant::now();
    let q = config.sampling_ratio(dataset.len());
    let mut model = Model::init(architecture.clone(), config.seed)?;
    let mut ledger = if config.method.is_private() && !config.is_ablation() {
        Some(PrivacyLedger::new(config.delta)?)
    } else {
        None
    };
    let mut prev_release: Option<LayeredVector> = None;
    let mut base: Option<GdrBase> = None;
    let mut perp_snapshot = Vec::new();
    let mut metrics = Vec::with_capacity(config.total_steps as usize);

    for step in 1..=config.total_steps {
        let batch = poisson_sample(
            dataset,
            q,
            &RngStream::aggregate(config.seed, step, StreamTag::Sampling),
        )?;
        let ctx = StepContext {
            seed: config.seed,
            step,
            q,
            lr: config.lr,
            expected_batch: config.expected_batch,
            prev_release: prev_release.as_ref(),
        };
        let outcome = match config.method {
            Method::Sgd => sgd_step(&model, &batch, &ctx)?,
            Method::Dpsgd => dpsgd_step(&model, &batch, config.clip.c_g, config.noise.sigma_g, &ctx)?,
            Method::Diff => {
                let zero;
                let prev = match prev_release.as_ref() {
                    Some(p) => p,
                    None => {
                        zero = model.parameters().zeros_like();
                        &zero
                    }
                };
                diff_step(&model, &batch, prev, config.clip.c_g, config.noise.sigma_g, &ctx)?
            }
            Method::Dpdr if config.is_gdr_step(step) => {
                let current = base.as_ref().expect("base is set by step 1");
                let (outcome, next) =
                    gdr_step(&model, &batch, current, &config.clip, &config.noise, &ctx)?;
                base = Some(next);
                perp_snapshot.clone_from(&outcome.telemetry.perp_norms);
                outcome
            }
            Method::Dpdr => {
                let outcome = dpsgd_step(&model, &batch, config.clip.c_g, config.noise.sigma_g, &ctx)?;
                if step == 1 {
                    base = Some(normalize_base(&outcome.released_gradient, step));
                }
                outcome
            }
        };

        if let (Some(l), Some(ev)) = (ledger.as_mut(), outcome.ledger_event) {
            l.append(ev)?;
        }
        let eps_cum = match (&ledger, config.method.is_private()) {
            (_, false) => 0.0,
            (Some(l), true) => l.to_eps_delta()?.eps,
            (None, true) => f64::INFINITY,
        };
        let cos_prev = match prev_release.as_ref() {
            Some(p) => Some(coherence_stats(p, &outcome.released_gradient)?.cosine),
            None => None,
        };
        let (train_loss, train_accuracy) = outcome
            .model
            .evaluate(dataset.iter().take(options.eval_limit.unwrap_or(usize::MAX)))?;
        metrics.push(MetricsRow {
            step,
            train_loss,
            train_accuracy,
            grad_norm_median: outcome.telemetry.grad_norm_median,
            perp_norm_median: outcome.telemetry.perp_norm_median,
            diff_norm_median: outcome.telemetry.diff_norm_median,
            alpha_vec_norm: outcome.telemetry.alpha_vec_norm,
            cos_prev,
            eps_cum,
            wall_ms: if options.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        });
        model = outcome.model;
        prev_release = Some(outcome.released_gradient);
    }

    Ok(RunResult {
        model,
        metrics,
        ledger,
        perp_snapshot,
        phase_steps: config.phase_steps(),
        runtime_ms: if options.record_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        },
    })
}

/// DPDR: step 1 is DP-SGD and seeds the base, steps `2..=s` decompose,
/// the rest is DP-SGD with the same `(C_g, σ_g)`.
pub fn dpdr_train(
    config: &TrainConfig,
    architecture: &Architecture,
    dataset: &Dataset,
    options: RunOptions,
) -> Result<RunResult> {
    if config.method != Method::Dpdr {
        return Err(Error::Config {
            key: "method".into(),
            message: format!("dpdr_train needs method dpdr, got {}", config.method),
        });
    }
    train(config, architecture, dataset, options)
}

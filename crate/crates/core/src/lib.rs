//! Differentially private training with early gradient decomposition and
//! reconstruction (DPDR), alongside DP-SGD, the difference-based DIFF
//! strawman, and plain SGD.
//!
//! The crate is organised bottom-up:
//!
//! - [`vector`] and [`rng`]: layered parameter vectors and counter-based
//!   Gaussian streams.
//! - [`model`]: logistic regression and MLPs with exact per-sample
//!   gradients.
//! - [`mechanism`]: clipping and Gaussian perturbation.
//! - [`accountant`]: Rényi-DP accounting for Poisson-subsampled Gaussian
//!   releases and noise calibration.
//! - [`gdr`]: per-layer decomposition against the released base direction
//!   and reconstruction.
//! - [`trainer`]: the four training loops.
//! - [`data`], [`diagnostics`]: datasets and gradient-coherence telemetry.
//! - [`experiment`]: JSON run configs, run artifacts, comparisons and plot
//!   data, as driven by the `dpdr` binary.

pub mod accountant;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gdr;
pub mod mechanism;
pub mod model;
pub mod rng;
pub mod trainer;
pub mod vector;

pub use accountant::{
    calibrate_sigma, effective_sigma, rdp_subsampled_gaussian, Calibration, Conversion,
    PrivacyLedger, ReleaseEvent,
};
pub use error::{Error, Result};
pub use gdr::{decompose, normalize_base, reconstruct, Decomposition, GdrBase};
pub use mechanism::{ClipSpec, NoisePlan};
pub use model::{Activation, Architecture, Batch, Model};
pub use rng::{RngStream, StreamTag};
pub use trainer::{Method, RunOptions, TrainConfig};
pub use vector::LayeredVector;

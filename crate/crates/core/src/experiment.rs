//! Experiment plumbing: JSON run configs, noise resolution, run artifacts,
//! multi-seed comparisons and plot-ready data files.
//!
//! A config names a method, a dataset and either an explicit `noise` block
//! or a `privacy` budget that is turned into noise multipliers by the
//! accountant. Relative dataset paths are resolved against the config's
//! directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::accountant::{
    calibrate_sigma, dpdr_schedule, Calibration, Conversion, ScheduleEntry, StepRole,
};
use crate::data::{gen_synthetic, load_idx_pair, Dataset};
use crate::diagnostics::{histogram, metrics_csv, Histogram, MetricsRow};
use crate::error::{Error, Result};
use crate::mechanism::{ClipSpec, NoisePlan};
use crate::model::{Activation, Architecture};
use crate::trainer::{train, Method, PhaseSteps, RunOptions, RunResult, TrainConfig};

/// δ used when a config has no `privacy` block.
pub const DEFAULT_DELTA: f64 = 1e-5;

/// Window of [`steps_to_target_loss`].
pub const TARGET_WINDOW: usize = 5;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_FILE: &str = "perp_snapshot.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    pub eps: f64,
    pub delta: f64,
    pub sigma_alpha: f64,
    #[serde(default = "one")]
    pub ratio_g: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticParams {
    pub n: usize,
    pub d_in: usize,
    pub n_classes: usize,
    pub margin: f64,
    pub seed: u64,
}

/// `idx` expects `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`
/// inside `path`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        params: SyntheticParams,
    },
    Idx {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Cache {
        path: PathBuf,
    },
}

pub const IDX_IMAGES: &str = "train-images-idx3-ubyte";
pub const IDX_LABELS: &str = "train-labels-idx1-ubyte";

impl DatasetSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSpec::Synthetic { params: p } => {
                gen_synthetic(p.n, p.d_in, p.n_classes, p.margin, p.seed)
            }
            DatasetSpec::Idx { path, limit } => {
                load_idx_pair(&path.join(IDX_IMAGES), &path.join(IDX_LABELS), *limit)
            }
            DatasetSpec::Cache { path } => Dataset::read_cache(path),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        match self {
            DatasetSpec::Idx { path, .. } | DatasetSpec::Cache { path } => {
                if path.is_relative() {
                    *path = dir.join(&*path);
                }
            }
            DatasetSpec::Synthetic { .. } => {}
        }
    }
}

/// Model shape without the dataset-given input and output sizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    #[default]
    Logistic,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default)]
        activation: Activation,
    },
}

impl ModelSpec {
    pub fn architecture(&self, d_in: usize, n_classes: usize) -> Architecture {
        match self {
            ModelSpec::Logistic => Architecture::LogisticRegression { d_in, n_classes },
            ModelSpec::Mlp { hidden, activation } => Architecture::Mlp {
                d_in,
                hidden: hidden.clone(),
                n_classes,
                activation: *activation,
            },
        }
    }
}

/// The JSON run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub total_steps: u64,
    pub switch_step: u64,
    pub batch: usize,
    pub lr: f64,
    pub clip: ClipSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoisePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacySpec>,
    pub dataset: DatasetSpec,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
}

impl RunConfig {
    /// Parses a config; failures name the offending key and position.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                key: if key == "." { "<root>".into() } else { key },
                message: inner.to_string(),
            }
        })
    }

    /// Reads a config file and makes dataset paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::Config {
                key,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let dir = if dir.as_os_str().is_empty() {
            std::env::current_dir().map_err(|e| Error::io(".", e))?
        } else {
            dir.canonicalize().map_err(|e| Error::io(dir, e))?
        };
        config.dataset.rebase(&dir);
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// Checks the noise/privacy combination for the method.
    pub fn check(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        match (self.method, &self.noise, &self.privacy) {
            (_, Some(_), Some(_)) => bad("privacy", "give either `noise` or `privacy`, not both"),
            (Method::Sgd, _, Some(_)) => bad("privacy", "sgd is not private"),
            (m, None, None) if m.is_private() => {
                bad("noise", "private methods need a `noise` or `privacy` block")
            }
            _ => Ok(()),
        }
    }

    /// Accounting schedule of this config for a dataset of `n` examples.
    pub fn schedule(&self, n: usize) -> Vec<ScheduleEntry> {
        let q = self.batch as f64 / n as f64;
        match self.method {
            Method::Dpdr => dpdr_schedule(q, self.total_steps, self.switch_step),
            _ => vec![ScheduleEntry {
                q,
                steps: self.total_steps,
                role: StepRole::Dpsgd,
            }],
        }
    }
}

/// A config bound to its dataset, with noise multipliers filled in.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub train: TrainConfig,
    pub architecture: Architecture,
    pub calibration: Option<Calibration>,
    pub dataset: Dataset,
}

fn noise_from(cal: &Calibration, method: Method) -> NoisePlan {
    let dpdr = method == Method::Dpdr && cal.perp_used();
    NoisePlan {
        sigma_g: cal.sigma_g,
        sigma_perp: if dpdr { cal.sigma_perp } else { 0.0 },
        sigma_alpha: if dpdr { cal.sigma_alpha } else { 0.0 },
    }
}

/// Which stage a run failed in; determines the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(Error),
    #[error("{0}")]
    Calibration(Error),
    #[error("dataset: {0}")]
    Dataset(Error),
    #[error("{0}")]
    Run(Error),
    #[error("writing output: {0}")]
    Output(Error),
    #[error("{failed}: {source}\ncompleted runs:\n{completed}")]
    Compare {
        failed: String,
        completed: String,
        #[source]
        source: Box<RunError>,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Calibration(_) => 3,
            RunError::Dataset(_) | RunError::Output(_) => 4,
            RunError::Run(_) => 1,
            RunError::Compare { .. } => 5,
        }
    }
}

fn dataset_error(e: Error) -> RunError {
    match e {
        Error::Contract(_) => RunError::Config(e),
        other => RunError::Dataset(other),
    }
}

/// Loads the dataset, calibrates when a budget is given and validates.
pub fn resolve(config: RunConfig) -> std::result::Result<ResolvedRun, RunError> {
    config.check().map_err(RunError::Config)?;
    let dataset = config.dataset.load().map_err(dataset_error)?;
    resolve_with(config, dataset)
}

/// [`resolve`] with an already loaded dataset.
pub fn resolve_with(
    config: RunConfig,
    dataset: Dataset,
) -> std::result::Result<ResolvedRun, RunError> {
    config.check().map_err(RunError::Config)?;
    let (noise, delta, calibration) = match &config.privacy {
        Some(p) => {
            if config.batch == 0 || config.batch > dataset.len() {
                return Err(RunError::Config(Error::Config {
                    key: "batch".into(),
                    message: format!("must lie in [1, {}], got {}", dataset.len(), config.batch),
                }));
            }
            if config.method == Method::Dpdr
                && !(1..=config.total_steps).contains(&config.switch_step)
            {
                return Err(RunError::Config(Error::Config {
                    key: "switch_step".into(),
                    message: format!(
                        "must lie in [1, {}], got {}",
                        config.total_steps, config.switch_step
                    ),
                }));
            }
            let cal = calibrate_sigma(
                p.eps,
                p.delta,
                &config.schedule(dataset.len()),
                p.sigma_alpha,
                p.ratio_g,
                Conversion::default(),
            )
            .map_err(|e| match e {
                Error::Contract(m) => RunError::Config(Error::Config {
                    key: "privacy".into(),
                    message: m,
                }),
                other => RunError::Calibration(other),
            })?;
            (noise_from(&cal, config.method), p.delta, Some(cal))
        }
        None => (config.noise.unwrap_or_default(), DEFAULT_DELTA, None),
    };
    let train = TrainConfig {
        method: config.method,
        total_steps: config.total_steps,
        switch_step: config.switch_step,
        expected_batch: config.batch,
        lr: config.lr,
        clip: config.clip,
        noise,
        seed: config.seed,
        delta,
    };
    train.validate(dataset.len()).map_err(RunError::Config)?;
    let architecture = config.model.architecture(dataset.d_in, dataset.n_classes);
    Ok(ResolvedRun {
        config,
        train,
        architecture,
        calibration,
        dataset,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResolvedNoise {
    pub sigma_g: f64,
    pub sigma_perp: f64,
    pub sigma_alpha: f64,
    pub sigma_eff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// `eps` and `order` are `null` for non-private runs and zero-noise
/// ablations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrivacySummary {
    pub eps: Option<f64>,
    pub delta: f64,
    pub order: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub resolved_noise: ResolvedNoise,
    #[serde(rename = "final")]
    pub final_metrics: FinalMetrics,
    pub privacy: PrivacySummary,
    pub phase_steps: PhaseSteps,
    pub seed: u64,
    pub runtime_ms: u64,
}

impl Summary {
    pub fn new(run: &ResolvedRun, result: &RunResult) -> Result<Self> {
        let last = result.final_metrics();
        let report = result.ledger.as_ref().map(|l| l.to_eps_delta()).transpose()?;
        let noise = run.train.noise;
        let gdr = run.train.phase_steps().gdr > 0;
        Ok(Self {
            config: run.config.clone(),
            resolved_noise: ResolvedNoise {
                sigma_g: noise.sigma_g,
                sigma_perp: noise.sigma_perp,
                sigma_alpha: noise.sigma_alpha,
                sigma_eff: if gdr && noise.sigma_perp > 0.0 && noise.sigma_alpha > 0.0 {
                    Some(crate::accountant::effective_sigma(noise.sigma_perp, noise.sigma_alpha)?)
                } else {
                    None
                },
            },
            final_metrics: FinalMetrics {
                loss: last.train_loss,
                accuracy: last.train_accuracy,
            },
            privacy: PrivacySummary {
                eps: report.map(|r| r.eps),
                delta: run.train.delta,
                order: report.map(|r| r.order),
            },
            phase_steps: result.phase_steps,
            seed: run.train.seed,
            runtime_ms: result.runtime_ms,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summaries serialize");
        s.push('\n');
        s
    }
}

/// Output of one finished run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub metrics_csv_path: PathBuf,
    pub summary_json_path: PathBuf,
    pub snapshot_path: PathBuf,
    pub summary: Summary,
    pub metrics: Vec<MetricsRow>,
}

/// Writes `contents` next to `path` under a temporary name, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn snapshot_csv(values: &[f64]) -> String {
    let mut out = String::from("perp_norm\n");
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Trains a resolved run and writes its artifacts into `out_dir`.
pub fn execute(
    run: &ResolvedRun,
    out_dir: &Path,
    options: RunOptions,
) -> std::result::Result<RunArtifacts, RunError> {
    let result =
        train(&run.train, &run.architecture, &run.dataset, options).map_err(RunError::Run)?;
    let summary = Summary::new(run, &result).map_err(RunError::Run)?;
    fs::create_dir_all(out_dir).map_err(|e| RunError::Output(Error::io(out_dir, e)))?;
    let artifacts = RunArtifacts {
        metrics_csv_path: out_dir.join(METRICS_FILE),
        summary_json_path: out_dir.join(SUMMARY_FILE),
        snapshot_path: out_dir.join(SNAPSHOT_FILE),
        summary,
        metrics: result.metrics,
    };
    write_atomic(&artifacts.metrics_csv_path, &metrics_csv(&artifacts.metrics))
        .and_then(|_| write_atomic(&artifacts.summary_json_path, &artifacts.summary.to_json()))
        .and_then(|_| write_atomic(&artifacts.snapshot_path, &snapshot_csv(&result.perp_snapshot)))
        .map_err(RunError::Output)?;
    Ok(artifacts)
}

/// First step whose trailing mean loss (over up to [`TARGET_WINDOW`] steps)
/// is below `target`.
pub fn steps_to_target_loss(metrics: &[MetricsRow], target: f64) -> Option<u64> {
    (0..metrics.len()).find_map(|i| {
        let window = &metrics[i.saturating_sub(TARGET_WINDOW - 1)..=i];
        let mean = window.iter().map(|r| r.train_loss).sum::<f64>() / window.len() as f64;
        (mean < target).then_some(metrics[i].step)
    })
}

/// One row of a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub final_accuracy: f64,
    pub final_loss: f64,
    pub steps_to_target_loss: Option<u64>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub target_loss: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,seed,final_accuracy,steps_to_target_loss,eps\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.method,
                r.seed,
                r.final_accuracy,
                r.steps_to_target_loss.map(|s| s.to_string()).unwrap_or_default(),
                r.eps.map(|e| e.to_string()).unwrap_or_default()
            );
        }
        out
    }

    /// Labels in first-appearance order.
    pub fn labels(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.label.as_str()) {
                seen.push(&r.label);
            }
        }
        seen
    }

    pub fn rows_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ComparisonRow> {
        self.rows.iter().filter(move |r| r.label == label)
    }

    /// Mean ± sample std per config. Step counts average the runs that
    /// reached the target.
    pub fn table(&self) -> String {
        let mut out = format!(
            "target loss {:.4}\n{:<24} {:<6} {:>18} {:>18} {:>7} {:>8}\n",
            self.target_loss, "config", "method", "final_accuracy", "steps_to_target", "reached", "eps"
        );
        for label in self.labels() {
            let rows: Vec<_> = self.rows_for(label).collect();
            let (am, asd) = mean_std(&rows.iter().map(|r| r.final_accuracy).collect::<Vec<_>>());
            let steps: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.steps_to_target_loss.map(|s| s as f64))
                .collect();
            let (sm, ssd) = mean_std(&steps);
            let eps: Vec<f64> = rows.iter().filter_map(|r| r.eps).collect();
            let _ = writeln!(
                out,
                "{:<24} {:<6} {:>18} {:>18} {:>7} {:>8}",
                label,
                rows[0].method,
                format!("{am:.4} ± {asd:.4}"),
                format!("{sm:.1} ± {ssd:.1}"),
                format!("{}/{}", steps.len(), rows.len()),
                eps.first().map_or("-".into(), |e| format!("{e:.3}"))
            );
        }
        out
    }
}

fn run_label(path: &Path, index: usize) -> String {
    let stem = path.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
    format!("{index}-{stem}")
}

/// Runs every config over `seeds` seeds (`config.seed + k`). Artifacts go
/// to `out/<index>-<stem>/seed-<seed>/`, the comparison CSV to `out`.
/// Runs execute on scoped threads; rows keep config-then-seed order.
pub fn compare(
    configs: &[(PathBuf, RunConfig)],
    seeds: u64,
    target_loss: Option<f64>,
    out: &Path,
) -> std::result::Result<Comparison, RunError> {
    if seeds == 0 {
        return Err(RunError::Config(Error::Config {
            key: "seeds".into(),
            message: "need at least one seed".into(),
        }));
    }
    let mut jobs = Vec::new();
    for (i, (path, config)) in configs.iter().enumerate() {
        let label = run_label(path, i);
        let base = resolve(config.clone())?;
        for k in 0..seeds {
            let mut run = base.clone();
            run.config.seed = config.seed + k;
            run.train.seed = config.seed + k;
            let dir = out.join(&label).join(format!("seed-{}", run.train.seed));
            jobs.push((label.clone(), run, dir));
        }
    }

    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut results: Vec<Option<std::result::Result<RunArtifacts, RunError>>> =
        (0..jobs.len()).map(|_| None).collect();
    for (chunk_jobs, chunk_results) in jobs.chunks(threads).zip(results.chunks_mut(threads)) {
        std::thread::scope(|s| {
            for ((_, run, dir), slot) in chunk_jobs.iter().zip(chunk_results.iter_mut()) {
                s.spawn(move || *slot = Some(execute(run, dir, RunOptions::default())));
            }
        });
    }

    let mut done = Vec::new();
    for ((label, run, _), res) in jobs.iter().zip(results) {
        match res.expect("every job ran") {
            Ok(a) => done.push((label.clone(), run.train.method, a)),
            Err(e) => {
                let completed = done
                    .iter()
                    .map(|(l, _, a): &(String, Method, RunArtifacts)| {
                        format!("  {l} seed {}", a.summary.seed)
                    })
                    .collect::<Vec<_>>()
                    .join("\n");
                return Err(RunError::Compare {
                    failed: format!("{label} seed {}", run.train.seed),
                    completed,
                    source: Box::new(e),
                });
            }
        }
    }

    let target = target_loss.unwrap_or_else(|| {
        let first = &done[0].0;
        let losses: Vec<f64> = done
            .iter()
            .filter(|(l, _, _)| l == first)
            .map(|(_, _, a)| a.summary.final_metrics.loss)
            .collect();
        mean_std(&losses).0
    });
    let rows = done
        .iter()
        .map(|(label, method, a)| ComparisonRow {
            label: label.clone(),
            method: *method,
            seed: a.summary.seed,
            final_accuracy: a.summary.final_metrics.accuracy,
            final_loss: a.summary.final_metrics.loss,
            steps_to_target_loss: steps_to_target_loss(&a.metrics, target),
            eps: a.summary.privacy.eps,
        })
        .collect();
    let comparison = Comparison {
        rows,
        target_loss: target,
    };
    fs::create_dir_all(out).map_err(|e| RunError::Output(Error::io(out, e)))?;
    write_atomic(&out.join(COMPARISON_FILE), &comparison.to_csv()).map_err(RunError::Output)?;
    Ok(comparison)
}

/// Inputs of a standalone calibration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrateRequest {
    pub eps: f64,
    pub delta: f64,
    pub n: usize,
    pub batch: usize,
    pub steps: u64,
    pub switch: u64,
    pub sigma_alpha: f64,
    pub ratio_g: f64,
    pub conversion: Conversion,
}

/// Calibrates a DPDR schedule; `switch = 1` is plain DP-SGD.
pub fn calibrate(req: &CalibrateRequest) -> std::result::Result<Calibration, RunError> {
    let config_err = |key: &str, message: String| {
        RunError::Config(Error::Config {
            key: key.into(),
            message,
        })
    };
    if req.n == 0 || req.batch == 0 || req.batch > req.n {
        return Err(config_err("batch", format!("need 1 <= batch <= n, got {} and {}", req.batch, req.n)));
    }
    if req.steps == 0 || !(1..=req.steps).contains(&req.switch) {
        return Err(config_err("switch", format!("need 1 <= switch <= steps, got {} and {}", req.switch, req.steps)));
    }
    let q = req.batch as f64 / req.n as f64;
    calibrate_sigma(
        req.eps,
        req.delta,
        &dpdr_schedule(q, req.steps, req.switch),
        req.sigma_alpha,
        req.ratio_g,
        req.conversion,
    )
    .map_err(|e| match e {
        Error::Contract(m) => config_err("calibrate", m),
        other => RunError::Calibration(other),
    })
}

/// JSON view of a calibration; `sigma_perp` is the string `"unused"` when
/// the schedule has no decomposition steps.
pub fn calibration_json(cal: &Calibration) -> Value {
    json!({
        "sigma_perp": if cal.perp_used() { json!(cal.sigma_perp) } else { json!("unused") },
        "sigma_alpha": cal.sigma_alpha,
        "sigma_g": cal.sigma_g,
        "sigma_eff": cal.sigma_eff,
        "eps": cal.eps,
        "order": cal.order,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Norms,
    Convergence,
    HistPerp,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "norms" => Ok(PlotKind::Norms),
            "convergence" => Ok(PlotKind::Convergence),
            "hist-perp" => Ok(PlotKind::HistPerp),
            other => Err(Error::Config {
                key: "kind".into(),
                message: format!("unknown plot kind {other:?}"),
            }),
        }
    }
}

/// Parsed metrics CSV: header plus raw cells.
#[derive(Clone, Debug)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Config {
                key: "metrics".into(),
                message: "empty metrics file".into(),
            })?
            .split(',')
            .map(str::to_owned)
            .collect();
        let rows = lines
            .map(|l| l.split(',').map(str::to_owned).collect::<Vec<_>>())
            .collect::<Vec<_>>();
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            return Err(Error::Config {
                key: "metrics".into(),
                message: format!("row has {} cells, header has {}", r.len(), header.len()),
            });
        }
        Ok(Self { header, rows })
    }

    /// Values of a column; empty cells become NaN.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config {
                key: name.into(),
                message: "missing column".into(),
            })?;
        self.rows
            .iter()
            .map(|r| {
                let cell = &r[i];
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>().map_err(|e| Error::Config {
                        key: name.into(),
                        message: format!("bad value {cell:?}: {e}"),
                    })
                }
            })
            .collect()
    }
}

fn columns_text(names: &[&str], cols: &[Vec<f64>]) -> String {
    let mut out = format!("# {}\n", names.join(" "));
    for i in 0..cols.first().map_or(0, Vec::len) {
        let line: Vec<String> = cols.iter().map(|c| c[i].to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn histogram_text(h: &Histogram) -> String {
    let mut out = String::from("# bin_lower_edge count\n");
    for b in &h.bins {
        let _ = writeln!(out, "{} {}", b.edge, b.count);
    }
    out
}

/// Reads a snapshot written by [`execute`].
pub fn read_snapshot(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MetricsTable::parse(&text)?.column("perp_norm")
}

/// Builds whitespace-separated plot data from a metrics CSV. `hist-perp`
/// reads the snapshot file next to the metrics.
pub fn plot_data(
    metrics_path: &Path,
    kind: PlotKind,
    bins: usize,
) -> std::result::Result<String, RunError> {
    let text = fs::read_to_string(metrics_path)
        .map_err(|e| RunError::Dataset(Error::io(metrics_path, e)))?;
    let table = MetricsTable::parse(&text).map_err(RunError::Config)?;
    let pick = |names: &[&str]| -> std::result::Result<Vec<Vec<f64>>, RunError> {
        names
            .iter()
            .map(|n| table.column(n).map_err(RunError::Config))
            .collect()
    };
    match kind {
        PlotKind::Norms => {
            let names = ["step", "grad_norm_median", "perp_norm_median", "diff_norm_median"];
            Ok(columns_text(&names, &pick(&names)?))
        }
        PlotKind::Convergence => {
            let names = ["eps_cum", "train_accuracy"];
            Ok(columns_text(&names, &pick(&names)?))
        }
        PlotKind::HistPerp => {
            let snap = metrics_path.with_file_name(SNAPSHOT_FILE);
            let values = read_snapshot(&snap).map_err(|e| match e {
                Error::Io { .. } => RunError::Dataset(e),
                other => RunError::Config(other),
            })?;
            let h = histogram(&values, bins).map_err(|e| {
                RunError::Config(Error::Config {
                    key: "perp_snapshot".into(),
                    message: e.to_string(),
                })
            })?;
            Ok(histogram_text(&h))
        }
    }
}

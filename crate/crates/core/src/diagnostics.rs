//! Gradient-coherence telemetry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gdr::{decompose, GdrBase};
use crate::vector::LayeredVector;

pub const METRICS_HEADER: &str = "step,train_loss,train_accuracy,grad_norm_median,perp_norm_median,diff_norm_median,alpha_vec_norm,cos_prev,eps_cum,wall_ms";

/// One row of per-step telemetry. `None` fields are not applicable to the
/// step (no samples, no decomposition, no previous release).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub grad_norm_median: Option<f64>,
    pub perp_norm_median: Option<f64>,
    pub diff_norm_median: Option<f64>,
    pub alpha_vec_norm: Option<f64>,
    pub cos_prev: Option<f64>,
    pub eps_cum: f64,
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.train_loss,
            self.train_accuracy,
            opt(self.grad_norm_median),
            opt(self.perp_norm_median),
            opt(self.diff_norm_median),
            opt(self.alpha_vec_norm),
            opt(self.cos_prev),
            self.eps_cum,
            self.wall_ms
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Median of a list; `None` when empty. NaNs are not expected.
pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile.
pub fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coherence {
    pub cosine: f64,
    /// `‖curr − prev‖ / ‖curr‖`.
    pub norm_ratio: f64,
    /// Set when either vector is zero; the cosine is then reported as 0.
    pub degenerate: bool,
}

pub fn coherence_stats(prev: &LayeredVector, curr: &LayeredVector) -> Result<Coherence> {
    let dot = prev.dot(curr)?;
    let (np, nc) = (prev.norm(), curr.norm());
    let degenerate = np == 0.0 || nc == 0.0;
    let cosine = if degenerate {
        0.0
    } else {
        (dot / (np * nc)).clamp(-1.0, 1.0)
    };
    let diff = curr.sub(prev)?.norm();
    let norm_ratio = if nc == 0.0 { f64::INFINITY } else { diff / nc };
    Ok(Coherence {
        cosine,
        norm_ratio,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(values: &[f64]) -> Self {
        Self {
            q25: quantile(values, 0.25).unwrap_or(0.0),
            median: quantile(values, 0.5).unwrap_or(0.0),
            q75: quantile(values, 0.75).unwrap_or(0.0),
            max: values.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Raw per-batch sensitivity quantities for offline smoothness estimates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRecord {
    pub grad_norm: Quantiles,
    pub perp_norm: Quantiles,
    /// Median `|α_l|` per layer.
    pub alpha_abs_median: Vec<f64>,
    /// Median per-sample `‖g⊥‖ / ‖g‖` (zero-gradient samples skipped).
    pub perp_ratio_median: f64,
    pub w_step_norm: f64,
    /// Per-sample `‖g⊥‖`, in batch order.
    pub perp_norms: Vec<f64>,
}

pub fn sensitivity_probe(
    per_sample: &[LayeredVector],
    base: &GdrBase,
    w_step_norm: f64,
) -> Result<SensitivityRecord> {
    if per_sample.is_empty() {
        return Err(Error::contract("sensitivity probe needs at least one sample"));
    }
    let mut grad_norms = Vec::with_capacity(per_sample.len());
    let mut perp_norms = Vec::with_capacity(per_sample.len());
    let mut ratios = Vec::new();
    let m = base.layer_count();
    let mut alpha_abs: Vec<Vec<f64>> = vec![Vec::with_capacity(per_sample.len()); m];
    for g in per_sample {
        let d = decompose(g, base)?;
        let (gn, pn) = (g.norm(), d.g_perp.norm());
        grad_norms.push(gn);
        perp_norms.push(pn);
        if gn > 0.0 {
            ratios.push(pn / gn);
        }
        for (acc, a) in alpha_abs.iter_mut().zip(&d.alphas) {
            acc.push(a.abs());
        }
    }
    Ok(SensitivityRecord {
        grad_norm: Quantiles::of(&grad_norms),
        perp_norm: Quantiles::of(&perp_norms),
        alpha_abs_median: alpha_abs.iter().map(|v| median(v).unwrap_or(0.0)).collect(),
        perp_ratio_median: median(&ratios).unwrap_or(0.0),
        w_step_norm,
        perp_norms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bin {
    /// Lower edge.
    pub edge: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub width: f64,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Quantile read off the histogram's piecewise-linear CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let total = self.total() as f64;
        let target = p.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        for b in &self.bins {
            let next = acc + b.count as f64;
            if next >= target && b.count > 0 {
                return b.edge + self.width * (target - acc) / b.count as f64;
            }
            acc = next;
        }
        self.bins.last().map_or(0.0, |b| b.edge + self.width)
    }
}

/// Equal-width bins over `[min, max]`; the top value lands in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::contract("histogram of an empty list"));
    }
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram {
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| Bin {
                edge: lo + i as f64 * width,
                count,
            })
            .collect(),
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gdr::normalize_base;
    use crate::rng::{RngStream, StreamTag};

    fn lv(layers: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_layers(layers.iter().map(|l| l.to_vec()).collect()).unwrap()
    }

    #[test]
    fn coherence_cases() {
        let a = lv(&[&[1.0, 2.0]]);
        let c = coherence_stats(&a, &a).unwrap();
        assert!((c.cosine - 1.0).abs() < 1e-15);
        assert_eq!(c.norm_ratio, 0.0);

        let c = coherence_stats(&lv(&[&[3.0, 0.0]]), &lv(&[&[0.0, 3.0]])).unwrap();
        assert_eq!(c.cosine, 0.0);
        assert!((c.norm_ratio - 2f64.sqrt()).abs() < 1e-15);

        let c = coherence_stats(&a.scale(-1.0), &a).unwrap();
        assert!((c.cosine + 1.0).abs() < 1e-15);
        assert_eq!(c.norm_ratio, 2.0);

        let c = coherence_stats(&a.zeros_like(), &a).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.cosine, 0.0);
    }

    #[test]
    fn probe_parallel_and_degenerate() {
        let base = normalize_base(&lv(&[&[1.0, 1.0], &[2.0]]), 1);
        let parallel = vec![lv(&[&[2.0, 2.0], &[-1.0]]), lv(&[&[-0.5, -0.5], &[3.0]])];
        let r = sensitivity_probe(&parallel, &base, 0.1).unwrap();
        assert!(r.perp_norm.max < 1e-15);
        assert_eq!(r.w_step_norm, 0.1);

        let dead = normalize_base(&lv(&[&[0.0, 0.0], &[0.0]]), 1);
        let r = sensitivity_probe(&parallel, &dead, 0.0).unwrap();
        for (p, g) in r.perp_norms.iter().zip(&parallel) {
            assert_eq!(*p, g.norm());
        }
        assert!(sensitivity_probe(&[], &dead, 0.0).is_err());
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[2.0, 2.0, 2.0], 5).unwrap();
        assert_eq!(h.bins.iter().filter(|b| b.count > 0).count(), 1);
        let h = histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2]);
        assert!(histogram(&[], 3).is_err());
        assert!(histogram(&[1.0], 0).is_err());
    }

    #[test]
    fn histogram_quantiles_match_normal() {
        let draws = RngStream::aggregate(1, 0, StreamTag::Test).gaussians(10_000, 1.0);
        let h = histogram(&draws, 20).unwrap();
        assert_eq!(h.total(), 10_000);
        // Φ⁻¹(0.75) = 0.6744897501960817
        let analytic_iqr = 2.0 * 0.674_489_750_196_081_7;
        let iqr = h.quantile(0.75) - h.quantile(0.25);
        assert!((iqr - analytic_iqr).abs() / analytic_iqr < 0.05, "iqr {iqr}");
    }

    #[test]
    fn median_and_quantile() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[1.0, 2.0, 3.0, 4.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), Some(2.5));
    }

    #[test]
    fn csv_line_leaves_missing_fields_empty() {
        let row = MetricsRow {
            step: 1,
            train_loss: 0.5,
            train_accuracy: 1.0,
            grad_norm_median: Some(2.0),
            perp_norm_median: None,
            diff_norm_median: None,
            alpha_vec_norm: None,
            cos_prev: None,
            eps_cum: 0.25,
            wall_ms: 0,
        };
        assert_eq!(row.to_csv_line(), "1,0.5,1,2,,,,,0.25,0");
    }
}

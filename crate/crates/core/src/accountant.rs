//! Rényi-DP accounting for Poisson-subsampled Gaussian releases.
//!
//! Per-step RDP at integer order λ uses the binomial expansion
//! `log Σ_k C(λ,k) (1−q)^{λ−k} q^k exp(k(k−1)/(2σ²)) / (λ−1)`, evaluated
//! in log space. Composition adds RDP curves. Conversion to (ε, δ)
//! minimizes over the integer orders 2..=256.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_ORDER: u32 = 2;
pub const MAX_ORDER: u32 = 256;

/// `steps` identical subsampled-Gaussian releases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseEvent {
    pub q: f64,
    pub sigma_eff: f64,
    pub steps: u64,
}

impl ReleaseEvent {
    pub fn new(q: f64, sigma_eff: f64, steps: u64) -> Result<Self> {
        let ev = Self { q, sigma_eff, steps };
        ev.validate()?;
        Ok(ev)
    }

    fn validate(&self) -> Result<()> {
        check_q(self.q)?;
        check_sigma(self.sigma_eff)?;
        if self.steps == 0 {
            return Err(Error::contract("release event needs at least one step"));
        }
        Ok(())
    }
}

/// RDP → (ε, δ) conversion rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conversion {
    /// `ε = R(λ) + log(1/δ)/(λ−1)`.
    Classic,
    /// `ε = R(λ) + log((λ−1)/λ) − (log δ + log λ)/(λ−1)`; never larger
    /// than the classic value.
    #[default]
    Improved,
}

impl Conversion {
    fn epsilon(self, rdp: f64, order: u32, delta: f64) -> f64 {
        let l = order as f64;
        match self {
            Conversion::Classic => rdp + (1.0 / delta).ln() / (l - 1.0),
            Conversion::Improved => {
                rdp + ((l - 1.0) / l).ln() - (delta.ln() + l.ln()) / (l - 1.0)
            }
        }
    }
}

fn check_q(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(Error::contract(format!("sampling ratio must lie in [0, 1], got {q}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && !sigma.is_nan() {
        Ok(())
    } else {
        Err(Error::contract(format!("noise multiplier must be positive, got {sigma}")))
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Per-step RDP of the Poisson-subsampled Gaussian mechanism at integer
/// order `order`. Infinite `sigma` yields zero.
pub fn rdp_subsampled_gaussian(q: f64, sigma: f64, order: u32) -> Result<f64> {
    check_q(q)?;
    check_sigma(sigma)?;
    if order < 2 {
        return Err(Error::contract(format!("Rényi order must be ≥ 2, got {order}")));
    }
    Ok(rdp_unchecked(q, sigma, order))
}

fn rdp_unchecked(q: f64, sigma: f64, order: u32) -> f64 {
    if q == 0.0 || sigma.is_infinite() {
        return 0.0;
    }
    let l = order as f64;
    if q == 1.0 {
        return l / (2.0 * sigma * sigma);
    }
    let log_q = q.ln();
    let log_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut log_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for k in 0..=order {
        if k > 0 {
            log_binom += ((order - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        let term = log_binom + (l - kf) * log_1mq + kf * log_q + kf * (kf - 1.0) * inv_two_var;
        acc = log_add(acc, term);
    }
    (acc / (l - 1.0)).max(0.0)
}

/// Per-step RDP at every grid order.
pub fn rdp_curve(q: f64, sigma: f64) -> Result<Vec<f64>> {
    check_q(q)?;
    check_sigma(sigma)?;
    Ok((MIN_ORDER..=MAX_ORDER)
        .map(|l| rdp_unchecked(q, sigma, l))
        .collect())
}

/// Noise multiplier of one Gaussian release equivalent to releasing two
/// unit-sensitivity blocks with multipliers `sigma_perp` and `sigma_alpha`.
pub fn effective_sigma(sigma_perp: f64, sigma_alpha: f64) -> Result<f64> {
    check_sigma(sigma_perp)?;
    check_sigma(sigma_alpha)?;
    Ok(1.0 / (1.0 / (sigma_perp * sigma_perp) + 1.0 / (sigma_alpha * sigma_alpha)).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyLedger {
    events: Vec<ReleaseEvent>,
    delta: f64,
    conversion: Conversion,
    rdp: Vec<f64>,
    // last (q, σ) curve, reused when consecutive events share parameters
    cache: Option<(u64, u64, Vec<f64>)>,
}

/// ε together with the order that attains it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub eps: f64,
    pub order: u32,
}

impl PrivacyLedger {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_conversion(delta, Conversion::default())
    }

    pub fn with_conversion(delta: f64, conversion: Conversion) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::contract(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self {
            events: Vec::new(),
            delta,
            conversion,
            rdp: vec![0.0; (MAX_ORDER - MIN_ORDER + 1) as usize],
            cache: None,
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn conversion(&self) -> Conversion {
        self.conversion
    }

    pub fn events(&self) -> &[ReleaseEvent] {
        &self.events
    }

    pub fn orders() -> impl Iterator<Item = u32> {
        MIN_ORDER..=MAX_ORDER
    }

    /// Accumulated RDP per grid order.
    pub fn rdp(&self) -> &[f64] {
        &self.rdp
    }

    pub fn append(&mut self, event: ReleaseEvent) -> Result<()> {
        event.validate()?;
        let key = (event.q.to_bits(), event.sigma_eff.to_bits());
        let hit = matches!(&self.cache, Some((a, b, _)) if (*a, *b) == key);
        if !hit {
            self.cache = Some((key.0, key.1, rdp_curve(event.q, event.sigma_eff)?));
        }
        let curve = &self.cache.as_ref().expect("cache filled above").2;
        let steps = event.steps as f64;
        for (acc, r) in self.rdp.iter_mut().zip(curve) {
            *acc += steps * r;
        }
        self.events.push(event);
        Ok(())
    }

    /// Consuming form of [`append`](Self::append).
    pub fn with_event(mut self, event: ReleaseEvent) -> Result<Self> {
        self.append(event)?;
        Ok(self)
    }

    pub fn to_eps_delta(&self) -> Result<EpsilonReport> {
        if self.events.is_empty() {
            return Err(Error::contract("epsilon of an empty privacy ledger"));
        }
        Ok(best_epsilon(&self.rdp, self.delta, self.conversion))
    }
}

fn best_epsilon(rdp: &[f64], delta: f64, conversion: Conversion) -> EpsilonReport {
    let mut best = EpsilonReport {
        eps: f64::INFINITY,
        order: MIN_ORDER,
    };
    for (order, r) in (MIN_ORDER..=MAX_ORDER).zip(rdp) {
        let eps = conversion.epsilon(*r, order, delta).max(0.0);
        if eps < best.eps {
            best = EpsilonReport { eps, order };
        }
    }
    best
}

/// Which noise multiplier a block of steps is charged at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepRole {
    /// The opening full-gradient step of DPDR.
    First,
    /// A decomposition step, charged at `effective_sigma(σ⊥, σ_α)`.
    Gdr,
    Dpsgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub q: f64,
    pub steps: u64,
    pub role: StepRole,
}

/// The phase schedule of a DPDR run: one opening step, `switch_step − 1`
/// decomposition steps, then DP-SGD up to `total_steps`.
pub fn dpdr_schedule(q: f64, total_steps: u64, switch_step: u64) -> Vec<ScheduleEntry> {
    let mut schedule = vec![ScheduleEntry {
        q,
        steps: 1,
        role: StepRole::First,
    }];
    let gdr = switch_step.saturating_sub(1).min(total_steps.saturating_sub(1));
    if gdr > 0 {
        schedule.push(ScheduleEntry {
            q,
            steps: gdr,
            role: StepRole::Gdr,
        });
    }
    let rest = total_steps.saturating_sub(1 + gdr);
    if rest > 0 {
        schedule.push(ScheduleEntry {
            q,
            steps: rest,
            role: StepRole::Dpsgd,
        });
    }
    schedule
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma_perp: f64,
    pub sigma_g: f64,
    pub sigma_alpha: f64,
    /// `None` when the schedule has no decomposition steps.
    pub sigma_eff: Option<f64>,
    pub eps: f64,
    pub order: u32,
}

impl Calibration {
    pub fn perp_used(&self) -> bool {
        self.sigma_eff.is_some()
    }
}

const CALIBRATION_TOLERANCE: f64 = 1e-3;
const MAX_BISECTIONS: usize = 200;

fn schedule_rdp(
    schedule: &[ScheduleEntry],
    sigma_perp: f64,
    sigma_g: f64,
    sigma_alpha: f64,
) -> Result<Vec<f64>> {
    let mut total = vec![0.0; (MAX_ORDER - MIN_ORDER + 1) as usize];
    for entry in schedule {
        let sigma = match entry.role {
            StepRole::Gdr => {
                if sigma_perp.is_infinite() {
                    sigma_alpha
                } else {
                    effective_sigma(sigma_perp, sigma_alpha)?
                }
            }
            StepRole::First | StepRole::Dpsgd => sigma_g,
        };
        let curve = rdp_curve(entry.q, sigma)?;
        for (acc, r) in total.iter_mut().zip(curve) {
            *acc += entry.steps as f64 * r;
        }
    }
    Ok(total)
}

/// Finds `σ⊥ = s`, `σ_g = ratio_g·s` so the schedule spends `eps_target`
/// within a relative tolerance of 1e-3.
pub fn calibrate_sigma(
    eps_target: f64,
    delta: f64,
    schedule: &[ScheduleEntry],
    sigma_alpha: f64,
    ratio_g: f64,
    conversion: Conversion,
) -> Result<Calibration> {
    if !(eps_target > 0.0 && eps_target.is_finite()) {
        return Err(Error::contract(format!("target epsilon must be positive, got {eps_target}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::contract(format!("delta must lie in (0, 1), got {delta}")));
    }
    if schedule.is_empty() {
        return Err(Error::contract("calibration needs a non-empty schedule"));
    }
    check_sigma(sigma_alpha)?;
    check_sigma(ratio_g)?;
    for e in schedule {
        check_q(e.q)?;
        if e.steps == 0 {
            return Err(Error::contract("schedule entries need at least one step"));
        }
    }
    let has_gdr = schedule.iter().any(|e| e.role == StepRole::Gdr);

    let eps_at = |scale: f64| -> Result<EpsilonReport> {
        let rdp = schedule_rdp(schedule, scale, ratio_g * scale, sigma_alpha)?;
        Ok(best_epsilon(&rdp, delta, conversion))
    };

    if has_gdr {
        let floor = eps_at(f64::INFINITY)?;
        if floor.eps >= eps_target {
            return Err(Error::Infeasible {
                target: eps_target,
                lower_bound: floor.eps,
            });
        }
    }

    let within = |r: &EpsilonReport| (r.eps - eps_target).abs() <= CALIBRATION_TOLERANCE * eps_target;
    let finish = |scale: f64, r: EpsilonReport| -> Result<Calibration> {
        Ok(Calibration {
            sigma_perp: scale,
            sigma_g: ratio_g * scale,
            sigma_alpha,
            sigma_eff: if has_gdr {
                Some(effective_sigma(scale, sigma_alpha)?)
            } else {
                None
            },
            eps: r.eps,
            order: r.order,
        })
    };

    // bracket: eps(lo) > target > eps(hi), bisect in log-scale
    let mut iterations = 0;
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    let r = eps_at(1.0)?;
    if within(&r) {
        return finish(1.0, r);
    }
    if r.eps > eps_target {
        loop {
            hi *= 2.0;
            iterations += 1;
            let r = eps_at(hi)?;
            if within(&r) {
                return finish(hi, r);
            }
            if r.eps < eps_target {
                break;
            }
            if iterations >= MAX_BISECTIONS {
                return Err(Error::NonConvergence { iterations });
            }
        }
        lo = hi / 2.0;
    } else {
        loop {
            lo /= 2.0;
            iterations += 1;
            let r = eps_at(lo)?;
            if within(&r) {
                return finish(lo, r);
            }
            if r.eps > eps_target {
                break;
            }
            if iterations >= MAX_BISECTIONS {
                return Err(Error::NonConvergence { iterations });
            }
        }
        hi = lo * 2.0;
    }
    while iterations < MAX_BISECTIONS {
        iterations += 1;
        let mid = (lo * hi).sqrt();
        let r = eps_at(mid)?;
        if within(&r) {
            return finish(mid, r);
        }
        if r.eps > eps_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence { iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rdp_trivial_values() {
        assert_eq!(rdp_subsampled_gaussian(0.0, 0.7, 5).unwrap(), 0.0);
        assert_eq!(rdp_subsampled_gaussian(1.0, 1.0, 4).unwrap(), 2.0);
        assert!(rdp_subsampled_gaussian(1.5, 1.0, 4).is_err());
        assert!(rdp_subsampled_gaussian(0.5, 0.0, 4).is_err());
        assert!(rdp_subsampled_gaussian(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn rdp_small_q_matches_three_term_sum() {
        // (1−q)² + 2q(1−q) + q²·e at σ=1, λ=2
        let q: f64 = 0.01;
        let oracle = ((1.0 - q).powi(2) + 2.0 * q * (1.0 - q) + q * q * 1f64.exp()).ln();
        let got = rdp_subsampled_gaussian(q, 1.0, 2).unwrap();
        assert!((got - 1.7177e-4).abs() < 1e-7);
        assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
    }

    #[test]
    fn effective_sigma_cases() {
        assert!((effective_sigma(1.0, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((effective_sigma(0.9, 1e9).unwrap() - 0.9).abs() < 1e-6);
        assert!((effective_sigma(0.84, 3.0).unwrap() - 0.8089).abs() < 5e-5);
        assert_eq!(effective_sigma(2.0, 2.0).unwrap(), 2.0 / 2f64.sqrt());
        assert!(effective_sigma(0.0, 1.0).is_err());
        assert!(effective_sigma(1.0, -2.0).is_err());
    }

    #[test]
    fn classic_gaussian_single_release() {
        let ledger = PrivacyLedger::with_conversion(1e-5, Conversion::Classic)
            .unwrap()
            .with_event(ReleaseEvent::new(1.0, 1.0, 1).unwrap())
            .unwrap();
        let r = ledger.to_eps_delta().unwrap();
        // scan of λ/2 + ln(1e5)/(λ−1)
        let oracle = (2..=256u32)
            .map(|l| l as f64 / 2.0 + 1e5f64.ln() / (l as f64 - 1.0))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.order, 6);
        assert!((r.eps - oracle).abs() < 1e-12);
        assert!((r.eps - 5.3026).abs() < 1e-4);
    }

    #[test]
    fn improved_never_exceeds_classic() {
        let ev = ReleaseEvent::new(0.02, 0.9, 500).unwrap();
        let c = PrivacyLedger::with_conversion(1e-5, Conversion::Classic)
            .unwrap()
            .with_event(ev)
            .unwrap();
        let i = PrivacyLedger::new(1e-5).unwrap().with_event(ev).unwrap();
        assert!(i.to_eps_delta().unwrap().eps <= c.to_eps_delta().unwrap().eps);
    }

    #[test]
    fn empty_ledger_is_an_error() {
        assert!(PrivacyLedger::new(1e-5).unwrap().to_eps_delta().is_err());
        assert!(PrivacyLedger::new(0.0).is_err());
        assert!(PrivacyLedger::new(1.0).is_err());
    }

    #[test]
    fn composition_is_additive() {
        let ev = ReleaseEvent::new(0.05, 1.1, 1).unwrap();
        let mut many = PrivacyLedger::new(1e-5).unwrap();
        for _ in 0..100 {
            many.append(ev).unwrap();
        }
        let one = PrivacyLedger::new(1e-5)
            .unwrap()
            .with_event(ReleaseEvent { steps: 100, ..ev })
            .unwrap();
        let a = many.to_eps_delta().unwrap().eps;
        let b = one.to_eps_delta().unwrap().eps;
        assert!((a - b).abs() <= 1e-12 * b);

        let two = PrivacyLedger::new(1e-5)
            .unwrap()
            .with_event(ReleaseEvent { steps: 7, ..ev })
            .unwrap()
            .with_event(ReleaseEvent { steps: 7, ..ev })
            .unwrap();
        let doubled = PrivacyLedger::new(1e-5)
            .unwrap()
            .with_event(ReleaseEvent { steps: 14, ..ev })
            .unwrap();
        assert!((two.to_eps_delta().unwrap().eps - doubled.to_eps_delta().unwrap().eps).abs() < 1e-12);
    }

    #[test]
    fn append_order_does_not_matter() {
        let a = ReleaseEvent::new(0.05, 1.1, 3).unwrap();
        let b = ReleaseEvent::new(0.01, 0.7, 9).unwrap();
        let ab = PrivacyLedger::new(1e-5).unwrap().with_event(a).unwrap().with_event(b).unwrap();
        let ba = PrivacyLedger::new(1e-5).unwrap().with_event(b).unwrap().with_event(a).unwrap();
        let (x, y) = (ab.to_eps_delta().unwrap(), ba.to_eps_delta().unwrap());
        assert!((x.eps - y.eps).abs() <= 1e-12 * x.eps);
    }

    #[test]
    fn zero_q_event_leaves_epsilon_unchanged() {
        let base = PrivacyLedger::new(1e-5)
            .unwrap()
            .with_event(ReleaseEvent::new(0.1, 1.0, 10).unwrap())
            .unwrap();
        let before = base.to_eps_delta().unwrap().eps;
        let after = base
            .with_event(ReleaseEvent::new(0.0, 1.0, 50).unwrap())
            .unwrap()
            .to_eps_delta()
            .unwrap()
            .eps;
        assert_eq!(before, after);
    }

    #[test]
    fn schedule_bookkeeping() {
        let s = dpdr_schedule(0.1, 3, 2);
        assert_eq!(s.iter().map(|e| (e.role, e.steps)).collect::<Vec<_>>(), vec![
            (StepRole::First, 1),
            (StepRole::Gdr, 1),
            (StepRole::Dpsgd, 1)
        ]);
        let s1 = dpdr_schedule(0.1, 10, 1);
        assert_eq!(s1.len(), 2);
        assert!(s1.iter().all(|e| e.role != StepRole::Gdr));
        let st = dpdr_schedule(0.1, 10, 10);
        assert_eq!(st.iter().map(|e| (e.role, e.steps)).collect::<Vec<_>>(), vec![
            (StepRole::First, 1),
            (StepRole::Gdr, 9)
        ]);
    }

    #[test]
    fn calibration_round_trip_classic() {
        let schedule = [ScheduleEntry {
            q: 1.0,
            steps: 1,
            role: StepRole::Dpsgd,
        }];
        let c = calibrate_sigma(5.3026, 1e-5, &schedule, 1.0, 1.0, Conversion::Classic).unwrap();
        assert!((c.sigma_g - 1.0).abs() < 2e-3, "sigma_g {}", c.sigma_g);
        assert!(!c.perp_used());
    }

    #[test]
    fn calibration_infeasible_when_alpha_alone_exceeds_budget() {
        let schedule = dpdr_schedule(0.1, 100, 100);
        let err = calibrate_sigma(0.5, 1e-5, &schedule, 0.3, 1.0, Conversion::Improved).unwrap_err();
        match err {
            Error::Infeasible { lower_bound, .. } => assert!(lower_bound >= 0.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibration_rejects_bad_inputs() {
        let s = dpdr_schedule(0.1, 10, 5);
        assert!(calibrate_sigma(0.0, 1e-5, &s, 2.0, 1.0, Conversion::Improved).is_err());
        assert!(calibrate_sigma(1.0, 1e-5, &[], 2.0, 1.0, Conversion::Improved).is_err());
        assert!(calibrate_sigma(1.0, 1e-5, &s, 0.0, 1.0, Conversion::Improved).is_err());
    }
}

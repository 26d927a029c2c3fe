//! RDP accounting for a DPDR schedule and noise calibration to a target ε.

use dpdr::accountant::dpdr_schedule;
use dpdr::{calibrate_sigma, effective_sigma, Conversion, PrivacyLedger, ReleaseEvent};

fn main() -> dpdr::Result<()> {
    let (n, batch, steps, switch) = (60_000usize, 256usize, 4_700u64, 50u64);
    let q = batch as f64 / n as f64;

    let sigma_eff = effective_sigma(1.0, 2.0)?;
    let mut ledger = PrivacyLedger::new(1e-5)?;
    ledger.append(ReleaseEvent::new(q, 1.0, 1)?)?;
    ledger.append(ReleaseEvent::new(q, sigma_eff, switch - 1)?)?;
    ledger.append(ReleaseEvent::new(q, 1.0, steps - switch)?)?;
    let report = ledger.to_eps_delta()?;
    println!("σ⊥ = σ_g = 1, σ_α = 2 (σ_eff {sigma_eff:.4}): ε = {:.4} at order {}", report.eps, report.order);

    let classic = PrivacyLedger::with_conversion(1e-5, Conversion::Classic)?;
    let classic = ledger.events().iter().try_fold(classic, |l, e| l.with_event(*e))?;
    println!("classic conversion: ε = {:.4}", classic.to_eps_delta()?.eps);

    let schedule = dpdr_schedule(q, steps, switch);
    for eps in [1.0, 3.0, 8.0] {
        let cal = calibrate_sigma(eps, 1e-5, &schedule, 2.0, 1.0, Conversion::default())?;
        println!(
            "target ε {eps}: σ⊥ = σ_g = {:.4}, σ_eff = {:.4}, spent {:.4}",
            cal.sigma_perp,
            cal.sigma_eff.unwrap_or(f64::NAN),
            cal.eps
        );
    }
    Ok(())
}

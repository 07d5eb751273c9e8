//! Random fragmented variations of a minimizer never lower the action, and
//! the change is quadratic in tau with the predicted coefficient.

use causal_lab::action::calibrate_nu;
use causal_lab::fixtures::compact_ring;
use causal_lab::variations::{stability_probe, ProbeConfig};

fn main() -> causal_lab::Result<()> {
    let (spec, rho) = compact_ring()?;
    let nu = calibrate_nu(&rho, &spec.lagrangian);
    let report = stability_probe(&rho, &spec.lagrangian, nu, &ProbeConfig::default())?;
    println!("S = {}, trials = {}", report.action, report.fits.len());
    println!(
        "min action change {:.3e}, max fit error {:.3e}",
        report.min_delta, report.max_fit_error
    );
    for f in report.fits.iter().take(5) {
        println!(
            "trial {:>2}: L={} predicted {:.6} fitted {:.6}",
            f.trial, f.fragments, f.predicted, f.fitted
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        report.write_csv(std::fs::File::create(&path)?)?;
        println!("rows written to {path}");
    }
    Ok(())
}

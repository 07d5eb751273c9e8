//! Compare the jet-space second variation with a Richardson-extrapolated
//! finite difference of the action along push-forward curves.

use causal_lab::action::calibrate_nu;
use causal_lab::fixtures::compact_ring;
use causal_lab::jets::JetField;
use causal_lab::variations::{
    first_variation_fd, second_variation_analytic, second_variation_fd, VariationCurve,
};

fn main() -> causal_lab::Result<()> {
    let (spec, rho) = compact_ring()?;
    let l = &spec.lagrangian;
    let nu = calibrate_nu(&rho, l);
    println!(
        "{:>4} {:>14} {:>14} {:>10} {:>10}",
        "seed", "analytic", "fd", "rel err", "first var"
    );
    for seed in 0..10 {
        let curve = VariationCurve::volume_preserving(
            rho.clone(),
            JetField::random(rho.len(), 1, 1.0, seed),
        )?;
        let analytic = second_variation_analytic(&rho, l, nu, curve.jet())?;
        let fd = second_variation_fd(l, &curve, 1e-3)?;
        let first = first_variation_fd(l, &curve, 1e-3)?;
        println!(
            "{seed:>4} {analytic:>14.9} {fd:>14.9} {:>10.2e} {first:>10.2e}",
            (analytic - fd).abs() / fd.abs()
        );
    }
    Ok(())
}

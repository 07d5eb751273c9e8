//! Solve the linearized field equations at the compact ring and evaluate the
//! surface layer integral of each solution over all arcs.

use causal_lab::action::calibrate_nu;
use causal_lab::fixtures::compact_ring;
use causal_lab::jets::JetField;
use causal_lab::linfield::{
    assemble_linfield, linfield_residual, osi_report, solve_linfield, OmegaFamily, OsiTolerances,
};

fn main() -> causal_lab::Result<()> {
    let (spec, rho) = compact_ring()?;
    let l = &spec.lagrangian;
    let nu = calibrate_nu(&rho, l);
    let op = assemble_linfield(&rho, l, nu);
    let kernel = solve_linfield(&op, 1e-10)?;
    println!(
        "operator {0}x{0}, kernel dimension {1}",
        op.matrix().nrows(),
        kernel.len()
    );
    let shift = JetField::translation(rho.len(), 1, 0);
    println!(
        "translation residual {:.2e}",
        linfield_residual(&op, &shift)?
    );

    for v in kernel
        .iter()
        .chain([&JetField::random(rho.len(), 1, 1.0, 5)])
    {
        let r = osi_report(&rho, l, nu, v, &OmegaFamily::Arcs, OsiTolerances::default())?;
        println!(
            "{} arcs: min {:.4} on {:?}, solves equations: {}, verdict {:?}",
            r.entries.len(),
            r.min_value,
            r.argmin.clone().unwrap_or_default(),
            r.hypothesis_met,
            r.verdict()
        );
    }
    Ok(())
}

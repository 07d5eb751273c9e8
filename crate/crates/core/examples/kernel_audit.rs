//! Finite-difference audit of the analytic kernel derivatives for each family.

use causal_lab::lagrangian::{verify_lagrangian, SampleRegion};
use causal_lab::{ChartManifold, LagrangianModel};

fn main() -> causal_lab::Result<()> {
    let torus = ChartManifold::torus(vec![6.0, 6.0])?;
    for l in [
        LagrangianModel::Gaussian { width: 1.0 },
        LagrangianModel::InversePower {
            width: 1.0,
            exponent: 2.5,
        },
        LagrangianModel::CompactSupportPower {
            radius: 1.5,
            power: 4,
        },
    ] {
        let c = verify_lagrangian(&l, &torus, 200, 1e-4, 1, SampleRegion::Uniform)?;
        println!(
            "{l:?}: grad {:.1e}, hess11 {:.1e}, hess12 {:.1e}, symmetry {:.0e} ({})",
            c.grad1_rel_error,
            c.hess11_rel_error,
            c.hess12_rel_error,
            c.max_symmetry_defect,
            c.smoothness
        );
    }
    Ok(())
}

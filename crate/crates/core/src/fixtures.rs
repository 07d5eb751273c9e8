//! Reference configurations used by the examples, the tests and the bundled
//! config files.

use std::f64::consts::TAU;

use crate::error::Result;
use crate::lagrangian::{LagrangianModel, ModelSpec};
use crate::manifold::ChartManifold;
use crate::measure::DiscreteMeasure;

/// Eight equal atoms on a ring of period 6 with the cubic compact-support
/// kernel of radius 1. Neighbours sit at distance 0.75, inside the cutoff, and
/// `l` is non-negative everywhere: a genuine minimizer.
pub fn compact_ring() -> Result<(ModelSpec, DiscreteMeasure)> {
    let rho = DiscreteMeasure::equispaced_ring(6.0, 8, 8.0)?;
    let spec = ModelSpec {
        manifold: rho.manifold().clone(),
        lagrangian: LagrangianModel::CompactSupportPower {
            radius: 1.0,
            power: 3,
        },
    };
    Ok((spec, rho))
}

/// Five equal atoms on a ring of period `2 pi` with the unit gaussian. Weakly
/// stationary, but `l` has a local maximum at each atom.
pub fn gaussian_ring() -> Result<(ModelSpec, DiscreteMeasure)> {
    let rho = DiscreteMeasure::equispaced_ring(TAU, 5, 5.0)?;
    let spec = ModelSpec {
        manifold: rho.manifold().clone(),
        lagrangian: LagrangianModel::Gaussian { width: 1.0 },
    };
    Ok((spec, rho))
}

/// Random start for the gaussian ring problem.
pub fn gaussian_ring_start(seed: u64) -> Result<DiscreteMeasure> {
    DiscreteMeasure::random(ChartManifold::torus(vec![TAU])?, 5, 5.0, 1.0, seed)
}

/// One atom of weight 2 on the line with the unit gaussian.
pub fn single_point_gaussian() -> Result<(ModelSpec, DiscreteMeasure)> {
    let manifold = ChartManifold::euclidean(1)?;
    let rho = DiscreteMeasure::single(manifold.clone(), vec![0.0], 2.0)?;
    Ok((
        ModelSpec {
            manifold,
            lagrangian: LagrangianModel::Gaussian { width: 1.0 },
        },
        rho,
    ))
}

//! Minimize the gaussian action for five atoms on a circle from random starts
//! and show that the optimizer lands on the equispaced ring.

use causal_lab::action::el_report;
use causal_lab::fixtures::gaussian_ring_start;
use causal_lab::optimizer::{minimize, OptimizerConfig};
use causal_lab::LagrangianModel;

fn main() -> causal_lab::Result<()> {
    let lagrangian = LagrangianModel::Gaussian { width: 1.0 };
    let config = OptimizerConfig::default();
    for seed in 0..5 {
        let start = gaussian_ring_start(seed)?;
        let out = minimize(&start, &lagrangian, &config)?;
        let mut angles: Vec<f64> = out.measure.points().iter().map(|p| p[0]).collect();
        angles.sort_by(f64::total_cmp);
        let mut gaps: Vec<f64> = angles.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.push(std::f64::consts::TAU - angles[4] + angles[0]);
        let el = el_report(&out.measure, &lagrangian, None, None);
        println!(
            "seed {seed}: {} iterations, weak residual {:.2e}, nu {:.6}",
            out.iterations, el.weak_residual, el.nu
        );
        println!("  gaps    {:.6?}", gaps);
        println!("  weights {:.6?}", out.measure.weights());
    }
    Ok(())
}

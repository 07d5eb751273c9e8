//! The action change of a perturbation, three ways: direct subtraction, the
//! signed-difference split, and the cancellation-free pairwise form.

use causal_lab::action::{action, action_change, action_difference};
use causal_lab::{ChartManifold, DiscreteMeasure, LagrangianModel};

fn main() -> causal_lab::Result<()> {
    let l = LagrangianModel::InversePower {
        width: 1.0,
        exponent: 2.0,
    };
    let rho = DiscreteMeasure::random(ChartManifold::euclidean(2)?, 6, 6.0, 2.0, 4)?;
    for eps in [1e-1, 1e-4, 1e-8] {
        let steps: Vec<Vec<f64>> = (0..6).map(|i| vec![eps * (i as f64 - 2.5), eps]).collect();
        let weights: Vec<f64> = rho
            .weights()
            .iter()
            .enumerate()
            .map(|(i, w)| w * (1.0 + eps * (i % 2) as f64))
            .collect();
        let moved = DiscreteMeasure::new(
            rho.manifold().clone(),
            rho.points()
                .iter()
                .zip(&steps)
                .map(|(p, s)| vec![p[0] + s[0], p[1] + s[1]])
                .collect(),
            weights.clone(),
        )?;
        println!(
            "eps {eps:.0e}: direct {:+.12e}  split {:+.12e}  pairwise {:+.12e}",
            action(&moved, &l) - action(&rho, &l),
            action_difference(&rho, &moved, &l)?,
            action_change(&rho, &l, &steps, &weights)?
        );
    }
    Ok(())
}

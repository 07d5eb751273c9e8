//! Fragmented second variations: the substitution identity, optimal
//! fragment weights, and the lower bound they attain.

use causal_lab::action::calibrate_nu;
use causal_lab::fixtures::compact_ring;
use causal_lab::jets::JetField;
use causal_lab::variations::{
    frag_lower_bound, frag_second_variation, frag_transformed, optimal_weight_field,
    optimal_weights, FragmentationScheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> causal_lab::Result<()> {
    let (c, lambda) = optimal_weights(&[1.0, 4.0])?;
    println!("optimal_weights([1, 4]) = {c:?}, lambda = {lambda}");

    let (spec, rho) = compact_ring()?;
    let l = &spec.lagrangian;
    let nu = calibrate_nu(&rho, l);
    let n = rho.len();
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let scheme = FragmentationScheme::random(&rho, 3, 1.0, &mut rng)?;
    let pre = frag_second_variation(&rho, l, nu, &scheme)?;
    let rescaled: Vec<JetField> = (0..3)
        .map(|a| JetField {
            jets: (0..n)
                .map(|i| scheme.jets()[a].jets[i].scaled(scheme.weights()[i][a]))
                .collect(),
        })
        .collect();
    let post = frag_transformed(&rho, l, nu, scheme.weights(), &rescaled)?;
    println!("pre-substitution {pre:.12}, transformed {post:.12}");

    // minimize the transformed form over weights for fixed jets
    let jets: Vec<JetField> = (0..3)
        .map(|s| JetField::random(n, 1, 1.0, 10 + s))
        .collect();
    let bound = frag_lower_bound(&rho, l, nu, &jets, 1e-8, 1.0)?;
    let best = optimal_weight_field(&rho, l, nu, &jets, 1e-8, 1.0)?;
    println!(
        "lower bound {bound:.10}, at optimal weights {:.10}",
        frag_transformed(&rho, l, nu, &best, &jets)?
    );
    let mut lowest = f64::INFINITY;
    for _ in 0..50 {
        let weights: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|r| r / s).collect()
            })
            .collect();
        lowest = lowest.min(frag_transformed(&rho, l, nu, &weights, &jets)?);
    }
    println!("lowest over 50 random weight fields {lowest:.10}");
    Ok(())
}

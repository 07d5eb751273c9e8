//! A single gaussian atom is stationary but not a minimizer: Q1 is negative
//! and splitting the atom in two lowers the action.

use causal_lab::action::{action, calibrate_nu, el_report};
use causal_lab::fixtures::{gaussian_ring, single_point_gaussian};
use causal_lab::jets::{gram_spectrum, Basis, FormId, Jet, JetField};
use causal_lab::variations::{fragment_deform, FragmentationScheme};

fn main() -> causal_lab::Result<()> {
    let (spec, rho) = single_point_gaussian()?;
    let l = &spec.lagrangian;
    let nu = calibrate_nu(&rho, l);
    println!(
        "weak residual {}",
        el_report(&rho, l, None, None).weak_residual
    );
    let q1 = gram_spectrum(&rho, l, nu, FormId::Q1, Basis::Full, 1e-8)?;
    println!("Q1 min eigenvalue {} (psd {})", q1.min_eigenvalue, q1.psd);

    let split = FragmentationScheme::uniform(vec![
        JetField {
            jets: vec![Jet::vector(vec![1.0])],
        },
        JetField {
            jets: vec![Jet::vector(vec![-1.0])],
        },
    ])?;
    for tau in [0.1, 0.3, 0.5] {
        let moved = fragment_deform(&split, &rho, tau)?;
        println!(
            "split tau={tau}: S {} -> {:.6}",
            action(&rho, l),
            action(&moved, l)
        );
    }

    // the gaussian ring is stationary too, and l dips below zero between atoms
    let (spec, ring) = gaussian_ring()?;
    let nu = calibrate_nu(&ring, &spec.lagrangian);
    let q1 = gram_spectrum(&ring, &spec.lagrangian, nu, FormId::Q1, Basis::Full, 1e-8)?;
    let between =
        causal_lab::action::ell(&ring, &spec.lagrangian, nu, &[std::f64::consts::PI / 5.0]);
    println!(
        "gaussian ring: Q1 min eigenvalue {:.4}, l midway between atoms {:.4}",
        q1.min_eigenvalue, between
    );
    Ok(())
}

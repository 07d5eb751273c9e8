use causal_lab::action::{calibrate_nu, el_report, ell_hessian};
use causal_lab::fixtures::{compact_ring, gaussian_ring_start};
use causal_lab::jets::{
    kernel_part, nabla2_ell_form, nabla_ell, q1, sp1_inner, sp2_inner, FormId, FormMatrices, Jet,
    JetField,
};
use causal_lab::optimizer::{minimize, OptimizerConfig};
use causal_lab::variations::{
    first_variation_fd, frag_action_change, frag_lower_bound, frag_second_variation,
    frag_second_variation_fd, frag_transformed, optimal_weight_field, second_variation_analytic,
    second_variation_fd, FragmentationScheme, VariationCurve,
};
use causal_lab::{DiscreteMeasure, LagrangianModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn compact() -> (LagrangianModel, DiscreteMeasure, f64) {
    let (spec, rho) = compact_ring().unwrap();
    let nu = calibrate_nu(&rho, &spec.lagrangian);
    (spec.lagrangian, rho, nu)
}

fn gaussian_minimized() -> (LagrangianModel, DiscreteMeasure, f64) {
    let l = LagrangianModel::Gaussian { width: 1.0 };
    let rho = minimize(
        &gaussian_ring_start(1).unwrap(),
        &l,
        &OptimizerConfig::default(),
    )
    .unwrap()
    .measure;
    let nu = calibrate_nu(&rho, &l);
    (l, rho, nu)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

#[test]
fn nabla_ell_is_bounded_by_weak_residual() {
    for (l, rho, nu) in [compact(), gaussian_minimized()] {
        let res = el_report(&rho, &l, Some(nu), None).weak_residual;
        for seed in 0..5 {
            let jf = JetField::random(rho.len(), 1, 2.0, seed);
            for (i, jet) in jf.jets.iter().enumerate() {
                let v = nabla_ell(&rho, &l, nu, i, jet).unwrap();
                assert!(v.abs() <= res * jet.l1_norm() + 1e-15, "{v} vs {res}");
            }
        }
    }
}

#[test]
fn second_derivative_of_ell_reduces_to_hessian() {
    let (l, rho, nu) = gaussian_minimized();
    let res = el_report(&rho, &l, Some(nu), None).weak_residual;
    let jf = JetField::random(rho.len(), 1, 1.0, 3);
    let jg = JetField::random(rho.len(), 1, 1.0, 4);
    for i in 0..rho.len() {
        let (a, b) = (&jf.jets[i], &jg.jets[i]);
        let full = nabla2_ell_form(&rho, &l, nu, i, a, b).unwrap();
        let h = ell_hessian(&rho, &l, &rho.points()[i]);
        let pure = a.u[0] * h[(0, 0)] * b.u[0];
        assert!((full - pure).abs() <= 4.0 * res * a.l1_norm() * b.l1_norm());
    }
}

#[test]
fn forms_at_the_compact_minimizer() {
    let (l, rho, nu) = compact();
    let scale =
        causal_lab::jets::max_abs_entry(&FormMatrices::assemble(&rho, &l, nu).form(FormId::SP2));
    for seed in 0..10 {
        let u = JetField::random(rho.len(), 1, 1.0, seed);
        assert!(q1(&rho, &l, nu, &u, &u).unwrap() >= -1e-8 * scale);
        assert!(
            sp2_inner(&rho, &l, nu, &u, &u).unwrap() >= sp1_inner(&rho, &l, nu, &u, &u).unwrap()
        );
        let s = u.scalar_part();
        let sp1 = sp1_inner(&rho, &l, nu, &s, &s).unwrap();
        assert!((sp1 - sp2_inner(&rho, &l, nu, &s, &s).unwrap()).abs() <= 1e-12 * scale);
        // a_i a_j w_i w_j L(x_i, x_j)
        assert!((sp1 - kernel_part(&rho, &l, &s, &s).unwrap()).abs() <= 1e-12 * scale);
    }
}

#[test]
fn first_variation_vanishes_along_volume_preserving_curves() {
    let (l, rho, _) = compact();
    for seed in 0..10 {
        let curve = VariationCurve::volume_preserving(
            rho.clone(),
            JetField::random(rho.len(), 1, 1.0, seed),
        )
        .unwrap();
        assert!(first_variation_fd(&l, &curve, 1e-5).unwrap().abs() <= 1e-6);
    }
}

#[test]
fn richardson_value_is_stable_under_halving() {
    let (l, rho, nu) = gaussian_minimized();
    for seed in 0..5 {
        let curve = VariationCurve::volume_preserving(
            rho.clone(),
            JetField::random(rho.len(), 1, 1.0, seed),
        )
        .unwrap();
        let a = second_variation_fd(&l, &curve, 1e-2).unwrap();
        let b = second_variation_fd(&l, &curve, 5e-3).unwrap();
        assert!(rel(a, b) <= 1e-7, "{a} {b}");
        let analytic = second_variation_analytic(&rho, &l, nu, curve.jet()).unwrap();
        assert!(rel(analytic, b) <= 1e-5);
    }
}

#[test]
fn fragmented_formula_matches_fd_at_minimizer() {
    let (l, rho, nu) = compact();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let scheme = FragmentationScheme::random(&rho, 3, 1.0, &mut rng).unwrap();
        assert!(scheme.volume_defect(&rho).abs() < 1e-13);
        let analytic = frag_second_variation(&rho, &l, nu, &scheme).unwrap();
        let fd = frag_second_variation_fd(&l, &rho, &scheme, 1e-3).unwrap();
        assert!(rel(analytic, fd) <= 1e-5, "{analytic} vs {fd}");
    }
}

#[test]
fn single_fragment_lower_bound_and_weights() {
    let (l, rho, nu) = compact();
    let jets: Vec<JetField> = (0..2)
        .map(|s| JetField::random(rho.len(), 1, 1.0, 40 + s))
        .collect();
    let bound = frag_lower_bound(&rho, &l, nu, &jets, 1e-8, 1.0).unwrap();
    let c = optimal_weight_field(&rho, &l, nu, &jets, 1e-8, 1.0).unwrap();
    assert!(rel(frag_transformed(&rho, &l, nu, &c, &jets).unwrap(), bound) <= 1e-10);
    for row in &c {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn splitting_the_compact_ring_raises_the_action() {
    let (l, rho, _) = compact();
    let n = rho.len();
    let split = FragmentationScheme::uniform(vec![
        JetField {
            jets: vec![Jet::vector(vec![1.0]); n],
        },
        JetField {
            jets: vec![Jet::vector(vec![-1.0]); n],
        },
    ])
    .unwrap();
    for tau in [0.005, 0.02, 0.1] {
        assert!(frag_action_change(&l, &rho, &split, tau).unwrap() > 0.0);
    }
}

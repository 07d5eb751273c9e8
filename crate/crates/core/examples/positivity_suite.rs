//! Gram spectra of the three jet-space forms at the compact-support ring, a
//! genuine minimizer.

use causal_lab::action::{calibrate_nu, el_report, OffSupportSampler};
use causal_lab::fixtures::compact_ring;
use causal_lab::jets::{
    gram_spectrum, min_eigenvalue_excluding, translation_jets, Basis, FormId, FormMatrices,
};

fn main() -> causal_lab::Result<()> {
    let (spec, rho) = compact_ring()?;
    let l = &spec.lagrangian;
    let nu = calibrate_nu(&rho, l);
    let el = el_report(&rho, l, None, Some(&OffSupportSampler::new(4000, 1)));
    println!(
        "nu = {nu}, weak residual {:.1e}, min l off support {:.2e}",
        el.weak_residual,
        el.off_support_min.unwrap()
    );

    for (form, basis) in [
        (FormId::Q1, Basis::Full),
        (FormId::SP1, Basis::Full),
        (FormId::SP2, Basis::Full),
        (FormId::SP1, Basis::ScalarOnly),
    ] {
        let r = gram_spectrum(&rho, l, nu, form, basis, 1e-8)?;
        println!(
            "{form:?}/{basis:?}: min eigenvalue {:+.3e} (scale {:.3}) psd={} near-null={}",
            r.min_eigenvalue,
            r.scale,
            r.psd,
            r.near_null.len()
        );
    }

    let sp1 = FormMatrices::assemble(&rho, l, nu).form(FormId::SP1);
    println!(
        "SP1 min eigenvalue off translations: {:.4}",
        min_eigenvalue_excluding(&sp1, &translation_jets(&rho))?
    );
    Ok(())
}

//! Pipeline stages behind the `causal-lab` command.
//!
//! Every stage starts from the config's initial measure, runs the optimizer
//! and then the requested audits. Results go to `state.json` plus per-stage
//! CSV files in the output directory.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::action::{calibrate_nu, el_report};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::jets::{
    gram_spectrum, min_eigenvalue_excluding, translation_jets, Basis, FormId, FormMatrices,
    GramReport, JetField,
};
use crate::lagrangian::LagrangianModel;
use crate::linfield::{
    assemble_linfield, linfield_residual, osi_report, solve_linfield, span_residual, OmegaFamily,
};
use crate::measure::DiscreteMeasure;
use crate::optimizer::minimize;
use crate::state::{
    save_state, LinfieldSummary, OptimizerSummary, OracleSummary, PositivitySummary, ProbeSummary,
    Provenance, RunState, Verdict, SCHEMA_VERSION,
};
use crate::variations::{
    second_variation_analytic, second_variation_fd, stability_probe, VariationCurve,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Minimize,
    Report,
    Spectrum,
    Fragment,
    Linfield,
    Osi,
    VerifyAll,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Minimize => "minimize",
            Stage::Report => "report",
            Stage::Spectrum => "spectrum",
            Stage::Fragment => "fragment",
            Stage::Linfield => "linfield",
            Stage::Osi => "osi",
            Stage::VerifyAll => "verify-all",
        }
    }

    fn includes(&self, other: Stage) -> bool {
        *self == other || *self == Stage::VerifyAll
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides every seed in the config.
    pub seed: Option<u64>,
    /// Omit wall-clock data so that reruns produce identical files.
    pub deterministic: bool,
    pub quiet: bool,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED_VERDICT: i32 = 2;

/// Loads the config, runs the stage and maps the outcome to an exit code.
pub fn run(stage: Stage, config_path: &Path, out_dir: &Path, options: &RunOptions) -> i32 {
    let outcome = ExperimentConfig::load(config_path)
        .and_then(|config| execute(stage, config, out_dir, options));
    match outcome {
        Ok(state) => {
            if !options.quiet {
                for v in &state.verdicts {
                    eprintln!(
                        "{} {}: {}",
                        if v.pass { "PASS" } else { "FAIL" },
                        v.name,
                        v.detail
                    );
                }
            }
            if state.passed() {
                EXIT_OK
            } else {
                EXIT_FAILED_VERDICT
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn csv_file(out_dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out_dir.join(name))?))
}

fn verdict(name: &str, pass: bool, detail: String) -> Verdict {
    Verdict {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Runs a stage and writes its files; returns the state that was saved.
pub fn execute(
    stage: Stage,
    config: ExperimentConfig,
    out_dir: &Path,
    options: &RunOptions,
) -> Result<RunState> {
    let config = match options.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    };
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let lagrangian = config.model.lagrangian.clone();
    let tol = config.tolerances;

    let start = config.initial.build(&config.model.manifold)?;
    let min = minimize(&start, &lagrangian, &config.optimizer)?;
    min.trace.write_csv(csv_file(out_dir, "trace.csv")?)?;
    let rho = min.measure.clone();
    let nu = calibrate_nu(&rho, &lagrangian);

    let mut state = RunState {
        provenance: Provenance {
            schema_version: SCHEMA_VERSION,
            config_hash: config.hash()?,
            seed: config.seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            stage: stage.name().to_string(),
            deterministic: options.deterministic,
            created_unix: (!options.deterministic).then(|| {
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs())
            }),
        },
        config: config.clone(),
        measure: rho.clone(),
        nu,
        optimizer: Some(OptimizerSummary {
            iterations: min.iterations,
            converged: min.converged,
            weak_residual: min.weak_residual,
            floored_points: min.floored_points.clone(),
        }),
        el: None,
        gram: Vec::new(),
        positivity: None,
        oracle: None,
        probe: None,
        linfield: None,
        osi: Vec::new(),
        verdicts: vec![verdict(
            "weak_el",
            min.weak_residual <= tol.tol_weak_el,
            format!(
                "weak residual {:e} (tolerance {:e})",
                min.weak_residual, tol.tol_weak_el
            ),
        )],
    };

    if stage.includes(Stage::Report) {
        let el = el_report(&rho, &lagrangian, None, Some(&config.off_support));
        el.write_csv(csv_file(out_dir, "el.csv")?)?;
        let off = el.off_support_min.unwrap_or(0.0);
        state.verdicts.push(verdict(
            "off_support_nonnegative",
            off >= -tol.tol_weak_el,
            format!(
                "min l over {} samples = {off:e}",
                config.off_support.samples
            ),
        ));
        state.el = Some(el);
    }

    if stage.includes(Stage::Spectrum) {
        spectrum_stage(&mut state, &rho, &lagrangian, nu, &config, out_dir)?;
    }
    if stage.includes(Stage::Fragment) {
        fragment_stage(&mut state, &rho, &lagrangian, nu, &config, out_dir)?;
    }
    if stage.includes(Stage::Linfield) || stage.includes(Stage::Osi) {
        linfield_stage(&mut state, &rho, &lagrangian, nu, &config, out_dir)?;
    }
    if stage.includes(Stage::Osi) {
        osi_stage(&mut state, &rho, &lagrangian, nu, &config, out_dir)?;
    }

    save_state(&state, &out_dir.join("state.json"))?;
    Ok(state)
}

fn spectrum_stage(
    state: &mut RunState,
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<()> {
    let tau = config.tolerances.tau_psd;
    let reports: Vec<(GramReport, &str)> = vec![
        (
            gram_spectrum(rho, lagrangian, nu, FormId::Q1, Basis::Full, tau)?,
            "q1",
        ),
        (
            gram_spectrum(rho, lagrangian, nu, FormId::SP1, Basis::Full, tau)?,
            "sp1",
        ),
        (
            gram_spectrum(rho, lagrangian, nu, FormId::SP2, Basis::Full, tau)?,
            "sp2",
        ),
        (
            gram_spectrum(rho, lagrangian, nu, FormId::SP1, Basis::ScalarOnly, tau)?,
            "sp1_scalar",
        ),
    ];
    for (r, tag) in &reports {
        r.write_spectrum_csv(csv_file(out_dir, &format!("spectrum_{tag}.csv"))?)?;
        r.write_matrix_csv(csv_file(out_dir, &format!("gram_{tag}.csv"))?)?;
        if *tag != "sp2" {
            state.verdicts.push(verdict(
                &format!("{tag}_psd"),
                r.psd,
                format!("min eigenvalue {:e}, scale {:e}", r.min_eigenvalue, r.scale),
            ));
        }
    }
    state.gram = reports.into_iter().map(|(r, _)| r).collect();
    Ok(())
}

/// SP1 positivity modulo translations, the probe's hypothesis.
pub fn positivity_modulo_translations(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    tau_psd: f64,
) -> Result<PositivitySummary> {
    let sp1 = FormMatrices::assemble(rho, lagrangian, nu).form(FormId::SP1);
    let scale = crate::jets::max_abs_entry(&sp1);
    let min = min_eigenvalue_excluding(&sp1, &translation_jets(rho))?;
    Ok(PositivitySummary {
        sp1_min_modulo_translations: min,
        sp1_scale: scale,
        strictly_positive_modulo_translations: min > tau_psd * scale,
    })
}

/// Analytic and finite-difference second variations on random
/// volume-preserving jet fields, normalized to max-abs component 1.
pub fn second_variation_oracle(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    fields: usize,
    tau_step: f64,
    seed: u64,
) -> Result<OracleSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale =
        crate::jets::max_abs_entry(&FormMatrices::assemble(rho, lagrangian, nu).form(FormId::SP1));
    let mut analytic = Vec::with_capacity(fields);
    let mut fd = Vec::with_capacity(fields);
    let mut max_error: f64 = 0.0;
    for _ in 0..fields {
        let raw = JetField::random_with(rho.len(), rho.dim(), 1.0, &mut rng);
        let curve = VariationCurve::volume_preserving(rho.clone(), raw)?;
        let norm = curve.jet().max_abs();
        let curve = VariationCurve::new(rho.clone(), curve.jet().scaled(1.0 / norm))?;
        let a = second_variation_analytic(rho, lagrangian, nu, curve.jet())?;
        let f = second_variation_fd(lagrangian, &curve, tau_step)?;
        max_error = max_error.max((a - f).abs() / f.abs().max(scale));
        analytic.push(a);
        fd.push(f);
    }
    Ok(OracleSummary {
        fields,
        analytic,
        finite_difference: fd,
        max_error,
        scale,
    })
}

fn fragment_stage(
    state: &mut RunState,
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<()> {
    let tol = config.tolerances;
    let oracle = second_variation_oracle(
        rho,
        lagrangian,
        nu,
        config.oracle.fields,
        config.oracle.tau_step,
        config.oracle.seed,
    )?;
    {
        let mut w = csv::Writer::from_writer(csv_file(out_dir, "second_variation.csv")?);
        w.write_record(["field", "analytic", "fd"])?;
        for (k, (a, f)) in oracle
            .analytic
            .iter()
            .zip(&oracle.finite_difference)
            .enumerate()
        {
            w.write_record([k.to_string(), a.to_string(), f.to_string()])?;
        }
        w.flush()?;
    }
    state.verdicts.push(verdict(
        "second_variation_oracle",
        oracle.max_error <= tol.fd_rel,
        format!(
            "max error {:e} over {} fields",
            oracle.max_error, oracle.fields
        ),
    ));
    state.oracle = Some(oracle);

    let positivity = positivity_modulo_translations(rho, lagrangian, nu, tol.tau_psd)?;
    state.verdicts.push(verdict(
        "sp1_strictly_positive_modulo_translations",
        positivity.strictly_positive_modulo_translations,
        format!(
            "min eigenvalue {:e}, scale {:e}",
            positivity.sp1_min_modulo_translations, positivity.sp1_scale
        ),
    ));
    state.positivity = Some(positivity);

    let probe = stability_probe(rho, lagrangian, nu, &config.probe)?;
    probe.write_csv(csv_file(out_dir, "probe.csv")?)?;
    state.verdicts.push(verdict(
        "probe_nonnegative",
        probe.nonnegative(tol.probe_nonnegative),
        format!(
            "min action change {:e}, action {:e}",
            probe.min_delta, probe.action
        ),
    ));
    state.verdicts.push(verdict(
        "probe_quadratic_fit",
        probe.max_fit_error <= tol.probe_fit,
        format!("max relative fit error {:e}", probe.max_fit_error),
    ));
    state.probe = Some(ProbeSummary {
        trials: config.probe.trials,
        action: probe.action,
        min_delta: probe.min_delta,
        max_fit_error: probe.max_fit_error,
    });
    Ok(())
}

fn linfield_stage(
    state: &mut RunState,
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<()> {
    let op = assemble_linfield(rho, lagrangian, nu);
    op.write_csv(csv_file(out_dir, "operator.csv")?)?;
    let kernel = solve_linfield(&op, config.linfield.sigma_threshold)?;
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(csv_file(out_dir, "kernel.csv")?);
        for v in &kernel {
            w.write_record(v.to_flat().iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
    }
    let scale = op.scale();
    let translations = translation_jets(rho);
    let residuals = translations
        .iter()
        .map(|t| linfield_residual(&op, t))
        .collect::<Result<Vec<_>>>()?;
    let spans: Vec<f64> = translations
        .iter()
        .map(|t| span_residual(&kernel, t))
        .collect();
    let worst = residuals.iter().fold(0.0f64, |a, r| a.max(*r));
    let worst_span = spans.iter().fold(0.0f64, |a, r| a.max(*r));
    state.verdicts.push(verdict(
        "translation_solves_linfield",
        worst <= 1e-8 * scale && worst_span <= 1e-8,
        format!("residual {worst:e} (scale {scale:e}), distance from kernel {worst_span:e}, kernel dimension {}", kernel.len()),
    ));
    state.linfield = Some(LinfieldSummary {
        sigma_threshold: config.linfield.sigma_threshold,
        scale,
        translation_residuals: residuals,
        translation_span_residuals: spans,
        kernel,
    });
    Ok(())
}

fn osi_stage(
    state: &mut RunState,
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<()> {
    let family = config
        .linfield
        .omega
        .clone()
        .unwrap_or_else(|| OmegaFamily::default_for(rho, config.probe.seed));
    let kernel = state
        .linfield
        .as_ref()
        .map(|l| l.kernel.clone())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(csv_file(out_dir, "osi.csv")?);
    w.write_record(["vector", "omega", "value"])?;
    let mut reports = Vec::with_capacity(kernel.len());
    for (k, v) in kernel.iter().enumerate() {
        let r = osi_report(rho, lagrangian, nu, v, &family, config.linfield.osi)?;
        for e in &r.entries {
            let omega: Vec<String> = e.omega.iter().map(|i| i.to_string()).collect();
            w.write_record([k.to_string(), omega.join(" "), e.value.to_string()])?;
        }
        reports.push(r);
    }
    w.flush()?;
    let ok = reports.iter().all(|r| r.verdict() == Some(true));
    let min = reports
        .iter()
        .map(|r| r.min_value / r.scale.max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    state.verdicts.push(verdict(
        "surface_layer_nonnegative",
        ok,
        if reports.is_empty() {
            "no kernel vectors".to_string()
        } else {
            format!(
                "min value / scale {min:e} over {} kernel vectors",
                reports.len()
            )
        },
    ));
    state.osi = reports;
    Ok(())
}

//! Push-forward variation curves, fragmentation, and finite-difference oracles
//! for the second variation.
//!
//! Curves are linear in `tau`: weights `w_i (1 + tau a_i)` and points
//! `x_i + tau u_i`. Differences of the action along a curve go through
//! [`action_change`], which stays accurate far below the round-off of `S`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{action, action_change, ell};
use crate::error::{Error, Result};
use crate::jets::{kernel_part, nabla2_ell_form, sp1_inner, Jet, JetField};
use crate::lagrangian::LagrangianModel;
use crate::measure::DiscreteMeasure;

/// Largest `|tau|` range kept open around zero when weights have to stay positive.
fn positivity_range(scalars: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for a in scalars {
        if a > 0.0 {
            lo = lo.max(-1.0 / a);
        } else if a < 0.0 {
            hi = hi.min(-1.0 / a);
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationCurve {
    base: DiscreteMeasure,
    jet: JetField,
}

impl VariationCurve {
    pub fn new(base: DiscreteMeasure, jet: JetField) -> Result<Self> {
        jet.check(&base)?;
        Ok(VariationCurve { base, jet })
    }

    /// Curve whose scalar components are shifted by a constant so that
    /// `sum_i w_i a_i = 0`.
    pub fn volume_preserving(base: DiscreteMeasure, jet: JetField) -> Result<Self> {
        jet.check(&base)?;
        let shift = volume_defect(&base, &jet) / base.total_volume();
        let mut jet = jet;
        for j in &mut jet.jets {
            j.a -= shift;
        }
        Ok(VariationCurve { base, jet })
    }

    pub fn base(&self) -> &DiscreteMeasure {
        &self.base
    }

    pub fn jet(&self) -> &JetField {
        &self.jet
    }

    pub fn volume_defect(&self) -> f64 {
        volume_defect(&self.base, &self.jet)
    }

    /// Open interval of `tau` on which every weight stays positive.
    pub fn tau_range(&self) -> (f64, f64) {
        positivity_range(self.jet.jets.iter().map(|j| j.a))
    }
}

pub fn volume_defect(rho: &DiscreteMeasure, jet: &JetField) -> f64 {
    rho.weights()
        .iter()
        .zip(&jet.jets)
        .map(|(w, j)| w * j.a)
        .sum()
}

pub fn deform(curve: &VariationCurve, tau: f64) -> Result<DiscreteMeasure> {
    if tau == 0.0 {
        return Ok(curve.base.clone());
    }
    let base = &curve.base;
    let mut weights = Vec::with_capacity(base.len());
    for (i, (w, j)) in base.weights().iter().zip(&curve.jet.jets).enumerate() {
        let weight = w * (1.0 + tau * j.a);
        if weight <= 0.0 || !weight.is_finite() {
            return Err(Error::NonPositiveWeight {
                point: i,
                tau,
                weight,
            });
        }
        weights.push(weight);
    }
    let points = base
        .points()
        .iter()
        .zip(&curve.jet.jets)
        .map(|(x, j)| base.manifold().translate(x, &scaled(&j.u, tau)))
        .collect();
    DiscreteMeasure::new(base.manifold().clone(), points, weights)
}

fn scaled(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| s * x).collect()
}

/// Half the second derivative from the jet-space formula: `sp1_inner(jf, jf)`.
pub fn second_variation_analytic(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jf: &JetField,
) -> Result<f64> {
    sp1_inner(rho, lagrangian, nu, jf, jf)
}

/// Exact half second derivative of `tau -> S(deform(tau))` at zero for the
/// linear curve: `sp1_inner(jf, jf) - sum_i w_i a_i^2 l(x_i)`. Agrees with the
/// analytic value whenever `l` vanishes on the support.
pub fn second_variation_exact(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jf: &JetField,
) -> Result<f64> {
    let correction: f64 = rho
        .points()
        .iter()
        .zip(rho.weights())
        .zip(&jf.jets)
        .map(|((x, w), j)| w * j.a * j.a * ell(rho, lagrangian, nu, x))
        .sum();
    Ok(sp1_inner(rho, lagrangian, nu, jf, jf)? - correction)
}

fn check_tau(range: (f64, f64), h: f64) -> Result<()> {
    if !(h > 0.0) || h.is_nan() {
        return Err(Error::InvalidParameter {
            field: "tau_step".into(),
            reason: "must be positive".into(),
        });
    }
    if -h <= range.0 || h >= range.1 {
        return Err(Error::Precondition(format!(
            "tau step {h} leaves the positivity range ({}, {})",
            range.0, range.1
        )));
    }
    Ok(())
}

/// Richardson-refined centered second difference of `delta` (which returns
/// `S(tau) - S(0)`), halved.
fn richardson_half_second<F: Fn(f64) -> Result<f64>>(delta: F, h: f64) -> Result<f64> {
    let d = |s: f64| -> Result<f64> { Ok((delta(s)? + delta(-s)?) / (s * s)) };
    let coarse = d(h)?;
    let fine = d(0.5 * h)?;
    Ok(0.5 * (4.0 * fine - coarse) / 3.0)
}

fn curve_change(lagrangian: &LagrangianModel, curve: &VariationCurve, tau: f64) -> Result<f64> {
    let base = &curve.base;
    let steps: Vec<Vec<f64>> = curve.jet.jets.iter().map(|j| scaled(&j.u, tau)).collect();
    let weights: Vec<f64> = base
        .weights()
        .iter()
        .zip(&curve.jet.jets)
        .map(|(w, j)| w * (1.0 + tau * j.a))
        .collect();
    action_change(base, lagrangian, &steps, &weights)
}

/// Finite-difference oracle for [`second_variation_analytic`]. The base is
/// expected to satisfy the weak EL equations and the curve to preserve volume;
/// neither is checked here.
pub fn second_variation_fd(
    lagrangian: &LagrangianModel,
    curve: &VariationCurve,
    tau_step: f64,
) -> Result<f64> {
    check_tau(curve.tau_range(), tau_step)?;
    richardson_half_second(|t| curve_change(lagrangian, curve, t), tau_step)
}

/// Centered first difference `[S(h) - S(-h)] / 2h`.
pub fn first_variation_fd(
    lagrangian: &LagrangianModel,
    curve: &VariationCurve,
    tau_step: f64,
) -> Result<f64> {
    check_tau(curve.tau_range(), tau_step)?;
    Ok(
        (curve_change(lagrangian, curve, tau_step)? - curve_change(lagrangian, curve, -tau_step)?)
            / (2.0 * tau_step),
    )
}

#[derive(Deserialize)]
struct RawScheme {
    weights: Vec<Vec<f64>>,
    jets: Vec<JetField>,
}

/// `L` fragments: a row-stochastic `n x L` weight matrix and one jet field per
/// fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme")]
pub struct FragmentationScheme {
    weights: Vec<Vec<f64>>,
    jets: Vec<JetField>,
}

impl TryFrom<RawScheme> for FragmentationScheme {
    type Error = Error;
    fn try_from(raw: RawScheme) -> Result<Self> {
        Self::new(raw.weights, raw.jets)
    }
}

/// Allowed deviation of a weight row sum from one.
pub const ROW_SUM_TOL: f64 = 1e-12;

impl FragmentationScheme {
    pub fn new(weights: Vec<Vec<f64>>, jets: Vec<JetField>) -> Result<Self> {
        let l = jets.len();
        if l == 0 {
            return Err(crate::error::invalid(
                "jets",
                "at least one fragment is required",
            ));
        }
        let n = jets[0].len();
        if weights.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        if let Some(jf) = jets.iter().find(|jf| jf.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                got: jf.len(),
            });
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != l {
                return Err(Error::LengthMismatch {
                    expected: l,
                    got: row.len(),
                });
            }
            if row.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
                return Err(crate::error::invalid(
                    "weights",
                    format!("row {i} has a negative or non-finite entry"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(crate::error::invalid(
                    "weights",
                    format!("row {i} sums to {sum}, not 1"),
                ));
            }
        }
        Ok(FragmentationScheme { weights, jets })
    }

    /// One fragment with `c = 1`.
    pub fn single(jet: JetField) -> Self {
        FragmentationScheme {
            weights: vec![vec![1.0]; jet.len()],
            jets: vec![jet],
        }
    }

    /// Equal weights `1/L` at every point.
    pub fn uniform(jets: Vec<JetField>) -> Result<Self> {
        let l = jets.len().max(1);
        let n = jets.first().map_or(0, |j| j.len());
        Self::new(vec![vec![1.0 / l as f64; l]; n], jets)
    }

    /// Random scheme: weights uniform then normalized per point, jet
    /// components uniform in `[-jet_scale, jet_scale]`, projected to preserve
    /// volume.
    pub fn random<R: Rng>(
        rho: &DiscreteMeasure,
        fragments: usize,
        jet_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = rho.len();
        let weights = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..fragments).map(|_| 0.05 + rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|c| c / s).collect()
            })
            .collect();
        let jets = (0..fragments)
            .map(|_| JetField::random_with(n, rho.dim(), jet_scale, rng))
            .collect();
        Ok(Self::new(weights, jets)?.volume_preserving(rho))
    }

    pub fn fragment_count(&self) -> usize {
        self.jets.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn jets(&self) -> &[JetField] {
        &self.jets
    }

    /// `sum_i w_i sum_a c_ia b_ai`
    pub fn volume_defect(&self, rho: &DiscreteMeasure) -> f64 {
        rho.weights()
            .iter()
            .enumerate()
            .map(|(i, w)| {
                w * (0..self.fragment_count())
                    .map(|a| self.weights[i][a] * self.jets[a].jets[i].a)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Shifts every scalar component by the same constant to remove the volume defect.
    pub fn volume_preserving(mut self, rho: &DiscreteMeasure) -> Self {
        let shift = self.volume_defect(rho) / rho.total_volume();
        for jf in &mut self.jets {
            for j in &mut jf.jets {
                j.a -= shift;
            }
        }
        self
    }

    pub fn tau_range(&self) -> (f64, f64) {
        positivity_range(self.jets.iter().flat_map(|jf| jf.jets.iter().map(|j| j.a)))
    }

    fn check(&self, rho: &DiscreteMeasure) -> Result<()> {
        for jf in &self.jets {
            jf.check(rho)?;
        }
        Ok(())
    }

    /// The base measure split into co-located atoms `(i, a)` with weights
    /// `w_i c_ia > 0`, together with the matching jets.
    fn expanded(&self, rho: &DiscreteMeasure) -> Result<(DiscreteMeasure, JetField)> {
        self.check(rho)?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut jets = Vec::new();
        for (i, (x, w)) in rho.points().iter().zip(rho.weights()).enumerate() {
            for a in 0..self.fragment_count() {
                let c = self.weights[i][a];
                if c > 0.0 {
                    points.push(x.clone());
                    weights.push(w * c);
                    jets.push(self.jets[a].jets[i].clone());
                }
            }
        }
        Ok((
            DiscreteMeasure::new(rho.manifold().clone(), points, weights)?,
            JetField { jets },
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fragmented measure at `tau`. Fragments of the same base point that land on
/// the same coordinates are merged; at `tau = 0` the base is returned as is.
pub fn fragment_deform(
    scheme: &FragmentationScheme,
    rho: &DiscreteMeasure,
    tau: f64,
) -> Result<DiscreteMeasure> {
    scheme.check(rho)?;
    if tau == 0.0 {
        return Ok(rho.clone());
    }
    let m = rho.manifold();
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for (i, (x, w)) in rho.points().iter().zip(rho.weights()).enumerate() {
        let start = points.len();
        for a in 0..scheme.fragment_count() {
            let c = scheme.weights[i][a];
            if c == 0.0 {
                continue;
            }
            let jet = &scheme.jets[a].jets[i];
            let weight = w * c * (1.0 + tau * jet.a);
            if weight <= 0.0 || !weight.is_finite() {
                return Err(Error::NonPositiveWeight {
                    point: i,
                    tau,
                    weight,
                });
            }
            let y = m.translate(x, &scaled(&jet.u, tau));
            match points[start..].iter().position(|p| *p == y) {
                Some(k) => weights[start + k] += weight,
                None => {
                    points.push(y);
                    weights.push(weight);
                }
            }
        }
    }
    DiscreteMeasure::new(m.clone(), points, weights)
}

/// Pre-substitution fragmented second variation:
/// `sum_ij w_i w_j sum_ab c_a(x_i) c_b(x_j) nabla1 nabla2 L(u_a, u_b) + sum_i w_i sum_a c_a nabla^2 l(u_a, u_a)`.
pub fn frag_second_variation(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    scheme: &FragmentationScheme,
) -> Result<f64> {
    let (expanded, jets) = scheme.expanded(rho)?;
    sp1_inner(&expanded, lagrangian, nu, &jets, &jets)
}

/// Exact half second derivative of the fragmented curve at zero; differs from
/// [`frag_second_variation`] by `sum_i w_i l(x_i) sum_a c_a b_a^2`.
pub fn frag_second_variation_exact(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    scheme: &FragmentationScheme,
) -> Result<f64> {
    let (expanded, jets) = scheme.expanded(rho)?;
    second_variation_exact(&expanded, lagrangian, nu, &jets)
}

/// Finite-difference oracle for the fragmented second variation.
pub fn frag_second_variation_fd(
    lagrangian: &LagrangianModel,
    rho: &DiscreteMeasure,
    scheme: &FragmentationScheme,
    tau_step: f64,
) -> Result<f64> {
    check_tau(scheme.tau_range(), tau_step)?;
    let (expanded, jets) = scheme.expanded(rho)?;
    let curve = VariationCurve::new(expanded, jets)?;
    richardson_half_second(|t| curve_change(lagrangian, &curve, t), tau_step)
}

/// `S(fragment_deform(tau)) - S(rho)` computed without cancellation.
pub fn frag_action_change(
    lagrangian: &LagrangianModel,
    rho: &DiscreteMeasure,
    scheme: &FragmentationScheme,
    tau: f64,
) -> Result<f64> {
    let (lo, hi) = scheme.tau_range();
    if tau <= lo || tau >= hi {
        return Err(Error::Precondition(format!(
            "tau {tau} leaves the positivity range ({lo}, {hi})"
        )));
    }
    let (expanded, jets) = scheme.expanded(rho)?;
    curve_change(lagrangian, &VariationCurve::new(expanded, jets)?, tau)
}

/// Transformed fragmented second variation for jets already multiplied by the
/// weights (`u~_a = c_a u_a`):
/// `sum_ij w_i w_j nabla1 nabla2 L(sum_a u~_a, sum_b u~_b) + sum_i w_i sum_a A_a / c_a`
/// with `A_a = nabla^2 l(u~_a, u~_a)` and `0/0 := 0`.
pub fn frag_transformed(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    weights: &[Vec<f64>],
    jets: &[JetField],
) -> Result<f64> {
    let summed = sum_fields(rho, jets)?;
    let mut total = kernel_part(rho, lagrangian, &summed, &summed)?;
    for (i, w) in rho.weights().iter().enumerate() {
        let mut local = 0.0;
        for (a, jf) in jets.iter().enumerate() {
            let c = weights[i][a];
            let big_a = nabla2_ell_form(rho, lagrangian, nu, i, &jf.jets[i], &jf.jets[i])?;
            local += if c > 0.0 {
                big_a / c
            } else if big_a <= 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
        }
        total += w * local;
    }
    Ok(total)
}

fn sum_fields(rho: &DiscreteMeasure, jets: &[JetField]) -> Result<JetField> {
    let mut summed = JetField::zeros(rho.len(), rho.dim());
    for jf in jets {
        jf.check(rho)?;
        summed = summed.combine(1.0, jf, 1.0);
    }
    Ok(summed)
}

/// Weights minimizing `sum_a A_a / c_a` over the simplex.
pub fn optimal_weights(values: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some((index, value)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeInput {
            index,
            value: *value,
        });
    }
    if values.is_empty() {
        return Err(crate::error::invalid(
            "values",
            "at least one fragment is required",
        ));
    }
    let roots: Vec<f64> = values.iter().map(|v| v.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        return Ok((vec![1.0 / values.len() as f64; values.len()], 0.0));
    }
    Ok((roots.iter().map(|r| r / total).collect(), total * total))
}

/// Per-point diagonal values `A_a = nabla^2 l(u~_a, u~_a)`, with entries down
/// to `-tau_psd * scale * |u~_a|^2` clipped to zero.
pub fn clipped_diagonals(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jets: &[JetField],
    tau_psd: f64,
    scale: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rho.len());
    for i in 0..rho.len() {
        let mut row = Vec::with_capacity(jets.len());
        for jf in jets {
            jf.check(rho)?;
            let jet: &Jet = &jf.jets[i];
            let value = nabla2_ell_form(rho, lagrangian, nu, i, jet, jet)?;
            let bound = -tau_psd * scale * jet.norm_squared();
            if value < bound {
                return Err(Error::NotQ1Positive {
                    point: i,
                    value,
                    bound,
                });
            }
            row.push(value.max(0.0));
        }
        out.push(row);
    }
    Ok(out)
}

/// Infimum over weight fields of [`frag_transformed`]:
/// `sum_ij w_i w_j nabla1 nabla2 L(sum_a u~_a, sum_b u~_b) + sum_i w_i (sum_a sqrt(A_a))^2`.
/// `scale` sets the clipping threshold for slightly negative `A_a`.
pub fn frag_lower_bound(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jets: &[JetField],
    tau_psd: f64,
    scale: f64,
) -> Result<f64> {
    let summed = sum_fields(rho, jets)?;
    let diag = clipped_diagonals(rho, lagrangian, nu, jets, tau_psd, scale)?;
    let local: f64 = rho
        .weights()
        .iter()
        .zip(&diag)
        .map(|(w, row)| w * row.iter().map(|a| a.sqrt()).sum::<f64>().powi(2))
        .sum();
    Ok(kernel_part(rho, lagrangian, &summed, &summed)? + local)
}

/// Per-point optimal weight field for the given jets.
pub fn optimal_weight_field(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jets: &[JetField],
    tau_psd: f64,
    scale: f64,
) -> Result<Vec<Vec<f64>>> {
    clipped_diagonals(rho, lagrangian, nu, jets, tau_psd, scale)?
        .iter()
        .map(|row| optimal_weights(row).map(|(c, _)| c))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Fragment counts are drawn from `1..=fragments`.
    pub fragments: usize,
    pub trials: usize,
    pub tau_grid: Vec<f64>,
    pub jet_scale: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            fragments: 3,
            trials: 100,
            tau_grid: vec![-0.02, -0.01, -0.005, 0.005, 0.01, 0.02],
            jet_scale: 1.0,
            seed: 7,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fragments == 0 {
            return Err(crate::error::invalid("fragments", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(crate::error::invalid("trials", "must be at least 1"));
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| *t == 0.0 || !t.is_finite()) {
            return Err(crate::error::invalid(
                "tau_grid",
                "needs finite non-zero entries",
            ));
        }
        if !(self.jet_scale >= 0.0) {
            return Err(crate::error::invalid("jet_scale", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub trial: usize,
    pub tau: f64,
    pub delta_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFit {
    pub trial: usize,
    pub fragments: usize,
    /// `frag_second_variation` of the sampled scheme.
    pub predicted: f64,
    /// Least-squares `k` in `delta_s ~ k tau^2`.
    pub fitted: f64,
    pub relative_error: f64,
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub action: f64,
    pub rows: Vec<ProbeRow>,
    pub fits: Vec<TrialFit>,
    pub min_delta: f64,
    pub max_fit_error: f64,
}

impl ProbeReport {
    /// `min_delta >= -tol * |S|`
    pub fn nonnegative(&self, tol: f64) -> bool {
        self.min_delta >= -tol * self.action.abs()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "tau", "delta_s"])?;
        for r in &self.rows {
            w.write_record([
                r.trial.to_string(),
                r.tau.to_string(),
                r.delta_s.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type TrialOutcome = (Vec<ProbeRow>, TrialFit);

fn probe_trial(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ProbeConfig,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(trial as u64);
    let fragments = rng.gen_range(1..=config.fragments);
    let scheme = FragmentationScheme::random(rho, fragments, config.jet_scale, &mut rng)?;
    let predicted = frag_second_variation(rho, lagrangian, nu, &scheme)?;
    let mut rows = Vec::with_capacity(config.tau_grid.len());
    let (mut num, mut den) = (0.0, 0.0);
    for &tau in &config.tau_grid {
        let delta_s = frag_action_change(lagrangian, rho, &scheme, tau)?;
        num += delta_s * tau * tau;
        den += tau.powi(4);
        rows.push(ProbeRow {
            trial,
            tau,
            delta_s,
        });
    }
    let fitted = num / den;
    let relative_error = if predicted == fitted {
        0.0
    } else {
        (fitted - predicted).abs() / predicted.abs()
    };
    let min_delta = rows.iter().map(|r| r.delta_s).fold(f64::INFINITY, f64::min);
    Ok((
        rows,
        TrialFit {
            trial,
            fragments,
            predicted,
            fitted,
            relative_error,
            min_delta,
        },
    ))
}

/// Samples random volume-preserving fragmentation schemes and records the
/// action change along each. Trials run on separate threads and are merged by
/// trial index, so the report depends only on the seed.
pub fn stability_probe(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    config.validate()?;
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(config.trials.max(1));
    let mut results: Vec<Option<Result<TrialOutcome>>> = (0..config.trials).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = config.trials.div_ceil(workers).max(1);
        for (c, slots) in results.chunks_mut(chunk).enumerate() {
            s.spawn(move || {
                for (k, slot) in slots.iter_mut().enumerate() {
                    *slot = Some(probe_trial(rho, lagrangian, nu, config, c * chunk + k));
                }
            });
        }
    });
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for r in results {
        let (r, f) = r.expect("every trial slot is filled")?;
        rows.extend(r);
        fits.push(f);
    }
    Ok(ProbeReport {
        action: action(rho, lagrangian),
        min_delta: rows.iter().map(|r| r.delta_s).fold(f64::INFINITY, f64::min),
        max_fit_error: fits.iter().map(|f| f.relative_error).fold(0.0, f64::max),
        rows,
        fits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::calibrate_nu;
    use crate::manifold::ChartManifold;
    use proptest::prelude::*;

    fn gauss() -> LagrangianModel {
        LagrangianModel::Gaussian { width: 1.0 }
    }

    fn generic(seed: u64) -> DiscreteMeasure {
        DiscreteMeasure::random(
            ChartManifold::torus(vec![4.0, 5.0]).unwrap(),
            4,
            4.0,
            1.0,
            seed,
        )
        .unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn tau_zero_is_bit_identical() {
        let rho = generic(1);
        let curve = VariationCurve::new(rho.clone(), JetField::random(4, 2, 1.0, 3)).unwrap();
        assert_eq!(deform(&curve, 0.0).unwrap(), rho);
    }

    #[test]
    fn scalar_volume_preserving_curve_keeps_volume() {
        let rho = generic(2);
        let jet = JetField::scalar(&[0.3, -0.2, 0.5, 0.1], 2);
        let curve = VariationCurve::volume_preserving(rho.clone(), jet).unwrap();
        assert!(curve.volume_defect().abs() < 1e-15);
        for tau in [-0.5, 0.25, 0.9] {
            let v = deform(&curve, tau).unwrap().total_volume();
            assert!((v - rho.total_volume()).abs() < 1e-14);
        }
    }

    #[test]
    fn vector_jet_translates_support() {
        let rho =
            DiscreteMeasure::random(ChartManifold::euclidean(2).unwrap(), 3, 3.0, 1.0, 4).unwrap();
        let jet = JetField::translation(3, 2, 1);
        let moved = deform(&VariationCurve::new(rho.clone(), jet).unwrap(), 0.5).unwrap();
        assert_eq!(moved.weights(), rho.weights());
        for (p, q) in moved.points().iter().zip(rho.points()) {
            assert_eq!(p[0], q[0]);
            assert!((p[1] - q[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn deform_reports_offending_point() {
        let rho = generic(3);
        let jet = JetField::scalar(&[0.0, -2.0, 0.0, 0.0], 2);
        let curve = VariationCurve::new(rho, jet).unwrap();
        assert_eq!(curve.tau_range().1, 0.5);
        assert!(matches!(
            deform(&curve, 0.6),
            Err(Error::NonPositiveWeight { point: 1, .. })
        ));
        assert!(second_variation_fd(&gauss(), &curve, 0.6).is_err());
    }

    #[test]
    fn zero_jet_has_zero_variations() {
        let rho = generic(4);
        let nu = calibrate_nu(&rho, &gauss());
        let z = JetField::zeros(4, 2);
        let curve = VariationCurve::new(rho.clone(), z.clone()).unwrap();
        assert_eq!(
            second_variation_analytic(&rho, &gauss(), nu, &z).unwrap(),
            0.0
        );
        assert_eq!(second_variation_fd(&gauss(), &curve, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn analytic_matches_sp1() {
        let rho = generic(5);
        let nu = calibrate_nu(&rho, &gauss());
        let jf = JetField::random(4, 2, 1.0, 9);
        assert_eq!(
            second_variation_analytic(&rho, &gauss(), nu, &jf).unwrap(),
            sp1_inner(&rho, &gauss(), nu, &jf, &jf).unwrap()
        );
    }

    #[test]
    fn exact_formula_matches_fd_away_from_minimizers() {
        for seed in 0..10 {
            let rho = generic(seed);
            let nu = calibrate_nu(&rho, &gauss());
            let jf = JetField::random(4, 2, 1.0, seed + 100).scaled(0.5);
            let curve = VariationCurve::new(rho.clone(), jf.clone()).unwrap();
            let exact = second_variation_exact(&rho, &gauss(), nu, &jf).unwrap();
            let fd = second_variation_fd(&gauss(), &curve, 1e-3).unwrap();
            assert!(rel(exact, fd) < 1e-6, "seed {seed}: {exact} vs {fd}");
        }
    }

    #[test]
    fn optimal_weight_examples() {
        assert_eq!(optimal_weights(&[1.0, 1.0]).unwrap(), (vec![0.5, 0.5], 4.0));
        let (c, lambda) = optimal_weights(&[1.0, 4.0]).unwrap();
        assert!((c[0] - 1.0 / 3.0).abs() < 1e-15 && (c[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lambda, 9.0);
        assert!((1.0 / c[0] + 4.0 / c[1] - 9.0).abs() < 1e-13);
        assert_eq!(optimal_weights(&[0.0, 1.0]).unwrap(), (vec![0.0, 1.0], 1.0));
        assert_eq!(optimal_weights(&[0.0, 0.0]).unwrap(), (vec![0.5, 0.5], 0.0));
        assert!(matches!(
            optimal_weights(&[1.0, -1.0]),
            Err(Error::NegativeInput { index: 1, .. })
        ));
    }

    #[test]
    fn scheme_validation_and_json() {
        let j = JetField::zeros(2, 1);
        assert!(FragmentationScheme::new(
            vec![vec![0.5, 0.6], vec![0.5, 0.5]],
            vec![j.clone(), j.clone()]
        )
        .is_err());
        assert!(FragmentationScheme::new(
            vec![vec![1.5, -0.5], vec![0.5, 0.5]],
            vec![j.clone(), j.clone()]
        )
        .is_err());
        let s =
            FragmentationScheme::uniform(vec![j.clone(), JetField::translation(2, 1, 0)]).unwrap();
        assert_eq!(
            FragmentationScheme::from_json(&s.to_json().unwrap()).unwrap(),
            s
        );
        assert!(FragmentationScheme::from_json(
            r#"{"weights":[[0.2,0.2],[0.5,0.5]],"jets":[[],[]]}"#
        )
        .is_err());
    }

    #[test]
    fn single_fragment_matches_deform() {
        let rho = generic(6);
        let jf = JetField::random(4, 2, 0.5, 1);
        let curve = VariationCurve::new(rho.clone(), jf.clone()).unwrap();
        let scheme = FragmentationScheme::single(jf);
        assert_eq!(
            fragment_deform(&scheme, &rho, 0.1).unwrap(),
            deform(&curve, 0.1).unwrap()
        );
        let nu = calibrate_nu(&rho, &gauss());
        let a = frag_second_variation(&rho, &gauss(), nu, &scheme).unwrap();
        let b = second_variation_analytic(&rho, &gauss(), nu, &scheme.jets()[0]).unwrap();
        assert!(rel(a, b) < 1e-14);
    }

    #[test]
    fn symmetric_two_fragment_split() {
        let m = ChartManifold::euclidean(1).unwrap();
        let rho = DiscreteMeasure::single(m, vec![0.0], 2.0).unwrap();
        let scheme = FragmentationScheme::uniform(vec![
            JetField {
                jets: vec![Jet::vector(vec![1.0])],
            },
            JetField {
                jets: vec![Jet::vector(vec![-1.0])],
            },
        ])
        .unwrap();
        let split = fragment_deform(&scheme, &rho, 0.5).unwrap();
        assert_eq!(split.points(), &[vec![0.5], vec![-0.5]]);
        assert_eq!(split.weights(), &[1.0, 1.0]);
        assert_eq!(fragment_deform(&scheme, &rho, 0.0).unwrap(), rho);
    }

    #[test]
    fn coincident_fragments_merge() {
        let rho = generic(7);
        let jf = JetField::random(4, 2, 0.5, 2).scalar_part();
        let scheme = FragmentationScheme::uniform(vec![jf.clone(), jf]).unwrap();
        let d = fragment_deform(&scheme, &rho, 0.1).unwrap();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn fragmented_exact_matches_fd() {
        let rho = generic(8);
        let nu = calibrate_nu(&rho, &gauss());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let scheme = FragmentationScheme::random(&rho, 3, 0.5, &mut rng).unwrap();
            let exact = frag_second_variation_exact(&rho, &gauss(), nu, &scheme).unwrap();
            let fd = frag_second_variation_fd(&gauss(), &rho, &scheme, 1e-3).unwrap();
            assert!(rel(exact, fd) < 1e-6, "{exact} vs {fd}");
        }
    }

    #[test]
    fn lower_bound_for_single_field_is_sp1() {
        // needs a point where the diagonal of nabla^2 l is non-negative
        let rho = DiscreteMeasure::equispaced_ring(6.0, 8, 8.0).unwrap();
        let k = LagrangianModel::CompactSupportPower {
            radius: 1.0,
            power: 3,
        };
        let nu = calibrate_nu(&rho, &k);
        let jf = JetField::random(8, 1, 1.0, 4);
        let lb = frag_lower_bound(&rho, &k, nu, std::slice::from_ref(&jf), 1e-10, 1.0).unwrap();
        assert!(rel(lb, sp1_inner(&rho, &k, nu, &jf, &jf).unwrap()) < 1e-12);
    }

    #[test]
    fn lower_bound_rejects_negative_diagonal() {
        let m = ChartManifold::euclidean(1).unwrap();
        let rho = DiscreteMeasure::single(m, vec![0.0], 2.0).unwrap();
        let nu = calibrate_nu(&rho, &gauss());
        let jf = JetField {
            jets: vec![Jet::vector(vec![1.0])],
        };
        assert!(matches!(
            frag_lower_bound(&rho, &gauss(), nu, &[jf], 1e-10, 1.0),
            Err(Error::NotQ1Positive { point: 0, .. })
        ));
    }

    #[test]
    fn probe_zero_jets_and_determinism() {
        let rho = generic(9);
        let nu = calibrate_nu(&rho, &gauss());
        let zero = ProbeConfig {
            jet_scale: 0.0,
            trials: 3,
            ..ProbeConfig::default()
        };
        let r = stability_probe(&rho, &gauss(), nu, &zero).unwrap();
        assert!(r
            .rows
            .iter()
            .all(|row| row.delta_s.abs() <= 1e-14 * r.action.abs()));
        let cfg = ProbeConfig {
            trials: 5,
            ..ProbeConfig::default()
        };
        let a = stability_probe(&rho, &gauss(), nu, &cfg).unwrap();
        let b = stability_probe(&rho, &gauss(), nu, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 5 * cfg.tau_grid.len());
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("trial,tau,delta_s"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn substitution_identity(seed in 0u64..1000, fragments in 1usize..4) {
            let rho = generic(seed);
            let nu = calibrate_nu(&rho, &gauss());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme = FragmentationScheme::random(&rho, fragments, 1.0, &mut rng).unwrap();
            let pre = frag_second_variation(&rho, &gauss(), nu, &scheme).unwrap();
            // u~_a = c_a u_a
            let transformed: Vec<JetField> = (0..fragments)
                .map(|a| JetField {
                    jets: scheme.jets()[a].jets.iter().enumerate()
                        .map(|(i, j)| j.scaled(scheme.weights()[i][a]))
                        .collect(),
                })
                .collect();
            let post = frag_transformed(&rho, &gauss(), nu, scheme.weights(), &transformed).unwrap();
            prop_assert!(rel(pre, post) < 1e-12 || (pre - post).abs() < 1e-12);
        }

        #[test]
        fn frag_tau_zero_keeps_action(seed in 0u64..1000) {
            let rho = generic(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scheme = FragmentationScheme::random(&rho, 2, 1.0, &mut rng).unwrap();
            let s0 = action(&fragment_deform(&scheme, &rho, 0.0).unwrap(), &gauss());
            prop_assert!(rel(s0, action(&rho, &gauss())) < 1e-12);
        }
    }
}

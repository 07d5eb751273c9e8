//! The causal action, the function `l`, the multiplier `nu` and EL diagnostics.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::LagrangianModel;
use crate::manifold::{ChartManifold, Point};
use crate::measure::DiscreteMeasure;

/// Convention used to fix `nu` away from a minimizer.
pub const NU_CONVENTION: &str = "nu = 2 * min_i sum_j w_j L(x_i, x_j)";

/// `S = sum_ij w_i w_j L(x_i, x_j)`, diagonal included, fixed summation order.
pub fn action(rho: &DiscreteMeasure, lagrangian: &LagrangianModel) -> f64 {
    let m = rho.manifold();
    let pts = rho.points();
    let w = rho.weights();
    let mut total = 0.0;
    for i in 0..pts.len() {
        let mut row = 0.0;
        for j in 0..pts.len() {
            row += w[j] * lagrangian.eval(m, &pts[i], &pts[j]);
        }
        total += w[i] * row;
    }
    total
}

/// `sum_j w_j L(x, x_j)`
pub fn potential(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, x: &[f64]) -> f64 {
    let m = rho.manifold();
    rho.points()
        .iter()
        .zip(rho.weights())
        .map(|(p, w)| w * lagrangian.eval(m, x, p))
        .sum()
}

/// `l(x) = sum_j w_j L(x, x_j) - nu / 2`, defined on all of the manifold.
pub fn ell(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, nu: f64, x: &[f64]) -> f64 {
    potential(rho, lagrangian, x) - 0.5 * nu
}

pub fn ell_gradient(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, x: &[f64]) -> Vec<f64> {
    let m = rho.manifold();
    let mut g = vec![0.0; rho.dim()];
    for (p, w) in rho.points().iter().zip(rho.weights()) {
        let pair = lagrangian.pair(m, x, p);
        for (gk, zk) in g.iter_mut().zip(&pair.z) {
            *gk += w * 2.0 * pair.dg * zk;
        }
    }
    g
}

pub fn ell_hessian(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, x: &[f64]) -> DMatrix<f64> {
    let m = rho.manifold();
    let mut h = DMatrix::zeros(rho.dim(), rho.dim());
    for (p, w) in rho.points().iter().zip(rho.weights()) {
        h += lagrangian.pair(m, x, p).hess11_matrix() * *w;
    }
    h
}

/// Fixes `nu` so that `min_i l(x_i) = 0` on the support.
pub fn calibrate_nu(rho: &DiscreteMeasure, lagrangian: &LagrangianModel) -> f64 {
    rho.points()
        .iter()
        .map(|x| potential(rho, lagrangian, x))
        .fold(f64::INFINITY, f64::min)
        * 2.0
}

/// Uniform sampler for the off-support scan of `inf l = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffSupportSampler {
    pub samples: usize,
    pub seed: u64,
    /// Margin added around the support's bounding box on flat space, in kernel length units.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    2.0
}

impl OffSupportSampler {
    pub fn new(samples: usize, seed: u64) -> Self {
        OffSupportSampler {
            samples,
            seed,
            margin: default_margin(),
        }
    }

    fn draw(&self, rho: &DiscreteMeasure, length: f64) -> Vec<Point> {
        let m = rho.dim();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for p in rho.points() {
            for k in 0..m {
                lo[k] = lo[k].min(p[k] - self.margin * length);
                hi[k] = hi[k].max(p[k] + self.margin * length);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.samples)
            .map(|_| rho.manifold().sample_uniform(&mut rng, &lo, &hi))
            .collect()
    }
}

/// Euler–Lagrange diagnostics at the support points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElReport {
    pub nu: f64,
    pub nu_calibrated: bool,
    pub nu_convention: String,
    pub ell_values: Vec<f64>,
    pub ell_gradients: Vec<Vec<f64>>,
    /// `max_i |l(x_i)|`
    pub strong_residual: f64,
    /// `max_i max(|l(x_i)|, |grad l(x_i)|_inf)`
    pub weak_residual: f64,
    pub off_support_min: Option<f64>,
    pub off_support_argmin: Option<Point>,
}

impl ElReport {
    pub fn passes_weak(&self, tol: f64) -> bool {
        self.weak_residual <= tol
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "ell", "grad_norm"])?;
        for (i, (l, g)) in self.ell_values.iter().zip(&self.ell_gradients).enumerate() {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            w.write_record([i.to_string(), l.to_string(), norm.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn el_report(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: Option<f64>,
    off_support: Option<&OffSupportSampler>,
) -> ElReport {
    let calibrated = nu.is_none();
    let nu = nu.unwrap_or_else(|| calibrate_nu(rho, lagrangian));
    let ell_values: Vec<f64> = rho
        .points()
        .iter()
        .map(|x| ell(rho, lagrangian, nu, x))
        .collect();
    let ell_gradients: Vec<Vec<f64>> = rho
        .points()
        .iter()
        .map(|x| ell_gradient(rho, lagrangian, x))
        .collect();
    let strong = ell_values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let weak = ell_gradients
        .iter()
        .flat_map(|g| g.iter())
        .fold(strong, |a, v| a.max(v.abs()));
    let (off_support_min, off_support_argmin) = match off_support {
        Some(sampler) => {
            let mut best = (f64::INFINITY, None);
            for x in sampler.draw(rho, lagrangian.length_scale()) {
                let v = ell(rho, lagrangian, nu, &x);
                if v < best.0 {
                    best = (v, Some(x));
                }
            }
            (Some(best.0), best.1)
        }
        None => (None, None),
    };
    ElReport {
        nu,
        nu_calibrated: calibrated,
        nu_convention: NU_CONVENTION.to_string(),
        ell_values,
        ell_gradients,
        strong_residual: strong,
        weak_residual: weak,
        off_support_min,
        off_support_argmin,
    }
}

/// `S(rho~) - S(rho)` through the three-term split with the signed
/// difference measure `mu = rho~ - rho`:
/// `int dmu int drho L + int drho int dmu L + int dmu int dmu L`.
pub fn action_difference(
    rho: &DiscreteMeasure,
    rho_tilde: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
) -> Result<f64> {
    if rho.manifold() != rho_tilde.manifold() {
        return Err(Error::Precondition(
            "measures live on different manifolds".into(),
        ));
    }
    let m = rho.manifold();
    // signed difference measure; coincident atoms are merged
    let mut diff: Vec<(&Point, f64)> = rho_tilde
        .points()
        .iter()
        .zip(rho_tilde.weights().iter().copied())
        .collect();
    for (p, w) in rho.points().iter().zip(rho.weights()) {
        match diff.iter_mut().find(|(q, _)| *q == p) {
            Some(entry) => entry.1 -= w,
            None => diff.push((p, -w)),
        }
    }
    diff.retain(|(_, w)| *w != 0.0);
    let base: Vec<(&Point, f64)> = rho
        .points()
        .iter()
        .zip(rho.weights().iter().copied())
        .collect();

    let cross = |a: &[(&Point, f64)], b: &[(&Point, f64)], manifold: &ChartManifold| {
        let mut total = 0.0;
        for (x, wx) in a {
            let mut row = 0.0;
            for (y, wy) in b {
                row += wy * lagrangian.eval(manifold, x, y);
            }
            total += wx * row;
        }
        total
    };
    let first = cross(&diff, &base, m);
    let second = cross(&base, &diff, m);
    let third = cross(&diff, &diff, m);
    Ok(first + second + third)
}

/// `S(rho~) - S(rho)` for `rho~` obtained by moving point `i` along the straight
/// chart segment `steps[i]` and giving it the weight `new_weights[i]`.
///
/// Each pair contributes `w~_i w~_j (L~ - L) + (w~_i w~_j - w_i w_j) L` with
/// `L~ - L` evaluated from the exact change of the squared distance, so the
/// result stays accurate when the change is far below the round-off of `S`.
pub fn action_change(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    steps: &[Vec<f64>],
    new_weights: &[f64],
) -> Result<f64> {
    if steps.len() != rho.len() || new_weights.len() != rho.len() {
        return Err(Error::LengthMismatch {
            expected: rho.len(),
            got: steps.len().min(new_weights.len()),
        });
    }
    let m = rho.manifold();
    let pts = rho.points();
    let w = rho.weights();
    let dim = rho.dim();
    let half: Option<Vec<f64>> = m.periods().map(|p| p.iter().map(|v| 0.5 * v).collect());
    let mut z = vec![0.0; dim];
    let mut total = 0.0;
    for i in 0..pts.len() {
        let dwi = new_weights[i] - w[i];
        let mut row = 0.0;
        for j in 0..pts.len() {
            m.displacement_into(&pts[i], &pts[j], &mut z);
            let t: f64 = z.iter().map(|v| v * v).sum();
            let mut dt = 0.0;
            let mut crosses_seam = false;
            for k in 0..dim {
                let d = steps[i][k] - steps[j][k];
                if let Some(h) = &half {
                    if (z[k] + d).abs() > h[k] {
                        crosses_seam = true;
                    }
                }
                dt += d * (2.0 * z[k] + d);
            }
            let value = lagrangian.profile(t).0;
            let delta = if crosses_seam {
                let xi = m.translate(&pts[i], &steps[i]);
                let xj = m.translate(&pts[j], &steps[j]);
                lagrangian.eval(m, &xi, &xj) - value
            } else {
                lagrangian.profile_delta(t, dt)
            };
            let dwj = new_weights[j] - w[j];
            row += new_weights[i] * new_weights[j] * delta
                + (dwi * new_weights[j] + w[i] * dwj) * value;
        }
        total += row;
    }
    Ok(total)
}

/// Gradient of the action with respect to positions and weights.
pub(crate) fn action_gradient(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = rho.manifold();
    let w = rho.weights();
    let mut pos = Vec::with_capacity(rho.len());
    let mut wgt = Vec::with_capacity(rho.len());
    for (i, x) in rho.points().iter().enumerate() {
        let mut g = vec![0.0; rho.dim()];
        let mut row = 0.0;
        for (j, y) in rho.points().iter().enumerate() {
            let pair = lagrangian.pair(m, x, y);
            row += w[j] * pair.value;
            for (gk, zk) in g.iter_mut().zip(&pair.z) {
                *gk += w[j] * 2.0 * pair.dg * zk;
            }
        }
        pos.push(g.into_iter().map(|v| 2.0 * w[i] * v).collect());
        wgt.push(2.0 * row);
    }
    (pos, wgt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ChartManifold;
    use proptest::prelude::*;
    use rand::Rng;

    fn gauss() -> LagrangianModel {
        LagrangianModel::Gaussian { width: 1.0 }
    }

    fn single() -> DiscreteMeasure {
        DiscreteMeasure::single(ChartManifold::euclidean(1).unwrap(), vec![0.3], 2.0).unwrap()
    }

    fn random_measure(seed: u64, n: usize) -> DiscreteMeasure {
        DiscreteMeasure::random(ChartManifold::euclidean(2).unwrap(), n, 3.0, 1.5, seed).unwrap()
    }

    #[test]
    fn single_point_action_and_nu() {
        let rho = single();
        assert_eq!(action(&rho, &gauss()), 4.0);
        assert_eq!(calibrate_nu(&rho, &gauss()), 4.0);
        assert_eq!(ell(&rho, &gauss(), 4.0, &[0.3]), 0.0);
        let r = el_report(&rho, &gauss(), None, None);
        assert_eq!(r.strong_residual, 0.0);
        assert_eq!(r.weak_residual, 0.0);
        assert_eq!(r.ell_gradients[0], vec![0.0]);
    }

    #[test]
    fn far_apart_points_have_no_cross_terms() {
        let c = LagrangianModel::CompactSupportPower {
            radius: 1.0,
            power: 3,
        };
        let rho = DiscreteMeasure::new(
            ChartManifold::euclidean(1).unwrap(),
            vec![vec![0.0], vec![2.5]],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(
            action(&rho, &c),
            2.0 * c.eval(rho.manifold(), &[0.0], &[0.0])
        );
    }

    #[test]
    fn permutation_leaves_action_unchanged() {
        let rho = random_measure(5, 6);
        let perm = rho.permuted(&[3, 1, 5, 0, 2, 4]).unwrap();
        let a = action(&rho, &gauss());
        let b = action(&perm, &gauss());
        // fixed order within each permutation; different orders agree to round-off
        assert!((a - b).abs() <= 1e-14 * a);
        assert_eq!(action(&rho, &gauss()).to_bits(), a.to_bits());
    }

    #[test]
    fn ell_with_zero_nu_is_linear_and_nonnegative() {
        let rho = random_measure(9, 5);
        let doubled = rho
            .with_weights(rho.weights().iter().map(|w| 2.0 * w).collect())
            .unwrap();
        for x in [[0.1, -0.2], [3.0, 1.0]] {
            let a = ell(&rho, &gauss(), 0.0, &x);
            assert!(a >= 0.0);
            assert!((ell(&doubled, &gauss(), 0.0, &x) - 2.0 * a).abs() <= 1e-15 * a.max(1e-300));
        }
    }

    #[test]
    fn symmetric_pair_calibrates_both_points() {
        let rho = DiscreteMeasure::equispaced_ring(6.0, 2, 2.0).unwrap();
        let r = el_report(&rho, &gauss(), None, None);
        assert_eq!(r.ell_values, vec![0.0, 0.0]);
    }

    #[test]
    fn generic_configuration_has_strong_residual() {
        let rho = DiscreteMeasure::new(
            ChartManifold::euclidean(1).unwrap(),
            vec![vec![0.0], vec![0.4], vec![1.7]],
            vec![1.0, 0.5, 1.5],
        )
        .unwrap();
        let r = el_report(&rho, &gauss(), None, None);
        // brute force: spread of the row sums
        let rows: Vec<f64> = rho
            .points()
            .iter()
            .map(|x| potential(&rho, &gauss(), x))
            .collect();
        let lo = rows.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = rows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(r.strong_residual > 0.1);
        assert!((r.strong_residual - (hi - lo)).abs() < 1e-14);
        assert!(r.ell_values.iter().all(|v| *v >= 0.0));
        assert!(r.weak_residual >= r.strong_residual);
    }

    #[test]
    fn report_csv_has_one_row_per_point() {
        let rho = random_measure(1, 4);
        let r = el_report(&rho, &gauss(), None, Some(&OffSupportSampler::new(50, 1)));
        assert!(r.off_support_min.is_some());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn action_difference_cases() {
        let rho = random_measure(2, 5);
        assert_eq!(action_difference(&rho, &rho, &gauss()).unwrap(), 0.0);

        let mut pts = rho.points().to_vec();
        pts[2][0] += 0.05;
        let moved = rho.with_points(pts).unwrap();
        let direct = action(&moved, &gauss()) - action(&rho, &gauss());
        let split = action_difference(&rho, &moved, &gauss()).unwrap();
        assert!((direct - split).abs() <= 1e-12 * direct.abs());

        let mut w = rho.weights().to_vec();
        w[0] += 0.1;
        w[3] -= 0.1;
        let shifted = rho.with_weights(w).unwrap();
        let direct = action(&shifted, &gauss()) - action(&rho, &gauss());
        let split = action_difference(&rho, &shifted, &gauss()).unwrap();
        assert!((direct - split).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn action_difference_rejects_other_manifold() {
        let a = single();
        let b = DiscreteMeasure::single(ChartManifold::torus(vec![1.0]).unwrap(), vec![0.3], 2.0)
            .unwrap();
        assert!(action_difference(&a, &b, &gauss()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rho = random_measure(4, 4);
        let (pos, wgt) = action_gradient(&rho, &gauss());
        let h = 1e-6;
        let mut pts = rho.points().to_vec();
        pts[1][1] += h;
        let plus = action(&rho.with_points(pts.clone()).unwrap(), &gauss());
        pts[1][1] -= 2.0 * h;
        let minus = action(&rho.with_points(pts).unwrap(), &gauss());
        assert!(((plus - minus) / (2.0 * h) - pos[1][1]).abs() < 1e-7);
        let mut w = rho.weights().to_vec();
        w[2] += h;
        let plus = action(&rho.with_weights(w.clone()).unwrap(), &gauss());
        w[2] -= 2.0 * h;
        let minus = action(&rho.with_weights(w).unwrap(), &gauss());
        assert!(((plus - minus) / (2.0 * h) - wgt[2]).abs() < 1e-7);
    }

    #[test]
    fn action_change_matches_direct_difference() {
        for (seed, lag) in [
            (3u64, gauss()),
            (
                4,
                LagrangianModel::CompactSupportPower {
                    radius: 1.2,
                    power: 3,
                },
            ),
            (
                5,
                LagrangianModel::InversePower {
                    width: 0.9,
                    exponent: 1.5,
                },
            ),
        ] {
            let rho = DiscreteMeasure::random(
                ChartManifold::torus(vec![3.0, 4.0]).unwrap(),
                6,
                4.0,
                1.0,
                seed,
            )
            .unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let steps: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    vec![
                        0.3 * (rng.gen::<f64>() - 0.5),
                        0.3 * (rng.gen::<f64>() - 0.5),
                    ]
                })
                .collect();
            let w: Vec<f64> = rho
                .weights()
                .iter()
                .map(|w| w * (0.9 + 0.2 * rng.gen::<f64>()))
                .collect();
            let moved: Vec<Vec<f64>> = rho
                .points()
                .iter()
                .zip(&steps)
                .map(|(p, s)| rho.manifold().translate(p, s))
                .collect();
            let tilde = DiscreteMeasure::new(rho.manifold().clone(), moved, w.clone()).unwrap();
            let direct = action(&tilde, &lag) - action(&rho, &lag);
            let change = action_change(&rho, &lag, &steps, &w).unwrap();
            assert!(
                (direct - change).abs() <= 1e-12 * action(&rho, &lag),
                "{direct} {change}"
            );
        }
    }

    #[test]
    fn action_change_resolves_tiny_steps() {
        let rho = random_measure(8, 5);
        let (pos, _) = action_gradient(&rho, &gauss());
        let eps = 1e-9;
        let steps: Vec<Vec<f64>> = pos
            .iter()
            .map(|g| g.iter().map(|v| -eps * v).collect())
            .collect();
        let change = action_change(&rho, &gauss(), &steps, rho.weights()).unwrap();
        let predicted: f64 = -eps * pos.iter().flatten().map(|v| v * v).sum::<f64>();
        assert!(
            (change - predicted).abs() <= 1e-6 * predicted.abs(),
            "{change} {predicted}"
        );
    }

    proptest! {
        #[test]
        fn double_counting_identity(seed in 0u64..1000, nu in -3.0f64..3.0) {
            let rho = random_measure(seed, 5);
            let s = action(&rho, &gauss());
            let lhs: f64 = rho.points().iter().zip(rho.weights())
                .map(|(x, w)| w * ell(&rho, &gauss(), nu, x)).sum();
            let rhs = s - nu * rho.total_volume() / 2.0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * s.abs().max(rhs.abs()));
        }

        #[test]
        fn calibrated_ell_is_nonnegative_with_zero_min(seed in 0u64..1000) {
            let rho = random_measure(seed, 6);
            let r = el_report(&rho, &gauss(), None, None);
            prop_assert!(r.ell_values.iter().all(|v| *v >= 0.0));
            prop_assert_eq!(r.ell_values.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        }

        #[test]
        fn three_term_formula_matches_direct(seed in 0u64..1000) {
            let rho = random_measure(seed, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let pts: Vec<Vec<f64>> = rho.points().iter()
                .map(|p| p.iter().map(|c| c + 0.2 * (rng.gen::<f64>() - 0.5)).collect()).collect();
            let w: Vec<f64> = rho.weights().iter().map(|w| w * (0.8 + 0.4 * rng.gen::<f64>())).collect();
            let tilde = DiscreteMeasure::new(rho.manifold().clone(), pts, w).unwrap();
            let direct = action(&tilde, &gauss()) - action(&rho, &gauss());
            let split = action_difference(&rho, &tilde, &gauss()).unwrap();
            // direct subtraction loses ~eps*S, so near-cancelling pairs are judged against 1e-4*S
            let floor = 1e-4 * action(&rho, &gauss());
            prop_assert!((direct - split).abs() <= 1e-12 * direct.abs().max(floor), "{} {}", direct, split);
        }
    }
}

//! Projected-gradient minimization of the action under the volume constraint.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::action::{action, action_change, action_gradient, el_report};
use crate::error::{invalid, Error, Result};
use crate::lagrangian::LagrangianModel;
use crate::measure::DiscreteMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub step_size_initial: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_factor: f64,
    pub tolerance_weak_el: f64,
    /// Absolute lower bound for weights; `None` means `1e-8` of the mean weight.
    pub weight_floor: Option<f64>,
    /// Record every `trace_period`-th iteration (the last one is always kept).
    pub trace_period: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 20_000,
            step_size_initial: 0.1,
            armijo_factor: 1e-4,
            tolerance_weak_el: 1e-10,
            weight_floor: None,
            trace_period: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size_initial > 0.0) {
            return Err(invalid("optimizer.step_size_initial", "must be positive"));
        }
        if !(self.armijo_factor > 0.0 && self.armijo_factor < 1.0) {
            return Err(invalid("optimizer.armijo_factor", "must lie in (0, 1)"));
        }
        if !(self.tolerance_weak_el > 0.0) {
            return Err(invalid("optimizer.tolerance_weak_el", "must be positive"));
        }
        if let Some(f) = self.weight_floor {
            if !(f >= 0.0) {
                return Err(invalid("optimizer.weight_floor", "must be non-negative"));
            }
        }
        if self.trace_period == 0 {
            return Err(invalid("optimizer.trace_period", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Initial action plus the accumulated accurate per-step changes (volume
    /// round-off drift excluded).
    pub action: f64,
    pub weak_residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub rows: Vec<TraceRow>,
}

impl OptimizerTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "action", "residual", "step"])?;
        for r in &self.rows {
            w.write_record([
                r.iteration.to_string(),
                r.action.to_string(),
                r.weak_residual.to_string(),
                r.step.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimization {
    pub measure: DiscreteMeasure,
    pub trace: OptimizerTrace,
    pub iterations: usize,
    pub converged: bool,
    pub weak_residual: f64,
    /// Indices of points whose weight sits on the floor.
    pub floored_points: Vec<usize>,
}

/// Euclidean projection onto `{w : w_i >= floor, sum w_i = target}`.
pub fn project_volume(weights: &[f64], target_volume: f64, floor: f64) -> Result<Vec<f64>> {
    if !(target_volume > 0.0) {
        return Err(invalid("target_volume", "must be positive"));
    }
    let n = weights.len();
    if floor * n as f64 > target_volume {
        return Err(Error::InfeasibleProjection {
            count: n,
            floor,
            target: target_volume,
        });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().all(|w| *w >= floor) && sum == target_volume {
        return Ok(weights.to_vec());
    }
    // shift to the standard simplex of mass `target - n * floor`
    let mass = target_volume - floor * n as f64;
    let shifted: Vec<f64> = weights.iter().map(|w| w - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        cumulative += v;
        let candidate = (cumulative - mass) / (k + 1) as f64;
        if v - candidate > 0.0 {
            theta = candidate;
        }
    }
    Ok(shifted
        .iter()
        .map(|v| (v - theta).max(0.0) + floor)
        .collect())
}

pub fn minimize(
    rho0: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    config: &OptimizerConfig,
) -> Result<Minimization> {
    config.validate()?;
    let n = rho0.len();
    let target = rho0.total_volume();
    let floor = config.weight_floor.unwrap_or(1e-8 * target / n as f64);
    let manifold = rho0.manifold().clone();

    let mut current = rho0.clone();
    let mut s = action(&current, lagrangian);
    let mut tracked = s;
    let mut step = config.step_size_initial;
    let mut trace = OptimizerTrace::default();
    let mut converged = false;
    let mut iteration = 0;
    let mut residual;

    loop {
        residual = el_report(&current, lagrangian, None, None).weak_residual;
        if !s.is_finite() || !residual.is_finite() {
            return Err(non_finite("action", iteration, &current));
        }
        let record = iteration % config.trace_period == 0;
        if residual <= config.tolerance_weak_el {
            converged = true;
        }
        if record || converged || iteration == config.max_iterations {
            trace.rows.push(TraceRow {
                iteration,
                action: tracked,
                weak_residual: residual,
                step,
            });
        }
        if converged || iteration == config.max_iterations {
            break;
        }

        let (grad_x, grad_w) = action_gradient(&current, lagrangian);
        if grad_x
            .iter()
            .flatten()
            .chain(grad_w.iter())
            .any(|g| !g.is_finite())
        {
            return Err(non_finite("gradient", iteration, &current));
        }

        // multiplier of the volume constraint; subtracting lambda * sum(dw) removes
        // the round-off drift of the projected volume from the descent test
        let lambda = grad_w
            .iter()
            .zip(current.weights())
            .map(|(g, w)| g * w)
            .sum::<f64>()
            / target;
        let mut accepted = None;
        let mut alpha = step;
        while alpha > 1e-16 * config.step_size_initial {
            let steps: Vec<Vec<f64>> = grad_x
                .iter()
                .map(|g| g.iter().map(|v| -alpha * v).collect())
                .collect();
            let trial: Vec<f64> = current
                .weights()
                .iter()
                .zip(&grad_w)
                .map(|(w, g)| w - alpha * g)
                .collect();
            let weights = project_volume(&trial, target, floor)?;
            let predicted: f64 = grad_x
                .iter()
                .zip(&steps)
                .flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b))
                .sum::<f64>()
                + grad_w
                    .iter()
                    .zip(weights.iter().zip(current.weights()))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum::<f64>();
            let volume_drift: f64 = weights
                .iter()
                .zip(current.weights())
                .map(|(a, b)| a - b)
                .sum();
            let predicted = predicted - lambda * volume_drift;
            let change =
                action_change(&current, lagrangian, &steps, &weights)? - lambda * volume_drift;
            if change <= config.armijo_factor * predicted && change <= 0.0 {
                accepted = Some((steps, weights, change));
                break;
            }
            alpha *= 0.5;
        }
        let Some((steps, weights, change)) = accepted else {
            // no representable descent left
            break;
        };
        let points = current
            .points()
            .iter()
            .zip(&steps)
            .map(|(p, d)| manifold.translate(p, d))
            .collect();
        current = DiscreteMeasure::new(manifold.clone(), points, weights)?;
        s = action(&current, lagrangian);
        tracked += change;
        step = (2.0 * alpha).min(1e3 * config.step_size_initial);
        iteration += 1;
    }

    let floored_points = current
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w <= floor * (1.0 + 1e-12))
        .map(|(i, _)| i)
        .collect();
    Ok(Minimization {
        measure: current,
        trace,
        iterations: iteration,
        converged,
        weak_residual: residual,
        floored_points,
    })
}

fn non_finite(quantity: &'static str, iteration: usize, rho: &DiscreteMeasure) -> Error {
    let mut iterate: Vec<f64> = rho.points().iter().flatten().copied().collect();
    iterate.extend_from_slice(rho.weights());
    Error::NonFinite {
        quantity,
        iteration,
        iterate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::ChartManifold;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(
            project_volume(&[1.0, 2.0, 3.0], 6.0, 0.0).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        let p = project_volume(&[2.0, 0.0], 2.0, 0.1).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-15 && (p[1] - 0.1).abs() < 1e-15);
        assert_eq!(
            project_volume(&[1.0, 1.0, 1.0], 6.0, 0.0).unwrap(),
            vec![2.0, 2.0, 2.0]
        );
        assert!(matches!(
            project_volume(&[1.0, 1.0], 1.0, 0.6),
            Err(Error::InfeasibleProjection { .. })
        ));
    }

    #[test]
    fn single_point_is_a_fixed_point() {
        let rho =
            DiscreteMeasure::single(ChartManifold::euclidean(2).unwrap(), vec![0.5, -1.0], 3.0)
                .unwrap();
        let out = minimize(
            &rho,
            &LagrangianModel::Gaussian { width: 1.0 },
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
        assert_eq!(out.measure, rho);
    }

    #[test]
    fn config_validation() {
        let cfg = OptimizerConfig {
            armijo_factor: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn non_finite_start_is_reported() {
        let lag = LagrangianModel::InversePower {
            width: 1e-300,
            exponent: 400.0,
        };
        let rho = DiscreteMeasure::new(
            ChartManifold::euclidean(1).unwrap(),
            vec![vec![0.0], vec![1e-300]],
            vec![1.0, 1.0],
        )
        .unwrap();
        match minimize(&rho, &lag, &OptimizerConfig::default()) {
            Err(Error::NonFinite {
                iteration: 0,
                iterate,
                ..
            }) => assert_eq!(iterate.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn restart_from_minimizer_is_stationary() {
        let lag = LagrangianModel::Gaussian { width: 1.0 };
        let rho = DiscreteMeasure::random(
            ChartManifold::torus(vec![std::f64::consts::TAU]).unwrap(),
            5,
            5.0,
            1.0,
            3,
        )
        .unwrap();
        let cfg = OptimizerConfig::default();
        let first = minimize(&rho, &lag, &cfg).unwrap();
        assert!(first.converged);
        let second = minimize(&first.measure, &lag, &cfg).unwrap();
        let a = action(&first.measure, &lag);
        let b = action(&second.measure, &lag);
        assert!((a - b).abs() <= 1e-12 * a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn iterates_keep_volume_and_descend(seed in 0u64..500) {
            let lag = LagrangianModel::Gaussian { width: 0.8 };
            let rho = DiscreteMeasure::random(ChartManifold::euclidean(2).unwrap(), 4, 3.0, 1.0, seed).unwrap();
            let cfg = OptimizerConfig { max_iterations: 200, tolerance_weak_el: 1e-8, ..Default::default() };
            let out = minimize(&rho, &lag, &cfg).unwrap();
            prop_assert!((out.measure.total_volume() - 3.0).abs() <= 1e-12 * 3.0);
            for pair in out.trace.rows.windows(2) {
                prop_assert!(pair[1].action <= pair[0].action);
            }
            if out.converged {
                let r = el_report(&out.measure, &lag, None, None);
                prop_assert!(r.strong_residual <= r.weak_residual && r.weak_residual <= cfg.tolerance_weak_el);
            }
        }

        #[test]
        fn projection_is_feasible_and_idempotent(w in prop::collection::vec(-2.0f64..3.0, 1..8), target in 0.5f64..5.0) {
            let floor = 0.01;
            prop_assume!(floor * w.len() as f64 <= target);
            let p = project_volume(&w, target, floor).unwrap();
            prop_assert!(p.iter().all(|v| *v >= floor));
            prop_assert!((p.iter().sum::<f64>() - target).abs() <= 1e-12 * target);
            let q = project_volume(&p, target, floor).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

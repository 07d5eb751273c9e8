//! Single-chart manifolds: flat space and flat tori.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A point in chart coordinates.
pub type Point = Vec<f64>;

/// Chart manifold carrying the discrete measures.
///
/// Torus coordinates are kept in `[0, period)`; displacements are reduced to
/// the representative in `(-period/2, period/2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChartManifold {
    Euclidean { dim: usize },
    Torus { dim: usize, periods: Vec<f64> },
}

impl ChartManifold {
    pub fn euclidean(dim: usize) -> Result<Self> {
        let m = ChartManifold::Euclidean { dim };
        m.validate()?;
        Ok(m)
    }

    pub fn torus(periods: Vec<f64>) -> Result<Self> {
        let m = ChartManifold::Torus {
            dim: periods.len(),
            periods,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChartManifold::Euclidean { dim } => {
                if *dim == 0 {
                    return Err(invalid("manifold.dim", "must be at least 1"));
                }
            }
            ChartManifold::Torus { dim, periods } => {
                if *dim == 0 {
                    return Err(invalid("manifold.dim", "must be at least 1"));
                }
                if periods.len() != *dim {
                    return Err(invalid(
                        "manifold.periods",
                        format!("expected {dim} periods, got {}", periods.len()),
                    ));
                }
                if periods.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(invalid(
                        "manifold.periods",
                        "periods must be finite and positive",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ChartManifold::Euclidean { dim } | ChartManifold::Torus { dim, .. } => *dim,
        }
    }

    pub fn periods(&self) -> Option<&[f64]> {
        match self {
            ChartManifold::Torus { periods, .. } => Some(periods),
            ChartManifold::Euclidean { .. } => None,
        }
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `x - y`, reduced on the torus.
    pub fn displacement(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(y)?;
        let mut out = vec![0.0; x.len()];
        self.displacement_into(x, y, &mut out);
        Ok(out)
    }

    /// Unchecked variant used on hot paths; lengths must agree.
    pub(crate) fn displacement_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            ChartManifold::Euclidean { .. } => {
                for k in 0..out.len() {
                    out[k] = x[k] - y[k];
                }
            }
            ChartManifold::Torus { periods, .. } => {
                for k in 0..out.len() {
                    out[k] = reduce(x[k] - y[k], periods[k]);
                }
            }
        }
    }

    pub(crate) fn squared_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        match self {
            ChartManifold::Euclidean { .. } => {
                for k in 0..x.len() {
                    let d = x[k] - y[k];
                    acc += d * d;
                }
            }
            ChartManifold::Torus { periods, .. } => {
                for k in 0..x.len() {
                    let d = reduce(x[k] - y[k], periods[k]);
                    acc += d * d;
                }
            }
        }
        acc
    }

    /// Moves `x` by `step` (straight line in the chart), wrapping torus coordinates.
    pub fn translate(&self, x: &[f64], step: &[f64]) -> Point {
        let mut out: Point = x.iter().zip(step).map(|(a, b)| a + b).collect();
        self.wrap(&mut out);
        out
    }

    pub fn wrap(&self, x: &mut [f64]) {
        if let ChartManifold::Torus { periods, .. } = self {
            for (c, p) in x.iter_mut().zip(periods) {
                *c = c.rem_euclid(*p);
                // rem_euclid can round up to the period itself
                if *c >= *p {
                    *c = 0.0;
                }
            }
        }
    }

    /// Uniform sample on the torus, or in the given box on flat space.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, lo: &[f64], hi: &[f64]) -> Point {
        match self {
            ChartManifold::Torus { periods, .. } => {
                periods.iter().map(|p| rng.gen::<f64>() * p).collect()
            }
            ChartManifold::Euclidean { dim } => (0..*dim)
                .map(|k| lo[k] + rng.gen::<f64>() * (hi[k] - lo[k]))
                .collect(),
        }
    }
}

fn reduce(d: f64, period: f64) -> f64 {
    let half = 0.5 * period;
    let mut r = d - period * (d / period).round();
    if r <= -half {
        r += period;
    } else if r > half {
        r -= period;
    }
    r
}

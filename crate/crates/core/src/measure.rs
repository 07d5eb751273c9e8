//! Weighted point measures on a chart manifold.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ChartManifold, Point};

/// A finite sum of weighted Dirac masses. Its support plays the role of space-time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct DiscreteMeasure {
    manifold: ChartManifold,
    points: Vec<Point>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    manifold: ChartManifold,
    points: Vec<Point>,
    weights: Vec<f64>,
}

impl TryFrom<RawMeasure> for DiscreteMeasure {
    type Error = Error;
    fn try_from(raw: RawMeasure) -> Result<Self> {
        DiscreteMeasure::new(raw.manifold, raw.points, raw.weights)
    }
}

impl From<DiscreteMeasure> for RawMeasure {
    fn from(m: DiscreteMeasure) -> Self {
        RawMeasure {
            manifold: m.manifold,
            points: m.points,
            weights: m.weights,
        }
    }
}

impl DiscreteMeasure {
    pub fn new(manifold: ChartManifold, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        manifold.validate()?;
        if points.is_empty() {
            return Err(Error::InvalidMeasure(
                "at least one point is required".into(),
            ));
        }
        if points.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        for (i, p) in points.iter().enumerate() {
            manifold.check_point(p)?;
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weight {i} = {} is not positive; remove the point instead",
                weights[i]
            )));
        }
        Ok(DiscreteMeasure {
            manifold,
            points,
            weights,
        })
    }

    pub fn single(manifold: ChartManifold, point: Point, weight: f64) -> Result<Self> {
        Self::new(manifold, vec![point], vec![weight])
    }

    /// Equally spaced points on a one-dimensional torus, equal weights.
    pub fn equispaced_ring(period: f64, count: usize, total_volume: f64) -> Result<Self> {
        let manifold = ChartManifold::torus(vec![period])?;
        let points = (0..count)
            .map(|i| vec![period * i as f64 / count as f64])
            .collect();
        let weights = vec![total_volume / count as f64; count];
        Self::new(manifold, points, weights)
    }

    /// Uniformly random points (torus, or the box `[-half_width, half_width]^m`)
    /// with random weights rescaled to `total_volume`.
    pub fn random(
        manifold: ChartManifold,
        count: usize,
        total_volume: f64,
        half_width: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = manifold.dim();
        let lo = vec![-half_width; m];
        let hi = vec![half_width; m];
        let points: Vec<Point> = (0..count)
            .map(|_| manifold.sample_uniform(&mut rng, &lo, &hi))
            .collect();
        let raw: Vec<f64> = (0..count).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w * total_volume / sum).collect();
        Self::new(manifold, points, weights)
    }

    pub fn manifold(&self) -> &ChartManifold {
        &self.manifold
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn total_volume(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.manifold.clone(), self.points.clone(), weights)
    }

    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        Self::new(self.manifold.clone(), points, self.weights.clone())
    }

    /// Same measure with the points listed in the given order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        Self::new(
            self.manifold.clone(),
            order.iter().map(|&i| self.points[i].clone()).collect(),
            order.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_weight_and_empty() {
        let m = ChartManifold::euclidean(1).unwrap();
        assert!(DiscreteMeasure::new(m.clone(), vec![vec![0.0]], vec![0.0]).is_err());
        assert!(DiscreteMeasure::new(m.clone(), vec![], vec![]).is_err());
        assert!(DiscreteMeasure::new(m.clone(), vec![vec![0.0, 1.0]], vec![1.0]).is_err());
        assert!(DiscreteMeasure::new(m, vec![vec![f64::NAN]], vec![1.0]).is_err());
    }

    #[test]
    fn json_validates_on_load() {
        let ok = r#"{"manifold":{"kind":"euclidean","dim":1},"points":[[0.0],[1.0]],"weights":[1.0,2.0]}"#;
        let m: DiscreteMeasure = serde_json::from_str(ok).unwrap();
        assert_eq!(m.total_volume(), 3.0);
        let bad = r#"{"manifold":{"kind":"euclidean","dim":1},"points":[[0.0]],"weights":[-1.0]}"#;
        assert!(serde_json::from_str::<DiscreteMeasure>(bad).is_err());
    }

    #[test]
    fn random_measure_has_requested_volume() {
        let m = ChartManifold::torus(vec![6.0]).unwrap();
        let rho = DiscreteMeasure::random(m, 7, 5.0, 1.0, 3).unwrap();
        assert!((rho.total_volume() - 5.0).abs() < 1e-12);
        assert!(rho.points().iter().all(|p| (0.0..6.0).contains(&p[0])));
    }
}

//! Linearized field equations for a jet field and the surface layer integral.
//!
//! For a jet field `v = (b, v)` the bracket at `x` is
//! `sum_j w_j (nabla_(1,v) + nabla_(2,v)) L(x, x_j) - b(x) nu / 2`.
//! A solution makes the bracket and its chart gradient (with `v` held fixed)
//! vanish at every support point, so the discrete solution space is the kernel
//! of a square matrix in the point-major jet layout.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jets::{max_abs_entry, nabla1_nabla2_l, write_matrix_csv, JetField};
use crate::lagrangian::LagrangianModel;
use crate::measure::DiscreteMeasure;

/// Default relative singular-value threshold for approximate kernels.
pub const DEFAULT_SIGMA_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedOperator {
    matrix: DMatrix<f64>,
    dim: usize,
}

impl LinearizedOperator {
    pub fn from_matrix(matrix: DMatrix<f64>, dim: usize) -> Result<Self> {
        let b = 1 + dim;
        if matrix.nrows() != matrix.ncols() || !matrix.nrows().is_multiple_of(b) {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows() - matrix.nrows() % b,
                got: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearAlgebra(
                "operator has non-finite entries".into(),
            ));
        }
        Ok(LinearizedOperator { matrix, dim })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn points(&self) -> usize {
        self.matrix.nrows() / (1 + self.dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        max_abs_entry(&self.matrix)
    }

    pub fn apply(&self, v: &JetField) -> Result<Vec<f64>> {
        if v.len() != self.points() {
            return Err(Error::LengthMismatch {
                expected: self.points(),
                got: v.len(),
            });
        }
        if let Some(j) = v.jets.iter().find(|j| j.u.len() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: j.u.len(),
            });
        }
        Ok((&self.matrix * DVector::from_vec(v.to_flat()))
            .iter()
            .copied()
            .collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.matrix, out)
    }
}

pub fn assemble_linfield(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
) -> LinearizedOperator {
    let n = rho.len();
    let m = rho.dim();
    let b = 1 + m;
    let w = rho.weights();
    let pts = rho.points();
    let manifold = rho.manifold();
    let mut a = DMatrix::zeros(n * b, n * b);
    for i in 0..n {
        a[(i * b, i * b)] -= 0.5 * nu;
        for j in 0..n {
            let p = lagrangian.pair(manifold, &pts[i], &pts[j]);
            let g1 = p.grad1();
            let h11 = p.hess11_matrix();
            // bracket row
            a[(i * b, i * b)] += w[j] * p.value;
            a[(i * b, j * b)] += w[j] * p.value;
            for c in 0..m {
                a[(i * b, i * b + 1 + c)] += w[j] * g1[c];
                a[(i * b, j * b + 1 + c)] -= w[j] * g1[c];
            }
            // gradient rows; hess12 = -hess11
            for c in 0..m {
                let r = i * b + 1 + c;
                a[(r, i * b)] += w[j] * g1[c];
                a[(r, j * b)] += w[j] * g1[c];
                for e in 0..m {
                    a[(r, i * b + 1 + e)] += w[j] * h11[(c, e)];
                    a[(r, j * b + 1 + e)] -= w[j] * h11[(c, e)];
                }
            }
        }
    }
    LinearizedOperator { matrix: a, dim: m }
}

/// Max-norm of the operator applied to `v`.
pub fn linfield_residual(op: &LinearizedOperator, v: &JetField) -> Result<f64> {
    Ok(op.apply(v)?.iter().fold(0.0, |acc, x| acc.max(x.abs())))
}

/// Orthonormal basis of right-singular vectors with `sigma <= threshold * sigma_max`.
pub fn solve_linfield(op: &LinearizedOperator, sigma_threshold_rel: f64) -> Result<Vec<JetField>> {
    if !(0.0..1.0).contains(&sigma_threshold_rel) {
        return Err(crate::error::invalid(
            "sigma_threshold_rel",
            "must lie in [0, 1)",
        ));
    }
    let d = op.matrix.nrows();
    let svd = op
        .matrix
        .clone()
        .try_svd(false, true, 1e-15, 10_000)
        .ok_or_else(|| {
            Error::LinearAlgebra("singular value decomposition did not converge".into())
        })?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::LinearAlgebra("right singular vectors missing".into()))?;
    let sigma_max = svd.singular_values.iter().fold(0.0, |a: f64, s| a.max(*s));
    let cut = sigma_threshold_rel * sigma_max;
    Ok((0..d)
        .filter(|k| svd.singular_values[*k] <= cut)
        .map(|k| JetField::from_flat(&v_t.row(k).iter().copied().collect::<Vec<_>>(), op.dim))
        .collect())
}

/// Distance of `v` from the span of an orthonormal basis, relative to `|v|`.
pub fn span_residual(basis: &[JetField], v: &JetField) -> f64 {
    let target = DVector::from_vec(v.to_flat());
    let norm = target.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let mut rest = target.clone();
    for b in basis {
        let e = DVector::from_vec(b.to_flat());
        rest -= &e * e.dot(&target);
    }
    rest.norm() / norm
}

/// A subset of support indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    n: usize,
    indices: Vec<usize>,
}

impl RegionMask {
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        Ok(RegionMask { n, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn complement(&self) -> RegionMask {
        RegionMask {
            n: self.n,
            indices: (0..self.n).filter(|i| !self.contains(*i)).collect(),
        }
    }

    pub fn all(n: usize) -> RegionMask {
        RegionMask {
            n,
            indices: (0..n).collect(),
        }
    }
}

/// `sum_(i in a) sum_(j in b) w_i w_j nabla1 nabla2 L(v_i, v_j)`
pub fn region_double_sum(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    v: &JetField,
    a: &[usize],
    b: &[usize],
) -> Result<f64> {
    v.check(rho)?;
    let pts = rho.points();
    let w = rho.weights();
    let m = rho.manifold();
    let mut total = 0.0;
    for &i in a {
        let mut row = 0.0;
        for &j in b {
            row += w[j] * nabla1_nabla2_l(lagrangian, m, &pts[i], &pts[j], &v.jets[i], &v.jets[j]);
        }
        total += w[i] * row;
    }
    Ok(total)
}

fn check_mask(rho: &DiscreteMeasure, omega: &RegionMask) -> Result<()> {
    if omega.n != rho.len() {
        return Err(Error::LengthMismatch {
            expected: rho.len(),
            got: omega.n,
        });
    }
    Ok(())
}

/// `-sum_(i in omega) sum_(j not in omega) w_i w_j nabla1 nabla2 L(v_i, v_j)`
pub fn surface_layer_integral(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    v: &JetField,
    omega: &RegionMask,
) -> Result<f64> {
    check_mask(rho, omega)?;
    Ok(-region_double_sum(
        rho,
        lagrangian,
        v,
        omega.indices(),
        omega.complement().indices(),
    )?)
}

/// `sum_ij |w_i w_j nabla1 nabla2 L(v_i, v_j)|`, a bound on every surface layer value.
pub fn osi_scale(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, v: &JetField) -> Result<f64> {
    v.check(rho)?;
    let pts = rho.points();
    let w = rho.weights();
    let mut total = 0.0;
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            total += (w[i]
                * w[j]
                * nabla1_nabla2_l(
                    lagrangian,
                    rho.manifold(),
                    &pts[i],
                    &pts[j],
                    &v.jets[i],
                    &v.jets[j],
                ))
            .abs();
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaFamily {
    /// All proper contiguous arcs of points ordered by their first coordinate.
    Arcs,
    RandomSubsets {
        count: usize,
        seed: u64,
    },
    Explicit {
        regions: Vec<Vec<usize>>,
    },
}

impl OmegaFamily {
    /// Arcs in one dimension, seeded random subsets otherwise.
    pub fn default_for(rho: &DiscreteMeasure, seed: u64) -> Self {
        if rho.dim() == 1 {
            OmegaFamily::Arcs
        } else {
            OmegaFamily::RandomSubsets { count: 64, seed }
        }
    }

    pub fn regions(&self, rho: &DiscreteMeasure) -> Result<Vec<RegionMask>> {
        let n = rho.len();
        match self {
            OmegaFamily::Arcs => {
                let mut order: Vec<usize> = (0..n).collect();
                let key = |i: usize| {
                    let x = rho.points()[i][0];
                    rho.manifold().periods().map_or(x, |p| x.rem_euclid(p[0]))
                };
                order.sort_by(|a, b| key(*a).total_cmp(&key(*b)));
                let mut out = Vec::new();
                for start in 0..n {
                    for len in 1..n {
                        out.push(RegionMask::new(
                            n,
                            (0..len).map(|k| order[(start + k) % n]).collect(),
                        )?);
                    }
                }
                Ok(out)
            }
            OmegaFamily::RandomSubsets { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..*count)
                    .map(|_| {
                        let size = if n > 1 { rng.gen_range(1..n) } else { 1 };
                        RegionMask::new(n, sample(&mut rng, n, size).into_vec())
                    })
                    .collect()
            }
            OmegaFamily::Explicit { regions } => regions
                .iter()
                .map(|r| RegionMask::new(n, r.clone()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsiEntry {
    pub omega: Vec<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsiReport {
    pub entries: Vec<OsiEntry>,
    pub min_value: f64,
    pub argmin: Option<Vec<usize>>,
    pub scale: f64,
    /// `|A v|_max / (|A|_max |v|_max)`
    pub relative_residual: f64,
    /// The jet solves the linearized equations within `hypothesis_tol`.
    pub hypothesis_met: bool,
    pub hypothesis_tol: f64,
    /// Region with value below `-positivity_tol * scale`, reported only when
    /// the hypothesis holds.
    pub violating: Option<Vec<usize>>,
    pub positivity_tol: f64,
}

impl OsiReport {
    /// `Some(true)` when the hypothesis holds and no region violates positivity.
    pub fn verdict(&self) -> Option<bool> {
        self.hypothesis_met.then_some(self.violating.is_none())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["omega", "value"])?;
        for e in &self.entries {
            let omega: Vec<String> = e.omega.iter().map(|i| i.to_string()).collect();
            w.write_record([omega.join(" "), e.value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OsiTolerances {
    pub hypothesis: f64,
    pub positivity: f64,
}

impl Default for OsiTolerances {
    fn default() -> Self {
        OsiTolerances {
            hypothesis: 1e-8,
            positivity: 1e-8,
        }
    }
}

pub fn osi_report(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    v: &JetField,
    family: &OmegaFamily,
    tol: OsiTolerances,
) -> Result<OsiReport> {
    let op = assemble_linfield(rho, lagrangian, nu);
    let denom = op.scale() * v.max_abs();
    let residual = linfield_residual(&op, v)?;
    let relative_residual = if residual == 0.0 {
        0.0
    } else {
        residual / denom
    };
    let scale = osi_scale(rho, lagrangian, v)?;
    let mut entries = Vec::new();
    for omega in family.regions(rho)? {
        let value = surface_layer_integral(rho, lagrangian, v, &omega)?;
        entries.push(OsiEntry {
            omega: omega.indices().to_vec(),
            value,
        });
    }
    let best = entries.iter().min_by(|a, b| a.value.total_cmp(&b.value));
    let min_value = best.map_or(0.0, |e| e.value);
    let argmin = best.map(|e| e.omega.clone());
    let hypothesis_met = relative_residual <= tol.hypothesis;
    let violating = if hypothesis_met && min_value < -tol.positivity * scale {
        argmin.clone()
    } else {
        None
    };
    Ok(OsiReport {
        entries,
        min_value,
        argmin,
        scale,
        relative_residual,
        hypothesis_met,
        hypothesis_tol: tol.hypothesis,
        violating,
        positivity_tol: tol.positivity,
    })
}

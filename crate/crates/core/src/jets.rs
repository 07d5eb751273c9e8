//! Discrete jets and the quadratic forms built from them.
//!
//! A jet at a support point is a pair `(a, u)` of a scalar and a chart vector;
//! `nabla_(a,u) g = a g + D_u g`. The canonical basis of the discrete jet space
//! consists of per-point unit jets, flattened point-major as
//! `index = i * (1 + m) + c` with `c = 0` the scalar slot.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{ell, ell_gradient, ell_hessian};
use crate::error::{Error, Result};
use crate::lagrangian::{dot, LagrangianModel};
use crate::manifold::ChartManifold;
use crate::measure::DiscreteMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jet {
    pub a: f64,
    pub u: Vec<f64>,
}

impl Jet {
    pub fn zero(dim: usize) -> Self {
        Jet {
            a: 0.0,
            u: vec![0.0; dim],
        }
    }

    pub fn scalar(a: f64, dim: usize) -> Self {
        Jet {
            a,
            u: vec![0.0; dim],
        }
    }

    pub fn vector(u: Vec<f64>) -> Self {
        Jet { a: 0.0, u }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Jet {
            a: s * self.a,
            u: self.u.iter().map(|v| s * v).collect(),
        }
    }

    /// `|a| + |u|_1`
    pub fn l1_norm(&self) -> f64 {
        self.a.abs() + self.u.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn norm_squared(&self) -> f64 {
        self.a * self.a + dot(&self.u, &self.u)
    }
}

/// One jet per support point of a fixed measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JetField {
    pub jets: Vec<Jet>,
}

impl JetField {
    pub fn zeros(n: usize, dim: usize) -> Self {
        JetField {
            jets: vec![Jet::zero(dim); n],
        }
    }

    /// Constant chart translation along axis `axis`.
    pub fn translation(n: usize, dim: usize, axis: usize) -> Self {
        let mut u = vec![0.0; dim];
        u[axis] = 1.0;
        JetField {
            jets: vec![Jet::vector(u); n],
        }
    }

    pub fn scalar(values: &[f64], dim: usize) -> Self {
        JetField {
            jets: values.iter().map(|a| Jet::scalar(*a, dim)).collect(),
        }
    }

    /// Components uniform in `[-scale, scale]`.
    pub fn random(n: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::random_with(n, dim, scale, &mut rng)
    }

    pub fn random_with<R: Rng>(n: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut draw = || scale * (2.0 * rng.gen::<f64>() - 1.0);
        JetField {
            jets: (0..n)
                .map(|_| Jet {
                    a: draw(),
                    u: (0..dim).map(|_| draw()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_flat(flat: &[f64], dim: usize) -> Self {
        JetField {
            jets: flat
                .chunks(1 + dim)
                .map(|c| Jet {
                    a: c[0],
                    u: c[1..].to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.jets
            .iter()
            .flat_map(|j| std::iter::once(j.a).chain(j.u.iter().copied()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.jets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jets.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        JetField {
            jets: self.jets.iter().map(|j| j.scaled(s)).collect(),
        }
    }

    /// `alpha * self + beta * other`
    pub fn combine(&self, alpha: f64, other: &JetField, beta: f64) -> Self {
        JetField {
            jets: self
                .jets
                .iter()
                .zip(&other.jets)
                .map(|(x, y)| Jet {
                    a: alpha * x.a + beta * y.a,
                    u: x.u
                        .iter()
                        .zip(&y.u)
                        .map(|(p, q)| alpha * p + beta * q)
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn scalar_part(&self) -> Self {
        JetField {
            jets: self
                .jets
                .iter()
                .map(|j| Jet::scalar(j.a, j.u.len()))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn check(&self, rho: &DiscreteMeasure) -> Result<()> {
        if self.len() != rho.len() {
            return Err(Error::LengthMismatch {
                expected: rho.len(),
                got: self.len(),
            });
        }
        if let Some(j) = self.jets.iter().find(|j| j.u.len() != rho.dim()) {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                got: j.u.len(),
            });
        }
        Ok(())
    }
}

fn check_index(rho: &DiscreteMeasure, i: usize) -> Result<()> {
    if i >= rho.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: rho.len(),
        });
    }
    Ok(())
}

/// `nabla_jet l (x_i) = a l(x_i) + u . grad l(x_i)`
pub fn nabla_ell(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    i: usize,
    jet: &Jet,
) -> Result<f64> {
    check_index(rho, i)?;
    let x = &rho.points()[i];
    Ok(jet.a * ell(rho, lagrangian, nu, x) + dot(&jet.u, &ell_gradient(rho, lagrangian, x)))
}

/// Polarized `nabla^2 l|_(x_i)(jet1, jet2)`:
/// `a1 a2 l + a1 D_u2 l + a2 D_u1 l + D^2 l(u1, u2)`.
pub fn nabla2_ell_form(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    i: usize,
    jet1: &Jet,
    jet2: &Jet,
) -> Result<f64> {
    check_index(rho, i)?;
    let x = &rho.points()[i];
    let m = rho.manifold();
    let mut value = -0.5 * nu;
    let mut d_u1 = 0.0;
    let mut d_u2 = 0.0;
    let mut hess = 0.0;
    for (y, w) in rho.points().iter().zip(rho.weights()) {
        let p = lagrangian.pair(m, x, y);
        value += w * p.value;
        d_u1 += w * p.grad1_dot(&jet1.u);
        d_u2 += w * p.grad1_dot(&jet2.u);
        hess += w * p.hess11(&jet1.u, &jet2.u);
    }
    Ok(jet1.a * jet2.a * value + jet1.a * d_u2 + jet2.a * d_u1 + hess)
}

/// `nabla_(1,jet_x) nabla_(2,jet_y) L(x, y)`.
pub fn nabla1_nabla2_l(
    lagrangian: &LagrangianModel,
    manifold: &ChartManifold,
    x: &[f64],
    y: &[f64],
    jet_x: &Jet,
    jet_y: &Jet,
) -> f64 {
    let p = lagrangian.pair(manifold, x, y);
    jet_x.a * jet_y.a * p.value
        + jet_x.a * p.grad2_dot(&jet_y.u)
        + jet_y.a * p.grad1_dot(&jet_x.u)
        + p.hess12(&jet_x.u, &jet_y.u)
}

/// `sum_i w_i nabla^2 l|_(x_i)(jf1_i, jf2_i)`
pub fn q1(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jf1: &JetField,
    jf2: &JetField,
) -> Result<f64> {
    jf1.check(rho)?;
    jf2.check(rho)?;
    let mut total = 0.0;
    for (i, w) in rho.weights().iter().enumerate() {
        total += w * nabla2_ell_form(rho, lagrangian, nu, i, &jf1.jets[i], &jf2.jets[i])?;
    }
    Ok(total)
}

/// `sum_ij w_i w_j nabla_(1,jf1) nabla_(2,jf2) L(x_i, x_j)`
pub fn kernel_part(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    jf1: &JetField,
    jf2: &JetField,
) -> Result<f64> {
    jf1.check(rho)?;
    jf2.check(rho)?;
    let m = rho.manifold();
    let pts = rho.points();
    let w = rho.weights();
    let mut total = 0.0;
    for i in 0..pts.len() {
        let mut row = 0.0;
        for j in 0..pts.len() {
            row +=
                w[j] * nabla1_nabla2_l(lagrangian, m, &pts[i], &pts[j], &jf1.jets[i], &jf2.jets[j]);
        }
        total += w[i] * row;
    }
    Ok(total)
}

/// `<u, v> = kernel_part(u, v) + q1(u, v)`
pub fn sp1_inner(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jf1: &JetField,
    jf2: &JetField,
) -> Result<f64> {
    Ok(kernel_part(rho, lagrangian, jf1, jf2)? + q1(rho, lagrangian, nu, jf1, jf2)?)
}

/// `<<u, v>> = <u, v> + q1(u, v)`
pub fn sp2_inner(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    jf1: &JetField,
    jf2: &JetField,
) -> Result<f64> {
    Ok(sp1_inner(rho, lagrangian, nu, jf1, jf2)? + q1(rho, lagrangian, nu, jf1, jf2)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FormId {
    Q1,
    SP1,
    SP2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Full,
    ScalarOnly,
    VectorOnly,
}

impl Basis {
    /// Flat full-basis indices kept by this basis.
    pub fn indices(&self, n: usize, dim: usize) -> Vec<usize> {
        (0..n)
            .flat_map(|i| (0..=dim).map(move |c| (i, c)))
            .filter(|(_, c)| match self {
                Basis::Full => true,
                Basis::ScalarOnly => *c == 0,
                Basis::VectorOnly => *c > 0,
            })
            .map(|(i, c)| i * (1 + dim) + c)
            .collect()
    }
}

/// Largest Gram dimension assembled by default (`n = 64` points in three dimensions).
pub const DEFAULT_GRAM_CAP: usize = 256;

/// Full-basis matrices of the kernel part and of `q1` at a measure.
#[derive(Clone, Debug)]
pub struct FormMatrices {
    pub kernel: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub dim: usize,
}

impl FormMatrices {
    pub fn assemble(rho: &DiscreteMeasure, lagrangian: &LagrangianModel, nu: f64) -> Self {
        let n = rho.len();
        let m = rho.dim();
        let b = 1 + m;
        let d = n * b;
        let w = rho.weights();
        let pts = rho.points();
        let manifold = rho.manifold();
        let mut kernel = DMatrix::zeros(d, d);
        let mut q = DMatrix::zeros(d, d);
        for i in 0..n {
            for j in 0..n {
                let p = lagrangian.pair(manifold, &pts[i], &pts[j]);
                let ww = w[i] * w[j];
                let g1 = p.grad1();
                let h11 = p.hess11_matrix();
                kernel[(i * b, j * b)] = ww * p.value;
                for c in 0..m {
                    // scalar at x, vector at y: grad2 = -grad1
                    kernel[(i * b, j * b + 1 + c)] = -ww * g1[c];
                    kernel[(i * b + 1 + c, j * b)] = ww * g1[c];
                    for e in 0..m {
                        kernel[(i * b + 1 + c, j * b + 1 + e)] = -ww * h11[(c, e)];
                    }
                }
            }
            let x = &pts[i];
            let l = ell(rho, lagrangian, nu, x);
            let g = ell_gradient(rho, lagrangian, x);
            let h = ell_hessian(rho, lagrangian, x);
            q[(i * b, i * b)] = w[i] * l;
            for c in 0..m {
                q[(i * b, i * b + 1 + c)] = w[i] * g[c];
                q[(i * b + 1 + c, i * b)] = w[i] * g[c];
                for e in 0..m {
                    q[(i * b + 1 + c, i * b + 1 + e)] = w[i] * h[(c, e)];
                }
            }
        }
        FormMatrices {
            kernel,
            q1: q,
            dim: m,
        }
    }

    pub fn form(&self, id: FormId) -> DMatrix<f64> {
        match id {
            FormId::Q1 => self.q1.clone(),
            FormId::SP1 => &self.kernel + &self.q1,
            FormId::SP2 => &self.kernel + &self.q1 * 2.0,
        }
    }
}

/// Spectral summary of one form over one basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub form_id: FormId,
    pub basis: Basis,
    pub dimension: usize,
    pub matrix: Vec<Vec<f64>>,
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub scale: f64,
    pub tau_psd: f64,
    pub symmetry_defect: f64,
    /// `min_eigenvalue >= -tau_psd * scale`
    pub psd: bool,
    /// `min_eigenvalue > tau_psd * scale`
    pub strictly_positive: bool,
    /// Eigenvectors with eigenvalue below `tau_psd * scale` (in the chosen basis).
    pub near_null: Vec<Vec<f64>>,
}

impl GramReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dimension;
        DMatrix::from_fn(d, d, |r, c| self.matrix[r][c])
    }

    pub fn write_spectrum_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "eigenvalue"])?;
        for (k, v) in self.eigenvalues.iter().enumerate() {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrix_csv(&self.matrix(), out)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(matrix: &DMatrix<f64>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    for r in 0..matrix.nrows() {
        w.write_record((0..matrix.ncols()).map(|c| matrix[(r, c)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Largest absolute entry, the scale used by the PSD verdicts.
pub fn max_abs_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Ascending eigen-decomposition of a symmetric matrix.
pub(crate) fn sorted_eigen(matrix: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = matrix.nrows();
    let eig = SymmetricEigen::try_new(matrix, 1e-15, 10_000).ok_or_else(|| {
        Error::LinearAlgebra("symmetric eigen-decomposition did not converge".into())
    })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let values = order.iter().map(|k| eig.eigenvalues[*k]).collect();
    let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

pub fn gram_spectrum(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    form_id: FormId,
    basis: Basis,
    tau_psd: f64,
) -> Result<GramReport> {
    gram_spectrum_capped(
        rho,
        lagrangian,
        nu,
        form_id,
        basis,
        tau_psd,
        DEFAULT_GRAM_CAP,
    )
}

pub fn gram_spectrum_capped(
    rho: &DiscreteMeasure,
    lagrangian: &LagrangianModel,
    nu: f64,
    form_id: FormId,
    basis: Basis,
    tau_psd: f64,
    cap: usize,
) -> Result<GramReport> {
    let indices = basis.indices(rho.len(), rho.dim());
    if indices.is_empty() {
        return Err(Error::Precondition("empty jet basis".into()));
    }
    if indices.len() > cap {
        return Err(Error::Precondition(format!(
            "basis dimension {} exceeds cap {cap}",
            indices.len()
        )));
    }
    let full = FormMatrices::assemble(rho, lagrangian, nu).form(form_id);
    let d = indices.len();
    let matrix = DMatrix::from_fn(d, d, |r, c| full[(indices[r], indices[c])]);
    gram_report(form_id, basis, matrix, tau_psd)
}

pub(crate) fn gram_report(
    form_id: FormId,
    basis: Basis,
    matrix: DMatrix<f64>,
    tau_psd: f64,
) -> Result<GramReport> {
    let d = matrix.nrows();
    let scale = max_abs_entry(&matrix);
    let symmetry_defect = max_abs_entry(&(&matrix - matrix.transpose()));
    let symmetric = (&matrix + matrix.transpose()) * 0.5;
    let (eigenvalues, vectors) = sorted_eigen(symmetric)?;
    let min_eigenvalue = eigenvalues[0];
    let near_null = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < tau_psd * scale)
        .map(|(k, _)| vectors.column(k).iter().copied().collect())
        .collect();
    Ok(GramReport {
        form_id,
        basis,
        dimension: d,
        matrix: (0..d)
            .map(|r| (0..d).map(|c| matrix[(r, c)]).collect())
            .collect(),
        psd: min_eigenvalue >= -tau_psd * scale,
        strictly_positive: min_eigenvalue > tau_psd * scale,
        eigenvalues,
        min_eigenvalue,
        scale,
        tau_psd,
        symmetry_defect,
        near_null,
    })
}

/// Chart translations, the exact symmetries of every radial kernel.
pub fn translation_jets(rho: &DiscreteMeasure) -> Vec<JetField> {
    (0..rho.dim())
        .map(|k| JetField::translation(rho.len(), rho.dim(), k))
        .collect()
}

/// Smallest eigenvalue of `matrix` on the orthogonal complement of `excluded`
/// (full-basis coordinates).
pub fn min_eigenvalue_excluding(matrix: &DMatrix<f64>, excluded: &[JetField]) -> Result<f64> {
    let d = matrix.nrows();
    // orthonormal basis of the excluded span
    let mut span: Vec<DVector<f64>> = Vec::new();
    for jf in excluded {
        let mut v = DVector::from_vec(jf.to_flat());
        for s in &span {
            let c = s.dot(&v);
            v -= s * c;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            span.push(v / norm);
        }
    }
    if span.len() >= d {
        return Err(Error::Precondition(
            "excluded directions span the whole space".into(),
        ));
    }
    let mut projector = DMatrix::<f64>::identity(d, d);
    for s in &span {
        projector -= s * s.transpose();
    }
    let compressed = &projector * matrix * &projector;
    let compressed = (&compressed + compressed.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(compressed)?;
    // drop the eigenpairs that live in the excluded span
    let mut overlap: Vec<(usize, f64)> = (0..d)
        .map(|k| {
            let v = vectors.column(k);
            (k, span.iter().map(|s| s.dot(&v).powi(2)).sum::<f64>())
        })
        .collect();
    overlap.sort_by(|a, b| b.1.total_cmp(&a.1));
    let dropped: Vec<usize> = overlap.iter().take(span.len()).map(|(k, _)| *k).collect();
    Ok((0..d)
        .filter(|k| !dropped.contains(k))
        .map(|k| values[k])
        .fold(f64::INFINITY, f64::min))
}

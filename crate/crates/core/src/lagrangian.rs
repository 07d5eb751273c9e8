//! Radial Lagrangian kernels `L(x, y) = g(|x - y|^2)` and their derivatives.
//!
//! Every kernel is evaluated through the (torus-reduced) squared chart
//! distance only, so `L(x, y) == L(y, x)` holds bit for bit and chart
//! translations are exact symmetries.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::manifold::{ChartManifold, Point};

/// Kernel family with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "kebab-case")]
pub enum LagrangianModel {
    /// `exp(-d^2 / width^2)`
    Gaussian { width: f64 },
    /// `(1 + d^2 / width^2)^(-exponent)`
    InversePower { width: f64, exponent: f64 },
    /// `max(0, radius^2 - d^2)^power`, `power >= 3` so the kernel is C².
    CompactSupportPower { radius: f64, power: u32 },
}

/// Manifold and kernel descriptor, the JSON object shared by configs and state files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub manifold: ChartManifold,
    pub lagrangian: LagrangianModel,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.manifold.validate()?;
        self.lagrangian.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeOrder {
    Grad1,
    Grad2,
    Hess11,
    Hess12,
    /// Third derivatives are not provided; the families are only certified C².
    Third,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Derivative {
    Vector(Vec<f64>),
    Matrix(DMatrix<f64>),
}

/// Profile value and its first two derivatives in `t = d^2` for one pair,
/// together with the reduced displacement `z = x - y`.
///
/// With `L = g(|z|^2)`:
/// `grad1 = 2 g' z`, `grad2 = -grad1`,
/// `hess11 = 2 g' I + 4 g'' z z^T`, `hess12 = -hess11`.
#[derive(Clone, Debug)]
pub struct PairTerms {
    pub z: Vec<f64>,
    pub value: f64,
    pub dg: f64,
    pub d2g: f64,
}

impl PairTerms {
    pub fn grad1_dot(&self, u: &[f64]) -> f64 {
        2.0 * self.dg * dot(&self.z, u)
    }

    pub fn grad2_dot(&self, u: &[f64]) -> f64 {
        -self.grad1_dot(u)
    }

    pub fn hess11(&self, u: &[f64], v: &[f64]) -> f64 {
        2.0 * self.dg * dot(u, v) + 4.0 * self.d2g * dot(&self.z, u) * dot(&self.z, v)
    }

    pub fn hess12(&self, u: &[f64], v: &[f64]) -> f64 {
        -self.hess11(u, v)
    }

    pub fn grad1(&self) -> Vec<f64> {
        self.z.iter().map(|z| 2.0 * self.dg * z).collect()
    }

    pub fn hess11_matrix(&self) -> DMatrix<f64> {
        let m = self.z.len();
        DMatrix::from_fn(m, m, |a, b| {
            let diag = if a == b { 2.0 * self.dg } else { 0.0 };
            diag + 4.0 * self.d2g * self.z[a] * self.z[b]
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LagrangianModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(
                    field,
                    format!("must be finite and positive, got {v}"),
                ))
            }
        };
        match *self {
            LagrangianModel::Gaussian { width } => positive("lagrangian.params.width", width),
            LagrangianModel::InversePower { width, exponent } => {
                positive("lagrangian.params.width", width)?;
                positive("lagrangian.params.exponent", exponent)
            }
            LagrangianModel::CompactSupportPower { radius, power } => {
                positive("lagrangian.params.radius", radius)?;
                if power < 3 {
                    return Err(invalid(
                        "lagrangian.params.power",
                        "must be >= 3 for C² smoothness",
                    ));
                }
                Ok(())
            }
        }
    }

    /// `(g, g', g'')` at `t = d^2`.
    pub fn profile(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            LagrangianModel::Gaussian { width } => {
                let s2 = width * width;
                let g = (-t / s2).exp();
                (g, -g / s2, g / (s2 * s2))
            }
            LagrangianModel::InversePower { width, exponent: p } => {
                let s2 = width * width;
                let base = 1.0 + t / s2;
                let g = base.powf(-p);
                let dg = -p / s2 * g / base;
                let d2g = p * (p + 1.0) / (s2 * s2) * g / (base * base);
                (g, dg, d2g)
            }
            LagrangianModel::CompactSupportPower { radius, power } => {
                let s = radius * radius - t;
                if s <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let k = power as i32;
                let kf = power as f64;
                (
                    s.powi(k),
                    -kf * s.powi(k - 1),
                    kf * (kf - 1.0) * s.powi(k - 2),
                )
            }
        }
    }

    /// `g(t + dt) - g(t)` without cancellation for small `dt`.
    pub fn profile_delta(&self, t: f64, dt: f64) -> f64 {
        match *self {
            LagrangianModel::Gaussian { width } => {
                let s2 = width * width;
                (-t / s2).exp() * (-dt / s2).exp_m1()
            }
            LagrangianModel::InversePower { width, exponent: p } => {
                let s2 = width * width;
                let g = (1.0 + t / s2).powf(-p);
                g * (-p * (dt / (s2 + t)).ln_1p()).exp_m1()
            }
            LagrangianModel::CompactSupportPower { radius, power } => {
                let s = radius * radius - t;
                let s_new = s - dt;
                if s <= 0.0 || s_new <= 0.0 {
                    return self.profile(t + dt).0 - self.profile(t).0;
                }
                // s_new^k - s^k = (s_new - s) * sum_a s_new^a s^(k-1-a)
                let k = power as i32;
                let sum: f64 = (0..k).map(|a| s_new.powi(a) * s.powi(k - 1 - a)).sum();
                -dt * sum
            }
        }
    }

    /// Characteristic length of the kernel (width or cutoff radius).
    pub fn length_scale(&self) -> f64 {
        match *self {
            LagrangianModel::Gaussian { width } | LagrangianModel::InversePower { width, .. } => {
                width
            }
            LagrangianModel::CompactSupportPower { radius, .. } => radius,
        }
    }

    pub fn smoothness_note(&self) -> &'static str {
        match self {
            LagrangianModel::CompactSupportPower { .. } => "C2 at the cutoff seam, smooth inside",
            _ => "smooth",
        }
    }

    pub fn eval(&self, manifold: &ChartManifold, x: &[f64], y: &[f64]) -> f64 {
        self.profile(manifold.squared_distance(x, y)).0
    }

    pub fn pair(&self, manifold: &ChartManifold, x: &[f64], y: &[f64]) -> PairTerms {
        let mut z = vec![0.0; x.len()];
        manifold.displacement_into(x, y, &mut z);
        let t = dot(&z, &z);
        let (value, dg, d2g) = self.profile(t);
        PairTerms { z, value, dg, d2g }
    }

    pub fn derivative(
        &self,
        manifold: &ChartManifold,
        x: &[f64],
        y: &[f64],
        order: DerivativeOrder,
    ) -> Result<Derivative> {
        manifold.check_point(x)?;
        manifold.check_point(y)?;
        let p = self.pair(manifold, x, y);
        Ok(match order {
            DerivativeOrder::Grad1 => Derivative::Vector(p.grad1()),
            DerivativeOrder::Grad2 => Derivative::Vector(p.grad1().iter().map(|g| -g).collect()),
            DerivativeOrder::Hess11 => Derivative::Matrix(p.hess11_matrix()),
            DerivativeOrder::Hess12 => Derivative::Matrix(-p.hess11_matrix()),
            DerivativeOrder::Third => return Err(Error::UnsupportedOrder(order)),
        })
    }
}

/// Where `verify_lagrangian` draws its sample pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleRegion {
    /// `y` uniform on the torus, or in a box of half-width `2 * length_scale` on flat space.
    Uniform,
    /// `|x - y|` uniform in `[inner, outer]` (in units of `length_scale`).
    Shell { inner: f64, outer: f64 },
}

/// Finite-difference and symmetry audit of a kernel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LagrangianCheck {
    pub samples: usize,
    pub step: f64,
    pub max_symmetry_defect: f64,
    pub min_value: f64,
    pub grad1_rel_error: f64,
    pub hess11_rel_error: f64,
    pub hess12_rel_error: f64,
    pub smoothness: String,
}

impl LagrangianCheck {
    pub fn passes(&self, grad_tol: f64, hess_tol: f64) -> bool {
        self.max_symmetry_defect == 0.0
            && self.min_value >= 0.0
            && self.grad1_rel_error <= grad_tol
            && self.hess11_rel_error <= hess_tol
            && self.hess12_rel_error <= hess_tol
    }
}

pub fn verify_lagrangian(
    lagrangian: &LagrangianModel,
    manifold: &ChartManifold,
    sample_count: usize,
    step: f64,
    seed: u64,
    region: SampleRegion,
) -> Result<LagrangianCheck> {
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    let m = manifold.dim();
    let ell = lagrangian.length_scale();
    let g0 = lagrangian.profile(0.0).0;
    let grad_floor = g0 / ell;
    let hess_floor = g0 / (ell * ell);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = vec![-2.0 * ell; m];
    let hi = vec![2.0 * ell; m];

    let mut report = LagrangianCheck {
        samples: sample_count,
        step,
        max_symmetry_defect: 0.0,
        min_value: f64::INFINITY,
        grad1_rel_error: 0.0,
        hess11_rel_error: 0.0,
        hess12_rel_error: 0.0,
        smoothness: lagrangian.smoothness_note().to_string(),
    };

    for _ in 0..sample_count {
        let x = manifold.sample_uniform(&mut rng, &lo, &hi);
        let y: Point = match region {
            SampleRegion::Uniform => manifold.sample_uniform(&mut rng, &lo, &hi),
            SampleRegion::Shell { inner, outer } => {
                use rand::Rng;
                let dir: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() - 0.5).collect();
                let norm = dot(&dir, &dir).sqrt().max(1e-12);
                let r = ell * (inner + (outer - inner) * rng.gen::<f64>());
                let step_vec: Vec<f64> = dir.iter().map(|d| -d / norm * r).collect();
                manifold.translate(&x, &step_vec)
            }
        };
        let lxy = lagrangian.eval(manifold, &x, &y);
        let lyx = lagrangian.eval(manifold, &y, &x);
        report.max_symmetry_defect = report.max_symmetry_defect.max((lxy - lyx).abs());
        report.min_value = report.min_value.min(lxy);

        let p = lagrangian.pair(manifold, &x, &y);
        let grad = p.grad1();
        let hess = p.hess11_matrix();

        // centered differences in the first slot
        let mut fd_grad = vec![0.0; m];
        let mut fd_hess11 = DMatrix::zeros(m, m);
        let mut fd_hess12 = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut e = vec![0.0; m];
            e[k] = step;
            let neg: Vec<f64> = e.iter().map(|v| -v).collect();
            let xp = manifold.translate(&x, &e);
            let xm = manifold.translate(&x, &neg);
            let yp = manifold.translate(&y, &e);
            let ym = manifold.translate(&y, &neg);
            fd_grad[k] = (lagrangian.eval(manifold, &xp, &y) - lagrangian.eval(manifold, &xm, &y))
                / (2.0 * step);
            let gp = lagrangian.pair(manifold, &xp, &y).grad1();
            let gm = lagrangian.pair(manifold, &xm, &y).grad1();
            let gyp = lagrangian.pair(manifold, &x, &yp).grad1();
            let gym = lagrangian.pair(manifold, &x, &ym).grad1();
            for a in 0..m {
                fd_hess11[(a, k)] = (gp[a] - gm[a]) / (2.0 * step);
                fd_hess12[(a, k)] = (gyp[a] - gym[a]) / (2.0 * step);
            }
        }
        let grad_err =
            max_abs_diff(&grad, &fd_grad) / max_abs(&grad).max(max_abs(&fd_grad)).max(grad_floor);
        let h11 = hess.as_slice().to_vec();
        let h12: Vec<f64> = h11.iter().map(|v| -v).collect();
        let e11 = max_abs_diff(&h11, fd_hess11.as_slice())
            / max_abs(&h11)
                .max(max_abs(fd_hess11.as_slice()))
                .max(hess_floor);
        let e12 = max_abs_diff(&h12, fd_hess12.as_slice())
            / max_abs(&h12)
                .max(max_abs(fd_hess12.as_slice()))
                .max(hess_floor);
        report.grad1_rel_error = report.grad1_rel_error.max(grad_err);
        report.hess11_rel_error = report.hess11_rel_error.max(e11);
        report.hess12_rel_error = report.hess12_rel_error.max(e12);
    }
    Ok(report)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (x, y)| acc.max((x - y).abs()))
}

//! Gaussian approximation of the latent field at fixed hyperparameters and
//! the Laplace approximation of the hyperparameter marginal.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Constraints, LatentModel};
use crate::sparse::{CholeskyFactor, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeOptions {
    /// Max-norm of the projected gradient at which Newton stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Conditioning on `A x = 0` through `V = Q⁻¹ Aᵀ` and `W = A V`.
#[derive(Debug, Clone)]
pub struct Kriging {
    v: Vec<Vec<f64>>,
    w: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    log_det_w: f64,
}

impl Kriging {
    pub fn new(factor: &CholeskyFactor, constraints: &Constraints) -> Result<Self> {
        let k = constraints.len();
        if k == 0 {
            return Ok(Self {
                v: Vec::new(),
                w: None,
                log_det_w: 0.0,
            });
        }
        let v: Vec<Vec<f64>> = (0..k).map(|c| factor.solve(&constraints.dense_row(c))).collect();
        let mut w = DMatrix::zeros(k, k);
        for (b, vb) in v.iter().enumerate() {
            for (a, val) in constraints.apply(vb).into_iter().enumerate() {
                w[(a, b)] = val;
            }
        }
        let w = (&w + w.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(w)
            .ok_or_else(|| Error::numeric("constraint covariance is not positive definite"))?;
        let log_det_w = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            v,
            w: Some(chol),
            log_det_w,
        })
    }

    /// `x -= V W⁻¹ (A x)`, making `A x = 0`. Repeated once more when
    /// rounding leaves a visible residual (V is large along nearly
    /// unpenalized directions).
    pub fn correct(&self, constraints: &Constraints, x: &mut [f64]) {
        let Some(w) = &self.w else {
            return;
        };
        for _ in 0..3 {
            let ax = constraints.apply(x);
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if ax.iter().all(|r| r.abs() <= 1e-14 * scale) {
                break;
            }
            let lam = w.solve(&DVector::from_vec(ax));
            for (vc, &l) in self.v.iter().zip(lam.iter()) {
                for (xi, vi) in x.iter_mut().zip(vc) {
                    *xi -= vi * l;
                }
            }
        }
    }

    /// `ln det(A Q⁻¹ Aᵀ)`
    pub fn log_det(&self) -> f64 {
        self.log_det_w
    }
}

/// Constrained Gaussian approximation at the conditional mode.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    /// Internal-scale hyperparameters.
    pub theta: Vec<f64>,
    pub mode: Vec<f64>,
    pub precision: SymMatrix,
    pub factor: CholeskyFactor,
    pub kriging: Kriging,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub loglik: f64,
    pub trace: Vec<f64>,
}

impl GaussianApprox {
    /// Log-determinant of the precision restricted to the constraint
    /// null space.
    pub fn constrained_log_det(&self, constraints: &Constraints) -> f64 {
        self.factor.log_det() + self.kriging.log_det() - constraints.log_det_gram()
    }

    /// Marginal variances of the constrained Gaussian.
    pub fn marginal_variances(&self) -> Result<Vec<f64>> {
        let mut var = self.factor.inverse_diag();
        if let Some(w) = &self.kriging.w {
            // Σ_c = Q⁻¹ - V W⁻¹ Vᵀ
            let k = self.kriging.v.len();
            let winv = w.inverse();
            for (i, vi) in var.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        acc += self.kriging.v[a][i] * winv[(a, b)] * self.kriging.v[b][i];
                    }
                }
                *vi -= acc;
            }
        }
        Ok(var)
    }
}

fn factor_at(model: &LatentModel, h: &SymMatrix, natural: &[f64]) -> Result<CholeskyFactor> {
    CholeskyFactor::factor(model.symbolic(), h).map_err(|e| {
        Error::numeric(format!(
            "Cholesky failed at hyperparameters {}: {e}",
            describe(model, natural)
        ))
    })
}

fn describe(model: &LatentModel, natural: &[f64]) -> String {
    model
        .hypers()
        .iter()
        .zip(natural)
        .map(|(h, v)| format!("{}={v:.6}", h.name))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Newton iterations for the mode of `p(x | y, θ)` under the model's
/// constraints, starting from `start` (projected) or zero.
pub fn conditional_mode(
    model: &LatentModel,
    theta: &[f64],
    start: Option<&[f64]>,
    opts: &ModeOptions,
) -> Result<GaussianApprox> {
    let natural = model.to_natural(theta);
    let q = model.prior_precision(&natural, true)?;
    let cons = model.constraints();
    let design = model.design();
    let lik = model.likelihood();
    let offsets = model.offsets();
    let mut x = match start {
        Some(s) if s.len() == model.dim() => cons.project(s),
        Some(_) => return Err(Error::input("starting point has the wrong dimension")),
        None => vec![0.0; model.dim()],
    };
    let objective = |x: &[f64], eta: &[f64]| lik.value(offsets, eta, &natural) - 0.5 * q.quad_form(x);
    let mut trace = Vec::new();
    let mut eta = design.mul(&x);
    for it in 0..=opts.max_iter {
        let ev = lik.eval(offsets, &eta, &natural);
        let mut grad = design.tmul(&ev.gradient);
        for (g, qx) in grad.iter_mut().zip(q.mul_vec(&x)) {
            *g -= qx;
        }
        let norm = cons.project(&grad).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !norm.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite gradient at hyperparameters {}",
                describe(model, &natural)
            )));
        }
        trace.push(norm);
        let mut h = q.clone();
        design.add_weighted_gram(&ev.curvature, &mut h);
        let factor = factor_at(model, &h, &natural)?;
        let kriging = Kriging::new(&factor, cons)?;
        if norm < opts.tol {
            return Ok(GaussianApprox {
                theta: theta.to_vec(),
                mode: x,
                precision: h,
                factor,
                kriging,
                iterations: it,
                gradient_norm: norm,
                loglik: ev.value,
                trace,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let mut step = factor.solve(&grad);
        kriging.correct(cons, &mut step);
        let f0 = ev.value - 0.5 * q.quad_form(&x);
        let d_eta = design.mul(&step);
        let mut t = 1.0;
        loop {
            let xn: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + t * b).collect();
            let en: Vec<f64> = eta.iter().zip(&d_eta).map(|(a, b)| a + t * b).collect();
            let fnew = objective(&xn, &en);
            if fnew >= f0 - 1e-12 * (1.0 + f0.abs()) || t < 1e-10 {
                x = xn;
                eta = en;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        message: format!(
            "conditional mode at hyperparameters {} (last gradient norm {:.3e})",
            describe(model, &natural),
            trace.last().copied().unwrap_or(f64::NAN)
        ),
        trace,
    })
}

/// Components of a Laplace evaluation at one hyperparameter point.
#[derive(Debug, Clone)]
pub struct LaplaceEval {
    pub log_marginal: f64,
    pub log_hyperprior: f64,
    pub loglik: f64,
    pub log_prior: f64,
    /// Constrained log-determinant of the approximation's precision.
    pub log_det: f64,
    pub approx: GaussianApprox,
}

/// Laplace approximation of `ln p(θ | y)` (up to a constant) on the
/// internal scale, from a converged Gaussian approximation.
pub fn log_marginal(model: &LatentModel, approx: GaussianApprox) -> LaplaceEval {
    let natural = model.to_natural(&approx.theta);
    let cons = model.constraints();
    let log_hyperprior = model.log_hyperprior(&approx.theta);
    let log_prior = model.log_prior_density(&approx.mode, &natural);
    let log_det = approx.constrained_log_det(cons);
    let free = (model.dim() - cons.len()) as f64;
    let log_marginal = log_hyperprior + approx.loglik + log_prior - 0.5 * log_det
        + 0.5 * free * (2.0 * PI).ln();
    LaplaceEval {
        log_marginal,
        log_hyperprior,
        loglik: approx.loglik,
        log_prior,
        log_det,
        approx,
    }
}

/// Mode plus Laplace evaluation in one call.
pub fn evaluate(
    model: &LatentModel,
    theta: &[f64],
    start: Option<&[f64]>,
    opts: &ModeOptions,
) -> Result<LaplaceEval> {
    let approx = conditional_mode(model, theta, start, opts)?;
    Ok(log_marginal(model, approx))
}

//! Gradient-free search for the hyperparameter mode.

use serde::{Deserialize, Serialize};

use super::laplace::{evaluate, LaplaceEval, ModeOptions};
use crate::error::{Error, Result};
use crate::model::LatentModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    /// Relative spread of the simplex objective values at convergence.
    pub f_tol: f64,
    /// Largest internal-scale distance of any vertex from the best one.
    pub x_tol: f64,
    pub max_evals: usize,
    /// Edge length of the initial simplex on the internal scale.
    pub initial_step: f64,
    pub mode: ModeOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-4,
            x_tol: 0.05,
            max_evals: 2000,
            initial_step: 0.5,
            mode: ModeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub eval: usize,
    pub theta: Vec<f64>,
    pub log_marginal: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    /// Internal-scale mode.
    pub theta: Vec<f64>,
    pub log_marginal: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    /// Every improvement of the best value, in order.
    pub trace: Vec<TracePoint>,
    pub best: LaplaceEval,
}

struct Search<'a> {
    model: &'a LatentModel,
    opts: &'a OptimizeOptions,
    evals: usize,
    best: Option<LaplaceEval>,
    trace: Vec<TracePoint>,
}

impl Search<'_> {
    /// Negative log marginal; failed evaluations count as +inf.
    fn eval(&mut self, theta: &[f64]) -> f64 {
        self.evals += 1;
        let start = self.best.as_ref().map(|b| b.approx.mode.as_slice());
        match evaluate(self.model, theta, start, &self.opts.mode) {
            Ok(e) if e.log_marginal.is_finite() => {
                let f = -e.log_marginal;
                if self.best.as_ref().is_none_or(|b| e.log_marginal > b.log_marginal) {
                    self.trace.push(TracePoint {
                        eval: self.evals,
                        theta: theta.to_vec(),
                        log_marginal: e.log_marginal,
                    });
                    self.best = Some(e);
                }
                f
            }
            _ => f64::INFINITY,
        }
    }
}

/// Nelder-Mead on the internal (log / logit) hyperparameter scale with
/// dimension-adapted coefficients. Each evaluation warm-starts the inner
/// Newton solve from the best mode found so far. Hitting `max_evals`
/// returns the best point with a warning.
pub fn optimize_hyper(model: &LatentModel, init: &[f64], opts: &OptimizeOptions) -> Result<OptimizeResult> {
    let n = model.n_hypers();
    if init.len() != n {
        return Err(Error::input(format!("expected {n} initial hyperparameters, got {}", init.len())));
    }
    let mut s = Search {
        model,
        opts,
        evals: 0,
        best: None,
        trace: Vec::new(),
    };
    let f0 = s.eval(init);
    if !f0.is_finite() {
        // Surface the underlying failure.
        evaluate(model, init, None, &opts.mode)?;
        return Err(Error::numeric("log marginal is not finite at the initial point"));
    }
    if n == 0 {
        return finish(s, 0, true, None);
    }
    let nf = n as f64;
    let (alpha, gamma, rho, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);
    let shrink = if n == 1 { 0.5 } else { shrink };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(init.to_vec(), f0)];
    for i in 0..n {
        let mut p = init.to_vec();
        p[i] += opts.initial_step;
        let f = s.eval(&p);
        simplex.push((p, f));
    }
    let mut iterations = 0;
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fb = simplex[0].1;
        let fw = simplex[n].1;
        let spread = fw - fb;
        let diam = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread.is_finite() && spread <= opts.f_tol * (1.0 + fb.abs()) && diam <= opts.x_tol {
            return finish(s, iterations, true, None);
        }
        if s.evals >= opts.max_evals {
            let msg = format!(
                "hyperparameter search stopped after {} evaluations (spread {spread:.3e}, diameter {diam:.3e})",
                s.evals
            );
            return finish(s, iterations, false, Some(msg));
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(p, _)| p[k]).sum::<f64>() / nf)
            .collect();
        let along = |t: f64, w: &[f64]| -> Vec<f64> {
            centroid.iter().zip(w).map(|(c, x)| c + t * (c - x)).collect()
        };
        let worst = simplex[n].0.clone();
        let xr = along(alpha, &worst);
        let fr = s.eval(&xr);
        if fr < fb {
            let xe = along(alpha * gamma, &worst);
            let fe = s.eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc, target) = if fr < fw {
            let xc = along(alpha * rho, &worst);
            let fc = s.eval(&xc);
            (xc, fc, fr)
        } else {
            let xc = along(-rho, &worst);
            let fc = s.eval(&xc);
            (xc, fc, fw)
        };
        if fc < target || (fc == target && fc.is_finite()) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            let p: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + shrink * (x - b)).collect();
            let f = s.eval(&p);
            *v = (p, f);
        }
    }
}

fn finish(s: Search<'_>, iterations: usize, converged: bool, warning: Option<String>) -> Result<OptimizeResult> {
    let best = s.best.expect("initial point evaluated");
    Ok(OptimizeResult {
        theta: best.approx.theta.clone(),
        log_marginal: best.log_marginal,
        evals: s.evals,
        iterations,
        converged,
        warning,
        trace: s.trace,
        best,
    })
}

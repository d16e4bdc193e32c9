//! Reference sampler: preconditioned MALA on the latent field (within the
//! constraint null space) and component-wise random-walk Metropolis on the
//! internal-scale hyperparameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::laplace::{conditional_mode, GaussianApprox, ModeOptions};
use super::sampling::draw_rng;
use crate::error::{Error, Result};
use crate::model::{LatentModel, Likelihood, Noise};
use crate::sparse::SymMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub iterations: usize,
    /// Defaults to a fifth of `iterations`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
    /// Keep the hyperparameters fixed at their initial values.
    pub fix_hyper: bool,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            burn_in: None,
            thin: 10,
            seed: 1,
            fix_hyper: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct McmcResult {
    /// Thinned post-burn-in latent states.
    pub latent: Vec<Vec<f64>>,
    /// Thinned post-burn-in internal-scale hyperparameters.
    pub hyper: Vec<Vec<f64>>,
    pub latent_acceptance: f64,
    pub hyper_acceptance: Vec<f64>,
    pub step_size: f64,
}

impl McmcResult {
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.latent.iter().map(|d| d[i]).collect()
    }

    /// Split-chain potential scale reduction of latent coordinate `i`.
    pub fn rhat(&self, i: usize) -> f64 {
        split_rhat(&self.coordinate(i))
    }
}

/// Split-chain R-hat: the chain is cut in two halves treated as separate
/// chains.
pub fn split_rhat(chain: &[f64]) -> f64 {
    let n = chain.len() / 2;
    if n < 2 {
        return f64::NAN;
    }
    let halves = [&chain[..n], &chain[chain.len() - n..]];
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n as f64).collect();
    let vars: Vec<f64> = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = (vars[0] + vars[1]) / 2.0;
    let grand = (means[0] + means[1]) / 2.0;
    let b = n as f64 * ((means[0] - grand).powi(2) + (means[1] - grand).powi(2));
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Monte Carlo standard error of the mean by non-overlapping batch means
/// (about `sqrt(len)` batches).
pub fn batch_means_se(chain: &[f64]) -> f64 {
    let batches = (chain.len() as f64).sqrt().floor() as usize;
    let size = chain.len() / batches.max(1);
    if batches < 2 || size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| chain[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

struct LatentState {
    x: Vec<f64>,
    log_target: f64,
    grad: Vec<f64>,
}

struct Sampler<'a> {
    model: &'a LatentModel,
    pre: GaussianApprox,
    hyper_in_lik: bool,
}

impl Sampler<'_> {
    fn state(&self, x: Vec<f64>, natural: &[f64], q: &SymMatrix) -> LatentState {
        let m = self.model;
        let eta = m.design().mul(&x);
        let ev = m.likelihood().eval(m.offsets(), &eta, natural);
        let mut grad = m.design().tmul(&ev.gradient);
        for (g, qx) in grad.iter_mut().zip(q.mul_vec(&x)) {
            *g -= qx;
        }
        let log_target = ev.value + m.log_prior_density(&x, natural);
        LatentState { x, log_target, grad }
    }

    /// `Σ_c g`: preconditioned drift confined to the constraint null space.
    fn drift(&self, g: &[f64]) -> Vec<f64> {
        let mut d = self.pre.factor.solve(g);
        self.pre.kriging.correct(self.model.constraints(), &mut d);
        d
    }

    fn proposal_mean(&self, s: &LatentState, h: f64) -> Vec<f64> {
        let d = self.drift(&s.grad);
        s.x.iter().zip(&d).map(|(x, d)| x + 0.5 * h * d).collect()
    }

    /// `ln q(to | from)` up to a constant shared by both directions.
    fn log_q(&self, to: &[f64], mean: &[f64], h: f64) -> f64 {
        let diff: Vec<f64> = to.iter().zip(mean).map(|(a, b)| a - b).collect();
        -self.pre.precision.quad_form(&diff) / (2.0 * h)
    }

    /// Hyperparameter-dependent part of the joint.
    fn log_hyper_target(&self, x: &[f64], theta: &[f64]) -> f64 {
        let m = self.model;
        let nat = m.to_natural(theta);
        let mut v = m.log_hyperprior(theta) + m.log_prior_density(x, &nat);
        if self.hyper_in_lik {
            v += m.loglik(x, &nat);
        }
        v
    }
}

/// Runs the reference chain starting from the conditional mode at
/// `init_theta` (internal scale); the Gaussian approximation there is the
/// MALA preconditioner.
pub fn mcmc_reference(model: &LatentModel, init_theta: &[f64], opts: &McmcOptions) -> Result<McmcResult> {
    if opts.iterations == 0 || opts.thin == 0 {
        return Err(Error::input("MCMC needs positive iterations and thinning"));
    }
    let burn = opts.burn_in.unwrap_or(opts.iterations / 5);
    let pre = conditional_mode(model, init_theta, None, &ModeOptions::default())?;
    let hyper_in_lik = matches!(
        model.likelihood(),
        Likelihood::Gaussian {
            noise: Noise::Hyper(_),
            ..
        }
    );
    let sampler = Sampler {
        model,
        pre,
        hyper_in_lik,
    };
    let mut rng = draw_rng(opts.seed, u64::MAX);
    let k = model.n_hypers();
    let d = model.dim();
    let mut theta = init_theta.to_vec();
    let mut natural = model.to_natural(&theta);
    let mut q = model.prior_precision(&natural, false)?;
    let mut cur = sampler.state(sampler.pre.mode.clone(), &natural, &q);
    let mut h = 1.65f64.powi(2) / (d as f64).powf(1.0 / 3.0);
    let mut hyper_step = vec![0.3; k];
    let mut acc_latent = 0usize;
    let mut acc_hyper = vec![0usize; k];
    let mut latent_out = Vec::new();
    let mut hyper_out = Vec::new();
    let mut trace = Vec::new();

    for it in 0..burn + opts.iterations {
        let adapting = it < burn;
        let rate = 1.0 / ((it + 10) as f64).powf(0.6);

        // Latent MALA step.
        let mean_fwd = sampler.proposal_mean(&cur, h);
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut noise = sampler.pre.factor.sample_from_standard(&z);
        sampler.pre.kriging.correct(model.constraints(), &mut noise);
        let xp: Vec<f64> = mean_fwd.iter().zip(&noise).map(|(m, e)| m + h.sqrt() * e).collect();
        let prop = sampler.state(xp, &natural, &q);
        let mut log_alpha = f64::NEG_INFINITY;
        if prop.log_target.is_finite() && prop.grad.iter().all(|g| g.is_finite()) {
            let mean_bwd = sampler.proposal_mean(&prop, h);
            log_alpha = prop.log_target - cur.log_target + sampler.log_q(&cur.x, &mean_bwd, h)
                - sampler.log_q(&prop.x, &mean_fwd, h);
        }
        let alpha = log_alpha.min(0.0).exp();
        if rng.random::<f64>() < alpha {
            cur = prop;
            if !adapting {
                acc_latent += 1;
            }
        }
        if adapting {
            h *= (rate * (alpha - 0.574)).exp();
        }

        // Hyperparameter updates, one coordinate at a time.
        if !opts.fix_hyper && k > 0 {
            let mut changed = false;
            let mut cur_h = sampler.log_hyper_target(&cur.x, &theta);
            for i in 0..k {
                let mut tp = theta.clone();
                let step: f64 = StandardNormal.sample(&mut rng);
                tp[i] += hyper_step[i] * step;
                let new_h = sampler.log_hyper_target(&cur.x, &tp);
                let a = if new_h.is_finite() { (new_h - cur_h).min(0.0).exp() } else { 0.0 };
                if rng.random::<f64>() < a {
                    theta = tp;
                    cur_h = new_h;
                    changed = true;
                    if !adapting {
                        acc_hyper[i] += 1;
                    }
                }
                if adapting {
                    hyper_step[i] *= (rate * (a - 0.44)).exp();
                }
            }
            if changed {
                natural = model.to_natural(&theta);
                q = model.prior_precision(&natural, false)?;
                cur = sampler.state(std::mem::take(&mut cur.x), &natural, &q);
            }
        }
        if !cur.log_target.is_finite() {
            return Err(Error::Convergence {
                iterations: it,
                message: "MCMC chain left the support of the target".into(),
                trace,
            });
        }
        if it % 1000 == 0 {
            trace.push(cur.log_target);
        }
        if !adapting && (it - burn).is_multiple_of(opts.thin) {
            latent_out.push(cur.x.clone());
            hyper_out.push(theta.clone());
        }
    }
    let latent_acceptance = acc_latent as f64 / opts.iterations as f64;
    if latent_acceptance < 0.01 {
        return Err(Error::Convergence {
            iterations: opts.iterations,
            message: format!("latent acceptance rate {latent_acceptance:.4} indicates a stuck chain"),
            trace,
        });
    }
    Ok(McmcResult {
        latent: latent_out,
        hyper: hyper_out,
        latent_acceptance,
        hyper_acceptance: acc_hyper.iter().map(|&a| a as f64 / opts.iterations as f64).collect(),
        step_size: h,
    })
}

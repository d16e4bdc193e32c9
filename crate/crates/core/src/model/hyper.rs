//! Hyperparameters, their internal (unconstrained) scales, and penalised
//! complexity priors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail statement `Pr(param > upper) = alpha` for a standard deviation, or
/// `Pr(phi < upper) = alpha` for a mixing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcPair {
    pub upper: f64,
    pub alpha: f64,
}

impl PcPair {
    pub const fn new(upper: f64, alpha: f64) -> Self {
        Self { upper, alpha }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.upper > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::input(format!(
                "{what}: PC prior needs U > 0 and 0 < alpha < 1, got ({}, {})",
                self.upper, self.alpha
            )));
        }
        Ok(())
    }
}

/// Rate of the exponential PC prior on a standard deviation.
pub fn pc_sd_rate(upper: f64, alpha: f64) -> f64 {
    -alpha.ln() / upper
}

/// Log density of the PC prior on a standard deviation: exponential with
/// rate `-ln(alpha) / upper`. Non-positive `sigma` gives `-inf`.
pub fn pc_sd_logdensity(sigma: f64, upper: f64, alpha: f64) -> f64 {
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let rate = pc_sd_rate(upper, alpha);
    rate.ln() - rate * sigma
}

/// PC prior for the BYM2 mixing parameter. The distance to the unstructured
/// base model is `d(phi) = sqrt(2 KLD(phi))`, where the Kullback-Leibler
/// divergence is computed from the eigenvalues `gamma` of the scaled
/// structure's generalized inverse:
/// `2 KLD = sum(phi (gamma - 1) - ln(1 + phi (gamma - 1)))`.
#[derive(Debug, Clone)]
pub struct PcMixing {
    shifted: Arc<Vec<f64>>,
    rate: f64,
    slope_at_zero: f64,
}

impl PcMixing {
    pub fn new(spectrum: &[f64], pair: PcPair) -> Result<Self> {
        pair.validate("mixing parameter")?;
        if pair.upper >= 1.0 {
            return Err(Error::input("mixing-parameter PC prior needs U < 1"));
        }
        let shifted: Vec<f64> = spectrum.iter().map(|g| g - 1.0).collect();
        let slope_at_zero = (0.5 * shifted.iter().map(|s| s * s).sum::<f64>()).sqrt();
        let mut prior = Self {
            shifted: Arc::new(shifted),
            rate: 0.0,
            slope_at_zero,
        };
        let d_u = prior.distance(pair.upper);
        prior.rate = if d_u > 0.0 {
            -(1.0 - pair.alpha).ln() / d_u
        } else {
            0.0
        };
        Ok(prior)
    }

    /// Twice the KL divergence from the base model.
    pub fn two_kld(&self, phi: f64) -> f64 {
        self.two_kld_split(phi, (1.0 - phi).ln())
    }

    /// `ln(1 + phi (gamma - 1)) = ln((1 - phi) + phi gamma)`, accurate for
    /// phi near 1.
    fn log_mix(phi: f64, ln_comp: f64, s: f64) -> f64 {
        let gamma = s + 1.0;
        if gamma == 0.0 {
            ln_comp
        } else {
            (ln_comp.exp() + phi * gamma).ln()
        }
    }

    /// `two_kld` with `ln(1 - phi)` supplied separately so that phi close
    /// to 1 keeps full precision.
    fn two_kld_split(&self, phi: f64, ln_comp: f64) -> f64 {
        self.shifted
            .iter()
            .map(|&s| {
                let x = phi * s;
                if x.abs() < 1e-4 {
                    x * x / 2.0 - x * x * x / 3.0 + x.powi(4) / 4.0
                } else {
                    x - Self::log_mix(phi, ln_comp, s)
                }
            })
            .sum()
    }

    pub fn distance(&self, phi: f64) -> f64 {
        self.two_kld(phi).max(0.0).sqrt()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn log_density_split(&self, phi: f64, ln_comp: f64) -> f64 {
        if self.rate == 0.0 {
            // No structured component to mix in: flat on [0, 1].
            return 0.0;
        }
        let d = self.two_kld_split(phi, ln_comp).max(0.0).sqrt();
        if !d.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ln_slope = if phi < 1e-8 {
            self.slope_at_zero.ln()
        } else {
            // ln(d'(phi)) with d' = sum(s² phi / (1 + phi s)) / (2 d), in
            // log-sum-exp form since the gamma = 0 terms blow up as phi -> 1.
            let logs: Vec<f64> = self
                .shifted
                .iter()
                .filter(|&&s| s != 0.0)
                .map(|&s| (s * s * phi).ln() - Self::log_mix(phi, ln_comp, s))
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln() - (2.0 * d).ln()
        };
        self.rate.ln() - self.rate * d + ln_slope
    }

    pub fn logdensity(&self, phi: f64) -> f64 {
        if !(0.0..=1.0).contains(&phi) {
            return f64::NEG_INFINITY;
        }
        self.log_density_split(phi, (1.0 - phi).ln())
    }

    /// Log density of `t = logit(phi)`, Jacobian included.
    pub fn logdensity_logit(&self, t: f64) -> f64 {
        // ln(phi) = -ln(1 + e^-t), ln(1 - phi) = -ln(1 + e^t)
        let ln_phi = -softplus(-t);
        let ln_comp = -softplus(t);
        self.log_density_split(ln_phi.exp(), ln_comp) + ln_phi + ln_comp
    }

    /// Closed-form CDF, `1 - exp(-rate d(phi))`.
    pub fn cdf(&self, phi: f64) -> f64 {
        1.0 - (-self.rate * self.distance(phi.clamp(0.0, 1.0))).exp()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub enum HyperKind {
    /// Standard deviation, internal scale `ln sigma`.
    Sigma(PcPair),
    /// Mixing parameter in (0, 1), internal scale `logit phi`.
    Mixing(PcMixing),
}

#[derive(Debug, Clone)]
pub struct HyperSpec {
    pub name: String,
    pub kind: HyperKind,
}

impl HyperSpec {
    pub fn sigma(name: impl Into<String>, pair: PcPair) -> Self {
        Self {
            name: name.into(),
            kind: HyperKind::Sigma(pair),
        }
    }

    pub fn mixing(name: impl Into<String>, prior: PcMixing) -> Self {
        Self {
            name: name.into(),
            kind: HyperKind::Mixing(prior),
        }
    }

    pub fn is_sigma(&self) -> bool {
        matches!(self.kind, HyperKind::Sigma(_))
    }

    pub fn to_natural(&self, internal: f64) -> f64 {
        match self.kind {
            HyperKind::Sigma(_) => internal.exp(),
            HyperKind::Mixing(_) => 1.0 / (1.0 + (-internal).exp()),
        }
    }

    pub fn to_internal(&self, natural: f64) -> Result<f64> {
        match self.kind {
            HyperKind::Sigma(_) if natural > 0.0 => Ok(natural.ln()),
            HyperKind::Mixing(_) if natural > 0.0 && natural < 1.0 => {
                Ok((natural / (1.0 - natural)).ln())
            }
            _ => Err(Error::input(format!(
                "hyperparameter {} = {natural} is outside its support",
                self.name
            ))),
        }
    }

    /// Prior log density on the natural scale.
    pub fn log_prior(&self, natural: f64) -> f64 {
        match &self.kind {
            HyperKind::Sigma(p) => pc_sd_logdensity(natural, p.upper, p.alpha),
            HyperKind::Mixing(m) => m.logdensity(natural),
        }
    }

    /// Prior log density on the internal scale (includes the Jacobian).
    pub fn log_prior_internal(&self, internal: f64) -> f64 {
        match &self.kind {
            HyperKind::Sigma(p) => pc_sd_logdensity(internal.exp(), p.upper, p.alpha) + internal,
            HyperKind::Mixing(m) => m.logdensity_logit(internal),
        }
    }
}

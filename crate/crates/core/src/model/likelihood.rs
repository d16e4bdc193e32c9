//! Observation models. Each returns the log-likelihood together with its
//! first derivative and negated second derivative in the linear predictor.

use rayon::prelude::*;

const CHUNK: usize = 8192;

/// Log-likelihood value plus per-record gradient and curvature
/// (`-d²/dη²`), all with respect to the linear predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub curvature: Vec<f64>,
}

/// Noise scale of a Gaussian observation model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Fixed(f64),
    /// Index of a standard-deviation hyperparameter.
    Hyper(usize),
}

#[derive(Debug, Clone)]
pub enum Likelihood {
    Poisson { counts: Vec<f64>, log_factorials: f64 },
    Gaussian { y: Vec<f64>, noise: Noise },
}

impl Likelihood {
    pub fn poisson(counts: Vec<f64>) -> Self {
        let log_factorials = counts.iter().map(|&y| ln_factorial(y)).sum();
        Self::Poisson {
            counts,
            log_factorials,
        }
    }

    pub fn gaussian(y: Vec<f64>, noise: Noise) -> Self {
        Self::Gaussian { y, noise }
    }

    pub fn n_records(&self) -> usize {
        match self {
            Self::Poisson { counts, .. } => counts.len(),
            Self::Gaussian { y, .. } => y.len(),
        }
    }

    /// Evaluates at `eta` (design part only) given offsets and natural-scale
    /// hyperparameters.
    pub fn eval(&self, offsets: &[f64], eta: &[f64], hyper: &[f64]) -> LikelihoodEval {
        match self {
            Self::Poisson {
                counts,
                log_factorials,
            } => {
                let mut out = poisson_terms(counts, offsets, eta);
                out.value -= log_factorials;
                out
            }
            Self::Gaussian { y, noise } => gaussian_loglik(y, offsets, eta, noise.resolve(hyper)),
        }
    }

    /// Log-likelihood only.
    pub fn value(&self, offsets: &[f64], eta: &[f64], hyper: &[f64]) -> f64 {
        match self {
            Self::Poisson {
                counts,
                log_factorials,
            } => {
                let partial: Vec<f64> = counts
                    .par_chunks(CHUNK)
                    .zip(offsets.par_chunks(CHUNK))
                    .zip(eta.par_chunks(CHUNK))
                    .map(|((y, o), e)| {
                        y.iter()
                            .zip(o)
                            .zip(e)
                            .map(|((&y, &o), &e)| {
                                let lin = o + e;
                                y * lin - lin.exp()
                            })
                            .sum::<f64>()
                    })
                    .collect();
                partial.iter().sum::<f64>() - log_factorials
            }
            Self::Gaussian { .. } => self.eval(offsets, eta, hyper).value,
        }
    }
}

impl Noise {
    fn resolve(&self, hyper: &[f64]) -> f64 {
        match *self {
            Noise::Fixed(s) => s,
            Noise::Hyper(i) => hyper[i],
        }
    }
}

/// `ln y!` for a non-negative integer-valued count.
pub fn ln_factorial(y: f64) -> f64 {
    let k = y.round() as u64;
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn poisson_terms(counts: &[f64], offsets: &[f64], eta: &[f64]) -> LikelihoodEval {
    let n = counts.len();
    assert!(offsets.len() == n && eta.len() == n);
    let mut gradient = vec![0.0; n];
    let mut curvature = vec![0.0; n];
    let partial: Vec<f64> = gradient
        .par_chunks_mut(CHUNK)
        .zip(curvature.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(c, (g, h))| {
            let base = c * CHUNK;
            let mut acc = 0.0;
            for k in 0..g.len() {
                let r = base + k;
                let lin = offsets[r] + eta[r];
                let mu = lin.exp();
                acc += counts[r] * lin - mu;
                g[k] = counts[r] - mu;
                h[k] = mu;
            }
            acc
        })
        .collect();
    LikelihoodEval {
        value: partial.iter().sum(),
        gradient,
        curvature,
    }
}

/// Poisson log-likelihood with log link: `y (o + η) - exp(o + η) - ln y!`.
pub fn poisson_loglik(counts: &[f64], offsets: &[f64], eta: &[f64]) -> LikelihoodEval {
    let mut out = poisson_terms(counts, offsets, eta);
    out.value -= counts.iter().map(|&y| ln_factorial(y)).sum::<f64>();
    out
}

/// Gaussian log-likelihood with identity link and common standard deviation.
pub fn gaussian_loglik(y: &[f64], offsets: &[f64], eta: &[f64], sd: f64) -> LikelihoodEval {
    let prec = 1.0 / (sd * sd);
    let norm = -0.5 * (2.0 * std::f64::consts::PI * sd * sd).ln();
    let mut value = 0.0;
    let mut gradient = Vec::with_capacity(y.len());
    for r in 0..y.len() {
        let resid = y[r] - offsets[r] - eta[r];
        value += norm - 0.5 * prec * resid * resid;
        gradient.push(prec * resid);
    }
    LikelihoodEval {
        value,
        gradient,
        curvature: vec![prec; y.len()],
    }
}

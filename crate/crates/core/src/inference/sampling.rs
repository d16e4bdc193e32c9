//! Posterior draws from the constrained Gaussian approximation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{evaluate, GaussianApprox, ModeOptions};
use crate::error::{Error, Result};
use crate::model::LatentModel;

pub const DEFAULT_DRAWS: usize = 1000;

/// Latent and hyperparameter draws, one row per draw.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub latent: Vec<Vec<f64>>,
    /// Natural-scale hyperparameters used for each draw.
    pub hyper: Vec<Vec<f64>>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }

    /// Column `i` of the latent draws.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.latent.iter().map(|d| d[i]).collect()
    }
}

/// RNG for draw `index`: one independent ChaCha stream per draw, so the
/// result does not depend on the thread count.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_into(model: &LatentModel, approx: &GaussianApprox, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..model.dim()).map(|_| StandardNormal.sample(rng)).collect();
    let mut x = approx.factor.sample_from_standard(&z);
    for (xi, m) in x.iter_mut().zip(&approx.mode) {
        *xi += m;
    }
    approx.kriging.correct(model.constraints(), &mut x);
    x
}

/// Empirical-Bayes draws at the approximation's hyperparameters.
pub fn draw_posterior(model: &LatentModel, approx: &GaussianApprox, n: usize, seed: u64) -> Result<PosteriorDraws> {
    draw_range(model, approx, 0, n, seed)
}

fn draw_range(model: &LatentModel, approx: &GaussianApprox, first: usize, n: usize, seed: u64) -> Result<PosteriorDraws> {
    if n == 0 {
        return Err(Error::input("number of draws must be positive"));
    }
    let latent: Vec<Vec<f64>> = (first..first + n)
        .into_par_iter()
        .map(|i| sample_into(model, approx, &mut draw_rng(seed, i as u64)))
        .collect();
    let natural = model.to_natural(&approx.theta);
    Ok(PosteriorDraws {
        hyper: vec![natural; n],
        latent,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    /// Hyperparameters (by index) spanned by the grid; the others stay at
    /// the mode. Empty means all.
    pub dims: Vec<usize>,
    /// Standardized offsets per dimension.
    pub points: Vec<f64>,
    /// Largest number of grid points allowed.
    pub max_points: usize,
    /// Finite-difference step for the curvature, internal scale.
    pub fd_step: f64,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            dims: Vec::new(),
            points: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            max_points: 5usize.pow(4),
            fd_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub theta: Vec<f64>,
    pub log_marginal: f64,
    pub weight: f64,
    pub n_draws: usize,
}

/// Draws mixed over a product grid around the mode, weighted by the Laplace
/// log marginal. Grid spacing per dimension is the inverse square root of
/// the finite-difference curvature of the log marginal at the mode (1 when
/// the curvature is not negative). Draw counts follow largest remainders.
pub fn draw_posterior_grid(
    model: &LatentModel,
    mode: &GaussianApprox,
    n: usize,
    seed: u64,
    opts: &GridOptions,
    mode_opts: &ModeOptions,
) -> Result<(PosteriorDraws, Vec<GridPoint>)> {
    if n == 0 {
        return Err(Error::input("number of draws must be positive"));
    }
    let k = model.n_hypers();
    let dims: Vec<usize> = if opts.dims.is_empty() { (0..k).collect() } else { opts.dims.clone() };
    if dims.iter().any(|&d| d >= k) {
        return Err(Error::input("grid dimension out of range"));
    }
    let total = opts.points.len().checked_pow(dims.len() as u32).unwrap_or(usize::MAX);
    if total > opts.max_points {
        return Err(Error::input(format!(
            "hyperparameter grid would have {total} points (limit {}); restrict the grid dimensions",
            opts.max_points
        )));
    }
    let theta0 = mode.theta.clone();
    let start = Some(mode.mode.as_slice());
    let lm = |t: &[f64]| -> Result<f64> { Ok(evaluate(model, t, start, mode_opts)?.log_marginal) };
    let f0 = lm(&theta0)?;
    let mut scale = Vec::with_capacity(dims.len());
    for &d in &dims {
        let h = opts.fd_step;
        let mut up = theta0.clone();
        up[d] += h;
        let mut dn = theta0.clone();
        dn[d] -= h;
        let curv = (lm(&up)? - 2.0 * f0 + lm(&dn)?) / (h * h);
        scale.push(if curv < 0.0 { (-curv).sqrt().recip() } else { 1.0 });
    }
    let mut thetas = Vec::with_capacity(total);
    for idx in 0..total {
        let mut t = theta0.clone();
        let mut rem = idx;
        for (q, &d) in dims.iter().enumerate() {
            let p = rem % opts.points.len();
            rem /= opts.points.len();
            t[d] += opts.points[p] * scale[q];
        }
        thetas.push(t);
    }
    let evals: Vec<Option<f64>> = thetas.par_iter().map(|t| lm(t).ok()).collect();
    let top = evals.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numeric("no grid point could be evaluated"));
    }
    let weights: Vec<f64> = evals
        .iter()
        .map(|e| e.map_or(0.0, |l| (l - top).exp()))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / wsum * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    let mut latent = Vec::with_capacity(n);
    let mut hyper = Vec::with_capacity(n);
    let mut first = 0;
    let mut points = Vec::with_capacity(total);
    for (i, e) in evals.iter().enumerate() {
        points.push(GridPoint {
            theta: thetas[i].clone(),
            log_marginal: e.unwrap_or(f64::NEG_INFINITY),
            weight: weights[i] / wsum,
            n_draws: counts[i],
        });
        if counts[i] == 0 {
            continue;
        }
        let approx = evaluate(model, &thetas[i], start, mode_opts)?.approx;
        let d = draw_range(model, &approx, first, counts[i], seed)?;
        first += counts[i];
        latent.extend(d.latent);
        hyper.extend(d.hyper);
    }
    Ok((PosteriorDraws { latent, hyper, seed }, points))
}

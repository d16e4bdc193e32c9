//! Second-stage Gaussian regression of area-level ERH on effect modifiers,
//! with a cantonal IID effect and a BYM2 residual field.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ScaledStructure;
use crate::inference::{draw_posterior, optimize_hyper, OptimizeOptions};
use crate::model::{DesignBuilder, HyperSpec, LatentModel, Layout, Likelihood, Noise, PcMixing, PcPair, PriorBlock};
use crate::stats::{self, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SepClass {
    Low,
    Baseline,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Urbanicity {
    Rural,
    SemiUrban,
    Urban,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Language {
    #[serde(alias = "German")]
    German,
    #[serde(alias = "French")]
    French,
    #[serde(alias = "Italian")]
    Italian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierRecord {
    pub area_id: u32,
    /// Percent of residents aged 85 or older.
    pub pct_over_85: f64,
    pub ndvi: f64,
    pub mean_temp: f64,
    /// NO2 in µg/m³ × 10.
    pub no2: f64,
    pub sep_class: SepClass,
    pub urbanicity: Urbanicity,
    pub language: Language,
}

pub const CONTINUOUS: [&str; 4] = ["pct_over_85", "ndvi", "mean_temp", "no2"];
pub const DUMMIES: [&str; 6] = [
    "sep_low",
    "sep_high",
    "semi_urban",
    "urban",
    "french",
    "italian",
];

/// Standardized modifier design, one row per area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModifierDesign {
    pub area_ids: Vec<u32>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Sample SD used to scale each continuous column; 1 for dummies.
    pub scales: Vec<f64>,
    pub means: Vec<f64>,
}

impl ModifierDesign {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Rows in `order` (area ids), erroring on unknown areas.
    pub fn reorder(&self, order: &[u32]) -> Result<Self> {
        let rows = order
            .iter()
            .map(|id| {
                self.area_ids
                    .iter()
                    .position(|a| a == id)
                    .map(|i| self.rows[i].clone())
                    .ok_or_else(|| Error::input(format!("no modifier record for area {id}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            area_ids: order.to_vec(),
            rows,
            ..self.clone()
        })
    }
}

fn raw_row(r: &ModifierRecord) -> [f64; 10] {
    let f = |b: bool| f64::from(u8::from(b));
    [
        r.pct_over_85,
        r.ndvi,
        r.mean_temp,
        r.no2,
        f(r.sep_class == SepClass::Low),
        f(r.sep_class == SepClass::High),
        f(r.urbanicity == Urbanicity::SemiUrban),
        f(r.urbanicity == Urbanicity::Urban),
        f(r.language == Language::French),
        f(r.language == Language::Italian),
    ]
}

/// Centers and scales the continuous modifiers by their sample SD and
/// dummy-codes the factors against baseline SEP, rural and German.
pub fn standardize(records: &[ModifierRecord]) -> Result<ModifierDesign> {
    if records.len() < 2 {
        return Err(Error::input("need at least two areas with modifiers"));
    }
    for r in records {
        if ![r.pct_over_85, r.ndvi, r.mean_temp, r.no2].iter().all(|v| v.is_finite()) {
            return Err(Error::input(format!("non-finite modifier for area {}", r.area_id)));
        }
    }
    let raw: Vec<[f64; 10]> = records.iter().map(raw_row).collect();
    let mut means = vec![0.0; 10];
    let mut scales = vec![1.0; 10];
    for (j, name) in CONTINUOUS.iter().enumerate() {
        let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
        let sd = stats::variance(&col).sqrt();
        if !(sd > 0.0) {
            return Err(Error::input(format!("modifier '{name}' is constant across areas")));
        }
        means[j] = stats::mean(&col);
        scales[j] = sd;
    }
    let rows = raw
        .iter()
        .map(|r| (0..10).map(|j| (r[j] - means[j]) / scales[j]).collect())
        .collect();
    let design = ModifierDesign {
        area_ids: records.iter().map(|r| r.area_id).collect(),
        columns: CONTINUOUS.iter().chain(DUMMIES.iter()).map(|s| s.to_string()).collect(),
        rows,
        scales,
        means,
    };
    check_collinearity(&design)?;
    Ok(design)
}

/// Gram-Schmidt on [1, columns]; a column with (relative) residual norm
/// below 1e-8 is collinear with the ones before it.
pub fn check_collinearity(design: &ModifierDesign) -> Result<()> {
    let n = design.rows.len();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut bad = Vec::new();
    for (j, name) in design.columns.iter().enumerate() {
        let mut v: Vec<f64> = design.rows.iter().map(|r| r[j]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(q) {
                    *a -= d * b;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-8 * norm0.max(1.0) {
            bad.push(name.clone());
        } else {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "modifier design is singular; collinear columns: {}",
            bad.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModifierConfig {
    pub coefficient_precision: f64,
    pub pc_noise_sd: PcPair,
    pub pc_canton_sd: PcPair,
    pub pc_spatial_sd: PcPair,
    pub pc_mixing: PcPair,
    /// Posterior draws per fit.
    pub draws: usize,
    /// Outcome samples refitted under propagation.
    pub samples: usize,
    pub seed: u64,
    pub include_canton: bool,
}

impl Default for ModifierConfig {
    fn default() -> Self {
        Self {
            coefficient_precision: 1e-3,
            pc_noise_sd: PcPair::new(1.0, 0.01),
            pc_canton_sd: PcPair::new(1.0, 0.01),
            pc_spatial_sd: PcPair::new(1.0, 0.01),
            pc_mixing: PcPair::new(0.5, 0.5),
            draws: 1000,
            samples: 200,
            seed: 1,
            include_canton: true,
        }
    }
}

/// Latent positions in the modifier model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModifierLayout {
    pub intercept: usize,
    pub alpha: usize,
    pub zeta: Option<usize>,
    pub xi: (usize, usize),
    pub n_alpha: usize,
}

/// Builds the second-stage latent model. Hyperparameters: noise sd,
/// [canton sd], spatial sd, spatial mixing.
pub fn modifier_model(
    outcome: &[f64],
    design: &ModifierDesign,
    structure: Arc<ScaledStructure>,
    canton_of: &[usize],
    n_cantons: usize,
    config: &ModifierConfig,
) -> Result<(LatentModel, ModifierLayout)> {
    let n = outcome.len();
    if design.rows.len() != n || structure.n_areas() != n || canton_of.len() != n {
        return Err(Error::input("outcome, modifier design, graph and canton map differ in size"));
    }
    if let Some(v) = outcome.iter().find(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite outcome value {v}")));
    }
    let p = design.n_columns();
    let mut lay = Layout::default();
    let intercept = lay.push("alpha0", 1);
    let alpha = lay.push("alpha", p);
    let zeta = config.include_canton.then(|| lay.push("zeta", n_cantons));
    let field = lay.push("xi_field", n);
    let u = lay.push("xi_u", n);
    let mut b = DesignBuilder::new(lay.dim());
    for (m, row) in design.rows.iter().enumerate() {
        let mut entries = vec![(intercept, 1.0), (field + m, 1.0)];
        entries.extend(row.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (alpha + j, v)));
        if let Some(z) = zeta {
            if canton_of[m] >= n_cantons {
                return Err(Error::input("canton index out of range"));
            }
            entries.push((z + canton_of[m], 1.0));
        }
        b.push_row(&entries)?;
    }
    let spectrum = structure.mixing_spectrum()?;
    let mut hypers = vec![HyperSpec::sigma("sigma_erh", config.pc_noise_sd)];
    let mut priors = vec![PriorBlock::Fixed {
        offset: intercept,
        len: 1 + p,
        precision: config.coefficient_precision,
    }];
    if let Some(z) = zeta {
        hypers.push(HyperSpec::sigma("sigma_zeta", config.pc_canton_sd));
        priors.push(PriorBlock::Iid {
            offset: z,
            len: n_cantons,
            sigma: hypers.len() - 1,
        });
    }
    hypers.push(HyperSpec::sigma("sigma_xi", config.pc_spatial_sd));
    hypers.push(HyperSpec::mixing("phi_xi", PcMixing::new(&spectrum, config.pc_mixing)?));
    let k = hypers.len();
    priors.push(PriorBlock::Bym2 {
        field,
        u,
        structure,
        sigma: k - 2,
        phi: k - 1,
    });
    let model = LatentModel::new(
        lay,
        b.build(),
        vec![0.0; n],
        Likelihood::gaussian(outcome.to_vec(), Noise::Hyper(0)),
        priors,
        hypers,
    )?;
    Ok((
        model,
        ModifierLayout {
            intercept,
            alpha,
            zeta,
            xi: (field, u),
            n_alpha: p,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    Single,
    Propagated,
}

/// One fit's output.
#[derive(Debug, Clone)]
pub struct ModifierFit {
    /// Internal-scale hyperparameter mode.
    pub theta: Vec<f64>,
    pub hyper_names: Vec<String>,
    /// Natural-scale hyperparameters at the mode.
    pub hyper: Vec<f64>,
    /// `[draw][1 + p]`: intercept then α.
    pub coefficients: Vec<Vec<f64>>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub variable: String,
    pub mode: FitMode,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    /// SD the column was scaled by (1 for dummies and the intercept).
    pub sd: f64,
}

#[derive(Debug, Clone)]
pub struct ModifierPosterior {
    pub mode: FitMode,
    pub columns: Vec<String>,
    pub scales: Vec<f64>,
    /// Pooled `[draw][1 + p]`.
    pub coefficients: Vec<Vec<f64>>,
    pub fits: usize,
    pub failures: usize,
    pub hyper_names: Vec<String>,
    /// Hyperparameter modes, one row per successful fit.
    pub hyper: Vec<Vec<f64>>,
}

impl ModifierPosterior {
    pub fn effects(&self) -> Vec<EffectRow> {
        let names = std::iter::once("intercept".to_string()).chain(self.columns.iter().cloned());
        let sds = std::iter::once(1.0).chain(self.scales.iter().copied());
        names
            .zip(sds)
            .enumerate()
            .map(|(j, (variable, sd))| {
                let col: Vec<f64> = self.coefficients.iter().map(|c| c[j]).collect();
                let s = Summary::of(&col);
                EffectRow {
                    variable,
                    mode: self.mode,
                    median: s.median,
                    lower: s.lower,
                    upper: s.upper,
                    mean: stats::mean(&col),
                    sd,
                }
            })
            .collect()
    }

    pub fn summary(&self, variable: &str) -> Option<Summary> {
        let j = if variable == "intercept" {
            0
        } else {
            1 + self.columns.iter().position(|c| c == variable)?
        };
        Some(Summary::of(&self.coefficients.iter().map(|c| c[j]).collect::<Vec<_>>()))
    }
}

/// Fits the modifier model to one outcome vector.
#[allow(clippy::too_many_arguments)]
pub fn fit_modifiers(
    outcome: &[f64],
    design: &ModifierDesign,
    structure: Arc<ScaledStructure>,
    canton_of: &[usize],
    n_cantons: usize,
    config: &ModifierConfig,
    init: Option<&[f64]>,
    seed: u64,
) -> Result<ModifierFit> {
    let (model, lay) = modifier_model(outcome, design, structure, canton_of, n_cantons, config)?;
    let default_init: Vec<f64> = model
        .hypers()
        .iter()
        .map(|h| if h.is_sigma() { 0.5f64.ln() } else { 0.0 })
        .collect();
    let start = init.unwrap_or(&default_init);
    let mut opts = OptimizeOptions::default();
    if init.is_some() {
        opts.initial_step = 0.25;
    }
    let res = optimize_hyper(&model, start, &opts)?;
    let draws = draw_posterior(&model, &res.best.approx, config.draws, seed)?;
    let coefficients = draws
        .latent
        .iter()
        .map(|x| x[lay.intercept..lay.alpha + lay.n_alpha].to_vec())
        .collect();
    Ok(ModifierFit {
        hyper: model.to_natural(&res.theta),
        hyper_names: model.hypers().iter().map(|h| h.name.clone()).collect(),
        theta: res.theta,
        coefficients,
        converged: res.converged,
    })
}

/// Fit to the per-area posterior median outcome.
pub fn fit_median(
    outcome_draws: &[Vec<f64>],
    design: &ModifierDesign,
    structure: Arc<ScaledStructure>,
    canton_of: &[usize],
    n_cantons: usize,
    config: &ModifierConfig,
) -> Result<(ModifierPosterior, ModifierFit)> {
    let median = area_medians(outcome_draws)?;
    let fit = fit_modifiers(&median, design, structure, canton_of, n_cantons, config, None, config.seed)?;
    let post = ModifierPosterior {
        mode: FitMode::Single,
        columns: design.columns.clone(),
        scales: design.scales.clone(),
        coefficients: fit.coefficients.clone(),
        fits: 1,
        failures: 0,
        hyper_names: fit.hyper_names.clone(),
        hyper: vec![fit.hyper.clone()],
    };
    Ok((post, fit))
}

/// `outcome_draws[draw][area]` → per-area medians.
pub fn area_medians(outcome_draws: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = outcome_draws.first().map_or(0, Vec::len);
    if n == 0 || outcome_draws.iter().any(|d| d.len() != n) {
        return Err(Error::input("outcome draws are empty or ragged"));
    }
    Ok((0..n)
        .map(|m| stats::quantile(&outcome_draws.iter().map(|d| d[m]).collect::<Vec<_>>(), 0.5))
        .collect())
}

/// Evenly spaced selection of `k` of `n` draw indices.
pub fn sample_indices(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|s| s * n / k).collect()
}

/// Refits on `config.samples` outcome draws (warm-started from `warm`) and
/// pools an equal number of coefficient draws per successful fit.
#[allow(clippy::too_many_arguments)]
pub fn propagate(
    outcome_draws: &[Vec<f64>],
    design: &ModifierDesign,
    structure: Arc<ScaledStructure>,
    canton_of: &[usize],
    n_cantons: usize,
    config: &ModifierConfig,
    warm: Option<&[f64]>,
) -> Result<ModifierPosterior> {
    if outcome_draws.len() < 2 || config.samples < 2 {
        return Err(Error::input("propagation needs at least two outcome samples"));
    }
    let picks = sample_indices(outcome_draws.len(), config.samples);
    let per_fit = (config.draws / picks.len()).max(1);
    let sub = ModifierConfig {
        draws: per_fit,
        ..config.clone()
    };
    let results: Vec<Result<ModifierFit>> = picks
        .par_iter()
        .enumerate()
        .map(|(s, &i)| {
            fit_modifiers(
                &outcome_draws[i],
                design,
                structure.clone(),
                canton_of,
                n_cantons,
                &sub,
                warm,
                config.seed.wrapping_add(1 + s as u64),
            )
        })
        .collect();
    let mut coefficients = Vec::new();
    let mut hyper = Vec::new();
    let mut failures = 0;
    let mut names = Vec::new();
    for r in results {
        match r {
            Ok(f) => {
                coefficients.extend(f.coefficients);
                hyper.push(f.hyper);
                names = f.hyper_names;
            }
            Err(_) => failures += 1,
        }
    }
    if hyper.is_empty() {
        return Err(Error::numeric(format!("all {} propagation fits failed", picks.len())));
    }
    Ok(ModifierPosterior {
        mode: FitMode::Propagated,
        columns: design.columns.clone(),
        scales: design.scales.clone(),
        coefficients,
        fits: hyper.len(),
        failures,
        hyper_names: names,
        hyper,
    })
}

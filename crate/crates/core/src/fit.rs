//! End-to-end fit of the heat model on an analysis table.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AreaGraph, ScaledStructure};
use crate::inference::{
    draw_posterior, draw_posterior_grid, optimize_hyper, GridOptions, OptimizeOptions, PosteriorDraws, TracePoint,
    DEFAULT_DRAWS,
};
use crate::ingest::AnalysisTable;
use crate::model::heat::{assemble, HeatModel, ModelConfig};
use crate::spline::SplineBasis;

/// Sensitivity analyses: (i) inverse-variance aggregation, (ii) looser
/// seasonality prior, (iii) unstructured interaction residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensitivity {
    I,
    Ii,
    Iii,
}

impl std::str::FromStr for Sensitivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(Self::I),
            "ii" => Ok(Self::Ii),
            "iii" => Ok(Self::Iii),
            other => Err(Error::input(format!("unknown sensitivity analysis '{other}' (expected i, ii or iii)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Draws at the hyperparameter mode.
    EmpiricalBayes,
    /// Draws mixed over a grid around the mode.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub draws: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub optimizer: OptimizeOptions,
    pub grid: GridOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            draws: DEFAULT_DRAWS,
            seed: 1,
            strategy: Strategy::EmpiricalBayes,
            optimizer: OptimizeOptions::default(),
            grid: GridOptions::default(),
        }
    }
}

impl FitConfig {
    pub fn apply_sensitivity(&mut self, s: Sensitivity) {
        match s {
            Sensitivity::I => {}
            Sensitivity::Ii => self.model.pc_seasonality_sd = ModelConfig::LOOSE_SEASONALITY,
            Sensitivity::Iii => self.model.interactions = true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRow {
    pub name: String,
    pub internal: f64,
    pub natural: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub converged: bool,
    pub warning: Option<String>,
    pub log_marginal: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub newton_iterations: usize,
    pub gradient_norm: f64,
    pub latent_dim: usize,
    pub n_records: usize,
    pub hyperparameters: Vec<HyperRow>,
    pub draws: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub trace: Vec<TracePoint>,
    /// Wall-clock stage timings, kept out of the serialized report so that
    /// reruns produce identical files.
    #[serde(skip)]
    pub seconds_assembly: f64,
    #[serde(skip)]
    pub seconds_optimize: f64,
    #[serde(skip)]
    pub seconds_draws: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: HeatModel,
    pub draws: PosteriorDraws,
    pub report: FitReport,
    /// Latent mode at the hyperparameter mode.
    pub mode: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Builds the spline basis from the table's exposures and assembles the
/// model.
pub fn build_model(table: &AnalysisTable, graph: Arc<AreaGraph>, config: &ModelConfig) -> Result<HeatModel> {
    config.validate()?;
    if graph.n_areas() != table.n_areas() {
        return Err(Error::input(format!(
            "graph has {} areas, data has {}",
            graph.n_areas(),
            table.n_areas()
        )));
    }
    let basis = SplineBasis::from_exposures(&table.exposures(), config.reference_temp)?;
    let structure = Arc::new(ScaledStructure::new(graph)?);
    assemble(table, &basis, structure, config)
}

pub fn fit(table: &AnalysisTable, graph: Arc<AreaGraph>, config: &FitConfig) -> Result<FitResult> {
    fit_from(table, graph, config, None)
}

/// As [`fit`], starting the hyperparameter search at `init` (internal
/// scale) when given.
pub fn fit_from(
    table: &AnalysisTable,
    graph: Arc<AreaGraph>,
    config: &FitConfig,
    init: Option<&[f64]>,
) -> Result<FitResult> {
    let t0 = Instant::now();
    let hm = build_model(table, graph, &config.model)?;
    let t1 = Instant::now();
    let start = match init {
        Some(t) if t.len() == hm.model.n_hypers() => t.to_vec(),
        Some(_) => return Err(Error::input("initial hyperparameters do not match the model")),
        None => hm.default_init(),
    };
    let opt = optimize_hyper(&hm.model, &start, &config.optimizer)?;
    let t2 = Instant::now();
    let approx = &opt.best.approx;
    let draws = match config.strategy {
        Strategy::EmpiricalBayes => draw_posterior(&hm.model, approx, config.draws, config.seed)?,
        Strategy::Grid => {
            draw_posterior_grid(&hm.model, approx, config.draws, config.seed, &config.grid, &config.optimizer.mode)?.0
        }
    };
    let t3 = Instant::now();
    let natural = hm.model.to_natural(&opt.theta);
    let report = FitReport {
        converged: opt.converged,
        warning: opt.warning.clone(),
        log_marginal: opt.log_marginal,
        evaluations: opt.evals,
        iterations: opt.iterations,
        newton_iterations: approx.iterations,
        gradient_norm: approx.gradient_norm,
        latent_dim: hm.model.dim(),
        n_records: table.len(),
        hyperparameters: hm
            .model
            .hypers()
            .iter()
            .zip(opt.theta.iter().zip(&natural))
            .map(|(h, (&i, &n))| HyperRow {
                name: h.name.clone(),
                internal: i,
                natural: n,
            })
            .collect(),
        draws: draws.len(),
        seed: config.seed,
        strategy: config.strategy,
        trace: opt.trace.clone(),
        seconds_assembly: (t1 - t0).as_secs_f64(),
        seconds_optimize: (t2 - t1).as_secs_f64(),
        seconds_draws: (t3 - t2).as_secs_f64(),
    };
    Ok(FitResult {
        mode: approx.mode.clone(),
        theta: opt.theta.clone(),
        model: hm,
        draws,
        report,
    })
}

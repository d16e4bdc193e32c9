//! The temperature-mortality model: Poisson counts with log-population
//! offset, spatially varying spline coefficients, calendar effects,
//! seasonality, year effects and a spatial residual.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hyper::{PcMixing, PcPair};
use super::{DesignBuilder, HyperSpec, LatentModel, Layout, Likelihood, PriorBlock};
use crate::error::{Error, Result};
use crate::graph::ScaledStructure;
use crate::ingest::{AnalysisTable, SUMMER_DAYS};
use crate::spline::{SplineBasis, DEFAULT_REFERENCE_TEMP};

pub const N_CALENDAR: usize = 7;

/// Prior settings and optional blocks of the heat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub reference_temp: f64,
    /// Precision of the intercept prior (a diffuse stand-in for a flat prior).
    pub intercept_precision: f64,
    /// Precision of the spline and calendar coefficient priors.
    pub fixed_precision: f64,
    pub pc_spline_sd: PcPair,
    pub pc_spatial_sd: PcPair,
    pub pc_year_sd: PcPair,
    pub pc_seasonality_sd: PcPair,
    pub pc_mixing: PcPair,
    pub pc_interaction_sd: PcPair,
    /// Adds unstructured year-by-area and day-by-area residuals.
    pub interactions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            reference_temp: DEFAULT_REFERENCE_TEMP,
            intercept_precision: 1e-6,
            fixed_precision: 1e-3,
            pc_spline_sd: PcPair::new(1.0, 0.01),
            pc_spatial_sd: PcPair::new(1.0, 0.01),
            pc_year_sd: PcPair::new(1.0, 0.01),
            pc_seasonality_sd: PcPair::new(0.01, 0.01),
            pc_mixing: PcPair::new(0.5, 0.5),
            pc_interaction_sd: PcPair::new(1.0, 0.01),
            interactions: false,
        }
    }
}

impl ModelConfig {
    /// The less restrictive seasonality prior used as a sensitivity check.
    pub const LOOSE_SEASONALITY: PcPair = PcPair::new(1.0, 0.01);

    pub fn validate(&self) -> Result<()> {
        self.pc_spline_sd.validate("pc_spline_sd")?;
        self.pc_spatial_sd.validate("pc_spatial_sd")?;
        self.pc_year_sd.validate("pc_year_sd")?;
        self.pc_seasonality_sd.validate("pc_seasonality_sd")?;
        self.pc_mixing.validate("pc_mixing")?;
        self.pc_interaction_sd.validate("pc_interaction_sd")?;
        if !(self.intercept_precision > 0.0 && self.fixed_precision > 0.0) {
            return Err(Error::input("fixed-effect precisions must be positive"));
        }
        if !self.reference_temp.is_finite() {
            return Err(Error::input("reference temperature must be finite"));
        }
        Ok(())
    }
}

/// Offsets of the heat-model blocks in the latent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatLayout {
    pub intercept: usize,
    pub beta: usize,
    pub gamma: usize,
    /// (field, u) offsets of the spatially varying spline coefficients.
    pub svc: Vec<(usize, usize)>,
    pub residual: (usize, usize),
    pub omega: usize,
    pub delta: usize,
    pub xi: Option<usize>,
    pub eta: Option<usize>,
    pub n_areas: usize,
    pub n_years: usize,
    pub n_basis: usize,
}

impl HeatLayout {
    /// Area-specific spline coefficients `β + β'_m` from a latent vector.
    pub fn area_coefficients(&self, x: &[f64], area: usize) -> Vec<f64> {
        (0..self.n_basis)
            .map(|j| x[self.beta + j] + x[self.svc[j].0 + area])
            .collect()
    }

    pub fn national_coefficients(&self, x: &[f64]) -> Vec<f64> {
        x[self.beta..self.beta + self.n_basis].to_vec()
    }

    /// Latent indices of fixed effects: intercept, spline, calendar.
    pub fn fixed_effects(&self) -> std::ops::Range<usize> {
        self.intercept..self.gamma + N_CALENDAR
    }
}

#[derive(Debug, Clone)]
pub struct HeatModel {
    pub model: LatentModel,
    pub basis: SplineBasis,
    pub structure: Arc<ScaledStructure>,
    pub layout: HeatLayout,
    pub config: ModelConfig,
}

/// Assembles the heat model over the rows of `table`. Area `m` of the
/// table maps to node `m` of the structure's graph.
pub fn assemble(
    table: &AnalysisTable,
    basis: &SplineBasis,
    structure: Arc<ScaledStructure>,
    config: &ModelConfig,
) -> Result<HeatModel> {
    config.validate()?;
    let n = table.n_areas();
    if structure.n_areas() != n {
        return Err(Error::input(format!(
            "graph has {} areas but the data has {n}",
            structure.n_areas()
        )));
    }
    let t_years = table.n_years();
    let k = basis.n_columns();
    let [lo, hi] = basis.boundary();

    let mut lay = Layout::default();
    let intercept = lay.push("intercept", 1);
    let beta = lay.push("beta", k);
    let gamma = lay.push("gamma", N_CALENDAR);
    let mut svc = Vec::with_capacity(k);
    for j in 0..k {
        let f = lay.push(format!("beta_field{}", j + 1), n);
        let u = lay.push(format!("beta_u{}", j + 1), n);
        svc.push((f, u));
    }
    let residual = (lay.push("b_field", n), lay.push("b_u", n));
    let omega = lay.push("omega", SUMMER_DAYS);
    let delta = lay.push("delta", t_years);
    let (xi, eta) = if config.interactions {
        (Some(lay.push("xi", t_years * n)), Some(lay.push("eta", SUMMER_DAYS * n)))
    } else {
        (None, None)
    };

    let spectrum = structure.mixing_spectrum()?;
    let mixing = PcMixing::new(&spectrum, config.pc_mixing)?;
    let mut hypers = Vec::new();
    for j in 0..k {
        hypers.push(HyperSpec::sigma(format!("sigma_beta{}", j + 1), config.pc_spline_sd));
    }
    for j in 0..k {
        hypers.push(HyperSpec::mixing(format!("phi_beta{}", j + 1), mixing.clone()));
    }
    let sigma_b = hypers.len();
    hypers.push(HyperSpec::sigma("sigma_b", config.pc_spatial_sd));
    let phi_b = hypers.len();
    hypers.push(HyperSpec::mixing("phi_b", mixing));
    let sigma_omega = hypers.len();
    hypers.push(HyperSpec::sigma("sigma_omega", config.pc_seasonality_sd));
    let sigma_delta = hypers.len();
    hypers.push(HyperSpec::sigma("sigma_delta", config.pc_year_sd));

    let mut priors = vec![
        PriorBlock::Fixed {
            offset: intercept,
            len: 1,
            precision: config.intercept_precision,
        },
        PriorBlock::Fixed {
            offset: beta,
            len: k + N_CALENDAR,
            precision: config.fixed_precision,
        },
    ];
    for (j, &(f, u)) in svc.iter().enumerate() {
        priors.push(PriorBlock::Bym2 {
            field: f,
            u,
            structure: structure.clone(),
            sigma: j,
            phi: k + j,
        });
    }
    priors.push(PriorBlock::Bym2 {
        field: residual.0,
        u: residual.1,
        structure: structure.clone(),
        sigma: sigma_b,
        phi: phi_b,
    });
    priors.push(PriorBlock::Rw2 {
        offset: omega,
        len: SUMMER_DAYS,
        sigma: sigma_omega,
    });
    priors.push(PriorBlock::Iid {
        offset: delta,
        len: t_years,
        sigma: sigma_delta,
    });
    if let (Some(xi), Some(eta)) = (xi, eta) {
        let s_xi = hypers.len();
        hypers.push(HyperSpec::sigma("sigma_xi", config.pc_interaction_sd));
        let s_eta = hypers.len();
        hypers.push(HyperSpec::sigma("sigma_eta", config.pc_interaction_sd));
        priors.push(PriorBlock::Iid {
            offset: xi,
            len: t_years * n,
            sigma: s_xi,
        });
        priors.push(PriorBlock::Iid {
            offset: eta,
            len: SUMMER_DAYS * n,
            sigma: s_eta,
        });
    }

    let mut builder = DesignBuilder::new(lay.dim());
    let mut offsets = Vec::with_capacity(table.len());
    let mut counts = Vec::with_capacity(table.len());
    let mut entries = Vec::with_capacity(2 * k + N_CALENDAR + 6);
    for (r, row) in table.rows.iter().enumerate() {
        let m = table.area_index[r];
        let d = table.day_index[r];
        let t = table.year_index[r];
        if !(lo..=hi).contains(&row.exposure) {
            return Err(Error::input(format!(
                "exposure {} (area {}, {}) is outside the basis domain [{lo}, {hi}]",
                row.exposure, row.area_id, row.date
            )));
        }
        let b = basis.evaluate(row.exposure, true)?;
        entries.clear();
        entries.push((intercept, 1.0));
        for j in 0..k {
            entries.push((beta + j, b[j]));
            entries.push((svc[j].0 + m, b[j]));
        }
        for (c, v) in row.calendar().as_row().into_iter().enumerate() {
            if v != 0.0 {
                entries.push((gamma + c, v));
            }
        }
        entries.push((residual.0 + m, 1.0));
        entries.push((omega + d, 1.0));
        entries.push((delta + t, 1.0));
        if let (Some(xi), Some(eta)) = (xi, eta) {
            entries.push((xi + t * n + m, 1.0));
            entries.push((eta + d * n + m, 1.0));
        }
        builder.push_row(&entries)?;
        offsets.push(row.population.ln());
        counts.push(f64::from(row.deaths));
    }

    let model = LatentModel::new(
        lay,
        builder.build(),
        offsets,
        Likelihood::poisson(counts),
        priors,
        hypers,
    )?;
    Ok(HeatModel {
        model,
        basis: basis.clone(),
        structure,
        layout: HeatLayout {
            intercept,
            beta,
            gamma,
            svc,
            residual,
            omega,
            delta,
            xi,
            eta,
            n_areas: n,
            n_years: t_years,
            n_basis: k,
        },
        config: config.clone(),
    })
}

impl HeatModel {
    /// A moderate starting point for the hyperparameter search (internal
    /// scale): spline-field sd 0.1, residual sd 0.2, seasonality sd 0.01,
    /// year sd 0.05, mixing 0.5, interaction sd 0.05.
    pub fn default_init(&self) -> Vec<f64> {
        self.model
            .hypers()
            .iter()
            .map(|h| {
                let v = match h.name.as_str() {
                    n if n.starts_with("phi") => 0.5,
                    n if n.starts_with("sigma_beta") => 0.1,
                    "sigma_b" => 0.2,
                    "sigma_omega" => 0.01,
                    _ => 0.05,
                };
                h.to_internal(v).expect("admissible default")
            })
            .collect()
    }
}

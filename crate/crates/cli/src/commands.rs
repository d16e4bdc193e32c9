use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use heatrisk::error::{Error, Result};
use heatrisk::fit::{build_model, fit as fit_model, FitConfig, FitReport, Sensitivity};
use heatrisk::graph::{ComponentScaling, ScaledStructure};
use heatrisk::inference::PosteriorDraws;
use heatrisk::ingest::{
    build_analysis_table, load_graph, read_csv, read_matrix, write_csv, write_matrix, AnalysisTable, CantonRow as CantonMap,
    EdgeRow, IngestReport, StudyInputs,
};
use heatrisk::metrics::{compute_metrics, MetricsOptions, MetricsOutput, MetricsReport, WeightScheme};
use heatrisk::model::heat::{HeatModel, ModelConfig};
use heatrisk::modifiers::{fit_median, propagate, standardize, EffectRow, ModifierConfig, ModifierRecord};
use heatrisk::simulator::{simulate as run_simulation, SimConfig};
use heatrisk::spline::SplineBasis;
use serde::{Deserialize, Serialize};

use crate::manifest::{read_json, read_toml, write_json, write_toml, RunManifest};
use crate::tables::{
    curve_points, BurdenDraw, CantonRow, CurvePoint, MetricsRow, NationalMmt, SchemeComparison,
};
use crate::{AggregateArgs, FitArgs, MetricsArgs, ModifiersArgs, ReportArgs, SeasonalityPrior, SimulateArgs};

const DATA_FILES: [&str; 7] = [
    "deaths.csv",
    "population.csv",
    "temperature_grid.csv",
    "grid_weights.csv",
    "holidays.csv",
    "graph.csv",
    "cantons.csv",
];

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn files_in(dir: &Path, names: &[&str]) -> Vec<PathBuf> {
    names.iter().map(|n| dir.join(n)).collect()
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("simulate", &cfg, Some(cfg.seed))?;
    manifest.add_inputs(args.config.clone())?;
    let sim = manifest.time("simulate", || run_simulation(&cfg))?;
    manifest.time("write", || sim.write(&args.out))?;
    manifest.write(&args.out)
}

/// Serialized alongside the draws so later stages can rebuild the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutput {
    pub report: FitReport,
    pub basis: SplineBasis,
    pub scaling: Vec<ComponentScaling>,
    pub ingest: IngestReport,
    pub area_ids: Vec<u32>,
    pub canton_ids: Vec<u32>,
    pub latent_blocks: Vec<(String, usize, usize)>,
    pub sensitivity: Option<Sensitivity>,
}

#[derive(Serialize)]
struct FitRun<'a> {
    data: &'a Path,
    sensitivity: Option<Sensitivity>,
    fit: &'a FitConfig,
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let mut cfg: FitConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => FitConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.draws {
        cfg.draws = d;
    }
    if cfg.draws == 0 {
        return Err(Error::input("the number of draws must be positive"));
    }
    if let Some(s) = args.sensitivity {
        cfg.apply_sensitivity(s);
    }
    match args.seasonality_prior {
        Some(SeasonalityPrior::Loose) => cfg.model.pc_seasonality_sd = ModelConfig::LOOSE_SEASONALITY,
        Some(SeasonalityPrior::Default) => cfg.model.pc_seasonality_sd = ModelConfig::default().pc_seasonality_sd,
        None => {}
    }
    if let Some(s) = args.strategy {
        cfg.strategy = s.into();
    }
    cfg.model.validate()?;
    create_dir(&args.out)?;
    let run = FitRun {
        data: &args.data,
        sensitivity: args.sensitivity,
        fit: &cfg,
    };
    let mut manifest = RunManifest::new("fit", &run, Some(cfg.seed))?;
    manifest.add_inputs(files_in(&args.data, &DATA_FILES))?;
    manifest.add_inputs(args.config.clone())?;

    let (table, ingest, edges, cantons) = manifest.time("ingest", || {
        let inputs = StudyInputs::load(&args.data)?;
        let (table, ingest) = build_analysis_table(&inputs)?;
        let edges: Vec<EdgeRow> = read_csv(&args.data.join("graph.csv"))?;
        let cantons: Vec<CantonMap> = read_csv(&args.data.join("cantons.csv"))?;
        Ok((table, ingest, edges, cantons))
    })?;
    let (graph, canton_ids) = heatrisk::ingest::build_graph(&edges, &cantons, &table.area_ids)?;
    let res = fit_model(&table, Arc::new(graph), &cfg)?;
    manifest.timings.insert("assembly".into(), res.report.seconds_assembly);
    manifest.timings.insert("optimize".into(), res.report.seconds_optimize);
    manifest.timings.insert("draws".into(), res.report.seconds_draws);
    if let Some(w) = &res.report.warning {
        eprintln!("warning: {w}");
    }

    manifest.time("write", || {
        let out = &args.out;
        table.write(&out.join("analysis_table.csv"))?;
        write_csv(&out.join("graph.csv"), &edges)?;
        write_csv(&out.join("cantons.csv"), &cantons)?;
        let model = &res.model.model;
        write_matrix(&out.join("draws.csv"), &model.layout().labels(), &res.draws.latent)?;
        let hyper_names: Vec<String> = model.hypers().iter().map(|h| h.name.clone()).collect();
        write_matrix(&out.join("hyper_draws.csv"), &hyper_names, &res.draws.hyper)?;
        write_toml(&out.join("fit_config.toml"), &cfg)?;
        let output = FitOutput {
            report: res.report.clone(),
            basis: res.model.basis.clone(),
            scaling: res.model.structure.scaling().to_vec(),
            ingest,
            area_ids: table.area_ids.clone(),
            canton_ids,
            latent_blocks: model
                .layout()
                .blocks()
                .iter()
                .map(|b| (b.name.clone(), b.offset, b.len))
                .collect(),
            sensitivity: args.sensitivity,
        };
        write_json(&out.join("fit_report.json"), &output)
    })?;
    manifest.write(&args.out)
}

/// A fit directory reloaded into memory.
pub struct LoadedFit {
    pub table: AnalysisTable,
    pub model: HeatModel,
    pub draws: PosteriorDraws,
    pub canton_of: Vec<usize>,
    pub canton_ids: Vec<u32>,
}

const FIT_FILES: [&str; 7] = [
    "analysis_table.csv",
    "graph.csv",
    "cantons.csv",
    "draws.csv",
    "hyper_draws.csv",
    "fit_config.toml",
    "fit_report.json",
];

pub fn load_fit(dir: &Path) -> Result<LoadedFit> {
    let output: FitOutput = read_json(&dir.join("fit_report.json"))?;
    let cfg: FitConfig = read_toml(&dir.join("fit_config.toml"))?;
    let table = AnalysisTable::load(&dir.join("analysis_table.csv"))?;
    let (graph, canton_ids) = load_graph(dir, &table.area_ids)?;
    let canton_of = graph.canton_of().to_vec();
    let model = build_model(&table, Arc::new(graph), &cfg.model)?;
    if model.basis.knots != output.basis.knots {
        return Err(Error::input(format!(
            "{}: spline basis rebuilt from the analysis table differs from the fitted one",
            dir.display()
        )));
    }
    let draws_path = dir.join("draws.csv");
    let (header, latent) = read_matrix(&draws_path)?;
    if header != model.model.layout().labels() {
        return Err(Error::input(format!(
            "{}: columns do not match the model layout",
            draws_path.display()
        )));
    }
    let (_, hyper) = read_matrix(&dir.join("hyper_draws.csv"))?;
    if hyper.len() != latent.len() {
        return Err(Error::input("latent and hyperparameter draw counts differ"));
    }
    Ok(LoadedFit {
        table,
        model,
        draws: PosteriorDraws {
            latent,
            hyper,
            seed: output.report.seed,
        },
        canton_of,
        canton_ids,
    })
}

fn fit_manifest(command: &str, config: &impl Serialize, fit_dir: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(command, config, None)?;
    m.add_inputs(files_in(fit_dir, &FIT_FILES))?;
    if let Ok(fm) = RunManifest::load(fit_dir) {
        m.seed = fm.seed;
    }
    Ok(m)
}

#[derive(Serialize)]
struct MetricsRun<'a> {
    fit: &'a Path,
    options: &'a MetricsOptions,
}

fn burden_draws(out: &MetricsOutput) -> Vec<BurdenDraw> {
    out.areas
        .iter()
        .flat_map(|a| {
            a.burden.iter().zip(&a.mmt_draws).enumerate().map(|(d, (b, m))| BurdenDraw {
                area_id: a.area_id,
                draw: d,
                mmt: m.temperature,
                ech: b.ech,
                erh: b.erh,
                afh: b.afh,
            })
        })
        .collect()
}

pub fn metrics(args: &MetricsArgs) -> Result<()> {
    let opts = MetricsOptions {
        scheme: args.scheme,
        erh_threshold: args.erh_threshold,
        rr_threshold: args.rr_threshold,
    };
    create_dir(&args.out)?;
    let mut manifest = fit_manifest(
        "metrics",
        &MetricsRun {
            fit: &args.fit,
            options: &opts,
        },
        &args.fit,
    )?;
    let f = manifest.time("load", || load_fit(&args.fit))?;
    let out = manifest.time("metrics", || {
        compute_metrics(&f.model, &f.table, &f.draws, &f.canton_of, &f.canton_ids, &opts)
    })?;
    if out.report.mmt_fallbacks > 0 {
        eprintln!(
            "warning: {} area draws had an empty MMT window and used the full grid",
            out.report.mmt_fallbacks
        );
    }
    if out.report.missing_afh_areas > 0 {
        eprintln!("warning: AFH missing for {} areas without deaths", out.report.missing_afh_areas);
    }
    manifest.time("write", || {
        let dir = &args.out;
        let rows: Vec<MetricsRow> = out.areas.iter().map(MetricsRow::from).collect();
        write_csv(&dir.join("metrics.csv"), &rows)?;
        write_csv(&dir.join("rr_curves.csv"), &curve_points(&out.area_curves))?;
        write_csv(&dir.join("canton_curves.csv"), &curve_points(&out.canton_curves))?;
        let cantons: Vec<CantonRow> = out.cantons.iter().map(CantonRow::from).collect();
        write_csv(&dir.join("canton_metrics.csv"), &cantons)?;
        write_csv(&dir.join("national_curves.csv"), &curve_points(&out.national_curves))?;
        let nat: Vec<NationalMmt> = out.national_mmt.iter().map(|(l, s)| NationalMmt::new(l, s)).collect();
        write_csv(&dir.join("national_mmt.csv"), &nat)?;
        write_csv(&dir.join("erh_draws.csv"), &burden_draws(&out))?;
        write_json(&dir.join("metrics_report.json"), &out.report)
    })?;
    manifest.write(&args.out)
}

#[derive(Serialize)]
struct AggregateRun<'a> {
    fit: &'a Path,
    scheme: WeightScheme,
}

pub fn aggregate(args: &AggregateArgs) -> Result<()> {
    create_dir(&args.out)?;
    let mut manifest = fit_manifest(
        "aggregate",
        &AggregateRun {
            fit: &args.fit,
            scheme: args.scheme,
        },
        &args.fit,
    )?;
    let f = manifest.time("load", || load_fit(&args.fit))?;
    let run = |scheme| {
        let opts = MetricsOptions {
            scheme,
            ..Default::default()
        };
        compute_metrics(&f.model, &f.table, &f.draws, &f.canton_of, &f.canton_ids, &opts)
    };
    let (pop, var) = manifest.time("aggregate", || {
        Ok((run(WeightScheme::Population)?, run(WeightScheme::InverseVariance)?))
    })?;
    let chosen = match args.scheme {
        WeightScheme::Population => &pop,
        WeightScheme::InverseVariance => &var,
    };
    let comparison: Vec<SchemeComparison> = pop
        .canton_curves
        .iter()
        .zip(&var.canton_curves)
        .map(|(p, v)| SchemeComparison {
            canton_id: p.label.clone(),
            temperature: p.temperature,
            population: p.median,
            inverse_variance: v.median,
            difference: v.median - p.median,
        })
        .collect();
    let max_diff = comparison.iter().map(|c| c.difference.abs()).fold(0.0, f64::max);
    eprintln!("largest cantonal median logRR difference between schemes: {max_diff:.4}");
    manifest.time("write", || {
        let dir = &args.out;
        write_csv(&dir.join("canton_curves.csv"), &curve_points(&chosen.canton_curves))?;
        let cantons: Vec<CantonRow> = chosen.cantons.iter().map(CantonRow::from).collect();
        write_csv(&dir.join("canton_metrics.csv"), &cantons)?;
        write_csv(&dir.join("scheme_comparison.csv"), &comparison)
    })?;
    manifest.timings.insert("max_scheme_difference".into(), max_diff);
    manifest.write(&args.out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModifierReport {
    median_hyper: BTreeMap<String, f64>,
    propagated_fits: usize,
    propagated_failures: usize,
    samples: usize,
}

#[derive(Serialize)]
struct ModifiersRun<'a> {
    data: &'a Path,
    metrics: &'a Path,
    propagate: bool,
    config: &'a ModifierConfig,
}

pub fn modifiers(args: &ModifiersArgs) -> Result<()> {
    let mut cfg: ModifierConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => ModifierConfig::default(),
    };
    if let Some(n) = args.propagate {
        cfg.samples = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.draws {
        cfg.draws = d;
    }
    if cfg.draws == 0 {
        return Err(Error::input("the number of draws must be positive"));
    }
    create_dir(&args.out)?;
    let run = ModifiersRun {
        data: &args.data,
        metrics: &args.metrics,
        propagate: !args.median,
        config: &cfg,
    };
    let mut manifest = RunManifest::new("modifiers", &run, Some(cfg.seed))?;
    manifest.add_inputs(files_in(&args.data, &["modifiers.csv", "graph.csv", "cantons.csv"]))?;
    manifest.add_inputs([args.metrics.join("erh_draws.csv")])?;
    manifest.add_inputs(args.config.clone())?;

    let burden: Vec<BurdenDraw> = read_csv(&args.metrics.join("erh_draws.csv"))?;
    let mut area_ids: Vec<u32> = burden.iter().map(|b| b.area_id).collect();
    area_ids.sort_unstable();
    area_ids.dedup();
    let n_draws = burden.iter().map(|b| b.draw + 1).max().unwrap_or(0);
    if burden.len() != n_draws * area_ids.len() {
        return Err(Error::input("erh_draws.csv does not hold every draw for every area"));
    }
    let pos: BTreeMap<u32, usize> = area_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let mut outcome = vec![vec![0.0; area_ids.len()]; n_draws];
    for b in &burden {
        outcome[b.draw][pos[&b.area_id]] = b.erh;
    }

    let records: Vec<ModifierRecord> = read_csv(&args.data.join("modifiers.csv"))?;
    let design = standardize(&records)?.reorder(&area_ids)?;
    let (graph, canton_ids) = load_graph(&args.data, &area_ids)?;
    let canton_of = graph.canton_of().to_vec();
    let structure = Arc::new(ScaledStructure::new(Arc::new(graph))?);
    let n_cantons = canton_ids.len();

    let (single, fit) = manifest.time("median_fit", || {
        fit_median(&outcome, &design, structure.clone(), &canton_of, n_cantons, &cfg)
    })?;
    let mut effects: Vec<EffectRow> = single.effects();
    let mut report = ModifierReport {
        median_hyper: fit.hyper_names.iter().cloned().zip(fit.hyper.iter().copied()).collect(),
        propagated_fits: 0,
        propagated_failures: 0,
        samples: 0,
    };
    if !args.median {
        let pooled = manifest.time("propagate", || {
            propagate(&outcome, &design, structure.clone(), &canton_of, n_cantons, &cfg, Some(&fit.theta))
        })?;
        if pooled.failures > 0 {
            eprintln!("warning: {} of {} propagation fits failed", pooled.failures, pooled.failures + pooled.fits);
        }
        report.propagated_fits = pooled.fits;
        report.propagated_failures = pooled.failures;
        report.samples = cfg.samples.min(n_draws);
        effects.extend(pooled.effects());
    }
    write_csv(&args.out.join("modifier_effects.csv"), &effects)?;
    write_json(&args.out.join("modifier_report.json"), &report)?;
    manifest.write(&args.out)
}

#[derive(Debug, Serialize)]
struct Report {
    fit: FitSummary,
    /// Nationwide curves, per-area MMT and burden.
    national: National,
    /// Cantonal curves and heat RR.
    cantonal: Cantonal,
    /// Effect-modifier estimates.
    modifiers: Option<Vec<EffectRow>>,
}

#[derive(Debug, Serialize)]
struct FitSummary {
    converged: bool,
    log_marginal: f64,
    hyperparameters: Vec<heatrisk::fit::HyperRow>,
    draws: usize,
    basis_knots: Vec<f64>,
    boundary_knots: [f64; 2],
}

#[derive(Debug, Serialize)]
struct National {
    national_curves: Vec<CurvePoint>,
    national_mmt: Vec<NationalMmt>,
    areas: Vec<MetricsRow>,
    totals: Totals,
}

#[derive(Debug, Serialize)]
struct Totals {
    /// Sum of area ECH medians.
    ech: f64,
    erh_threshold: f64,
    rr_threshold: f64,
}

#[derive(Debug, Serialize)]
struct Cantonal {
    cantons: Vec<CantonRow>,
    canton_curves: Vec<CurvePoint>,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    create_dir(&args.out)?;
    let mut manifest = RunManifest::new(
        "report",
        &[("fit", &args.fit), ("metrics", &args.metrics)],
        None,
    )?;
    manifest.add_inputs(files_in(&args.fit, &["fit_report.json"]))?;
    let metric_files = [
        "metrics.csv",
        "national_curves.csv",
        "national_mmt.csv",
        "canton_metrics.csv",
        "canton_curves.csv",
        "metrics_report.json",
    ];
    manifest.add_inputs(files_in(&args.metrics, &metric_files))?;
    let fit: FitOutput = read_json(&args.fit.join("fit_report.json"))?;
    let m = &args.metrics;
    let areas: Vec<MetricsRow> = read_csv(&m.join("metrics.csv"))?;
    let national_curves: Vec<CurvePoint> = read_csv(&m.join("national_curves.csv"))?;
    let national_mmt: Vec<NationalMmt> = read_csv(&m.join("national_mmt.csv"))?;
    let cantons: Vec<CantonRow> = read_csv(&m.join("canton_metrics.csv"))?;
    let canton_curves: Vec<CurvePoint> = read_csv(&m.join("canton_curves.csv"))?;
    let mreport: MetricsReport = read_json(&m.join("metrics_report.json"))?;
    let effects = match &args.modifiers {
        Some(dir) => {
            let path = dir.join("modifier_effects.csv");
            manifest.add_inputs([path.clone()])?;
            Some(read_csv::<EffectRow>(&path)?)
        }
        None => None,
    };
    let report = Report {
        fit: FitSummary {
            converged: fit.report.converged,
            log_marginal: fit.report.log_marginal,
            hyperparameters: fit.report.hyperparameters.clone(),
            draws: fit.report.draws,
            basis_knots: fit.basis.knots.interior.clone(),
            boundary_knots: fit.basis.knots.boundary,
        },
        national: National {
            totals: Totals {
                ech: areas.iter().map(|a| a.ech).sum(),
                erh_threshold: mreport.erh_threshold,
                rr_threshold: mreport.rr_threshold,
            },
            national_curves,
            national_mmt,
            areas,
        },
        cantonal: Cantonal { cantons, canton_curves },
        modifiers: effects,
    };
    let dir = &args.out;
    write_json(&dir.join("report.json"), &report)?;
    write_csv(&dir.join("national_curves.csv"), &report.national.national_curves)?;
    write_csv(&dir.join("national_mmt.csv"), &report.national.national_mmt)?;
    write_csv(&dir.join("areas.csv"), &report.national.areas)?;
    write_csv(&dir.join("cantons.csv"), &report.cantonal.cantons)?;
    write_csv(&dir.join("canton_curves.csv"), &report.cantonal.canton_curves)?;
    if let Some(e) = &report.modifiers {
        write_csv(&dir.join("modifier_effects.csv"), e)?;
    }
    manifest.write(&args.out)
}

//! Epidemiological summaries of posterior draws: logRR curves, minimum
//! mortality temperature, heat burden, exceedance and cantonal aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::ingest::AnalysisTable;
use crate::model::heat::{HeatLayout, HeatModel};
use crate::spline::SplineBasis;
use crate::stats::{self, Summary};

/// ERH is reported per this many residents.
pub const ERH_PER: f64 = 1000.0;
/// Exposure percentiles bounding the MMT search.
pub const MMT_WINDOW: (f64, f64) = (0.25, 0.90);
pub const MIN_EXCEEDANCE_DRAWS: usize = 100;

/// Centered basis rows on the evaluation grid.
#[derive(Debug, Clone)]
pub struct CurveGrid {
    pub temps: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl CurveGrid {
    pub fn new(basis: &SplineBasis) -> Result<Self> {
        Self::at(basis, basis.grid())
    }

    pub fn at(basis: &SplineBasis, temps: Vec<f64>) -> Result<Self> {
        let [lo, hi] = basis.boundary();
        if temps.iter().any(|&t| t < lo || t > hi) {
            return Err(Error::input("curve grid extends outside the basis domain"));
        }
        let rows = basis.design(&temps)?;
        Ok(Self { temps, rows })
    }

    pub fn len(&self) -> usize {
        self.temps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temps.is_empty()
    }

    /// logRR★ on the grid for one coefficient vector.
    pub fn curve(&self, coef: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(coef).map(|(b, c)| b * c).sum())
            .collect()
    }

    /// Index of the nearest grid temperature; exact midpoints go to the
    /// lower index.
    pub fn nearest(&self, x: f64) -> usize {
        let t = &self.temps;
        let i = t.partition_point(|&v| v < x);
        if i == 0 {
            return 0;
        }
        if i == t.len() {
            return t.len() - 1;
        }
        if x - t[i - 1] <= t[i] - x { i - 1 } else { i }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mmt {
    pub index: usize,
    pub temperature: f64,
    /// Percentile (0-100) of the MMT in the exposure distribution.
    pub percentile: f64,
    /// The percentile window held no grid point; the full grid was searched.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RrCurve {
    pub area_id: u32,
    pub draw_id: usize,
    pub values: Vec<f64>,
    pub mmt: Option<Mmt>,
}

impl RrCurve {
    /// Locates the MMT and shifts the curve to zero there.
    pub fn center_on_mmt(&mut self, grid: &CurveGrid, window: &ExposureWindow) {
        let m = find_mmt(&self.values, &grid.temps, window);
        rescale_to_mmt(&mut self.values, m.index);
        self.mmt = Some(m);
    }
}

/// Empirical exposure distribution of an area with its MMT search window.
#[derive(Debug, Clone)]
pub struct ExposureWindow {
    sorted: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl ExposureWindow {
    pub fn new(exposures: &[f64]) -> Result<Self> {
        if exposures.is_empty() {
            return Err(Error::input("no exposure values to define the MMT window"));
        }
        let sorted = stats::sorted_copy(exposures);
        Ok(Self {
            lower: stats::quantile_sorted(&sorted, MMT_WINDOW.0),
            upper: stats::quantile_sorted(&sorted, MMT_WINDOW.1),
            sorted,
        })
    }

    pub fn percentile(&self, x: f64) -> f64 {
        stats::percentile_rank_sorted(&self.sorted, x)
    }
}

/// Grid minimum of `values` within the window, ties to the lowest
/// temperature.
pub fn find_mmt(values: &[f64], temps: &[f64], window: &ExposureWindow) -> Mmt {
    let pick = |keep: &dyn Fn(f64) -> bool| {
        let mut best: Option<usize> = None;
        for (i, (&v, &t)) in values.iter().zip(temps).enumerate() {
            if keep(t) && best.is_none_or(|b| v < values[b]) {
                best = Some(i);
            }
        }
        best
    };
    let (index, fallback) = match pick(&|t| t >= window.lower && t <= window.upper) {
        Some(i) => (i, false),
        None => (pick(&|_| true).expect("non-empty grid"), true),
    };
    Mmt {
        index,
        temperature: temps[index],
        percentile: window.percentile(temps[index]),
        fallback,
    }
}

pub fn rescale_to_mmt(values: &mut [f64], index: usize) {
    let at = values[index];
    for v in values.iter_mut() {
        *v -= at;
    }
}

/// logRR★ curves for every area and draw.
pub fn logrr_curves(draws: &PosteriorDraws, layout: &HeatLayout, grid: &CurveGrid, area_ids: &[u32]) -> Vec<RrCurve> {
    let mut out = Vec::with_capacity(draws.len() * area_ids.len());
    for (m, &area_id) in area_ids.iter().enumerate() {
        for (d, x) in draws.latent.iter().enumerate() {
            out.push(RrCurve {
                area_id,
                draw_id: d,
                values: grid.curve(&layout.area_coefficients(x, m)),
                mmt: None,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeathHistogram {
    pub area_id: u32,
    /// Deaths binned to the grid, Y_m(x).
    pub counts: Vec<f64>,
    /// Y_m
    pub total: f64,
    /// Mean daily population, P_m.
    pub population: f64,
}

/// Per-area death histograms in table area order.
pub fn bin_deaths(table: &AnalysisTable, grid: &CurveGrid) -> Vec<DeathHistogram> {
    let mut per_area: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); table.n_areas()];
    for (r, &a) in table.rows.iter().zip(&table.area_index) {
        per_area[a].push((r.exposure, f64::from(r.deaths), r.population));
    }
    per_area
        .into_iter()
        .zip(&table.area_ids)
        .map(|(recs, &id)| bin_deaths_weighted(id, recs, grid))
        .collect()
}

/// Histogram from `(exposure, deaths, population)` day records; deaths may
/// be fractional (expected counts).
pub fn bin_deaths_weighted(
    area_id: u32,
    records: impl IntoIterator<Item = (f64, f64, f64)>,
    grid: &CurveGrid,
) -> DeathHistogram {
    let mut h = DeathHistogram {
        area_id,
        counts: vec![0.0; grid.len()],
        total: 0.0,
        population: 0.0,
    };
    let mut days = 0usize;
    for (x, y, p) in records {
        h.counts[grid.nearest(x)] += y;
        h.total += y;
        h.population += p;
        days += 1;
    }
    h.population /= days.max(1) as f64;
    h
}

/// (RR - 1) / RR from logRR.
pub fn attributable_fraction(logrr: f64) -> f64 {
    -(-logrr).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Burden {
    pub ech: f64,
    /// Per [`ERH_PER`] residents.
    pub erh: f64,
    /// Missing when the area has no deaths.
    pub afh: Option<f64>,
}

/// Heat burden of one MMT-rescaled curve: sums over grid points strictly
/// above the MMT.
pub fn heat_burden(values: &[f64], mmt_index: usize, hist: &DeathHistogram) -> Burden {
    let ech: f64 = values[mmt_index + 1..]
        .iter()
        .zip(&hist.counts[mmt_index + 1..])
        .map(|(&v, &y)| attributable_fraction(v) * y)
        .sum();
    Burden {
        ech,
        erh: ech / hist.population * ERH_PER,
        afh: (hist.total > 0.0).then(|| ech / hist.total),
    }
}

/// Fraction of draws strictly above `threshold`.
pub fn exceedance(values: &[f64], threshold: f64) -> Result<f64> {
    if values.len() < MIN_EXCEEDANCE_DRAWS {
        return Err(Error::input(format!(
            "exceedance probabilities need at least {MIN_EXCEEDANCE_DRAWS} draws, got {}",
            values.len()
        )));
    }
    Ok(values.iter().filter(|&&v| v > threshold).count() as f64 / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Population,
    InverseVariance,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(Self::Population),
            "inverse-variance" | "variance" => Ok(Self::InverseVariance),
            other => Err(Error::input(format!("unknown weighting scheme '{other}'"))),
        }
    }
}

/// Within-canton weights, `[area][coefficient]`. `variances[k][j]` is the
/// posterior variance of coefficient j in area k (used by the
/// inverse-variance scheme only).
pub fn canton_weights(
    scheme: WeightScheme,
    canton_of: &[usize],
    n_cantons: usize,
    populations: &[f64],
    variances: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let n = canton_of.len();
    let k = variances.first().map_or(0, Vec::len);
    if populations.len() != n || variances.len() != n || canton_of.iter().any(|&c| c >= n_cantons) {
        return Err(Error::input("canton map, populations and variances disagree in size"));
    }
    let raw: Vec<Vec<f64>> = match scheme {
        WeightScheme::Population => populations.iter().map(|&p| vec![p; k]).collect(),
        WeightScheme::InverseVariance => variances
            .iter()
            .map(|v| v.iter().map(|&s| if s > 0.0 { 1.0 / s } else { f64::INFINITY }).collect())
            .collect(),
    };
    let mut totals = vec![vec![0.0; k]; n_cantons];
    for (a, w) in raw.iter().enumerate() {
        for (t, v) in totals[canton_of[a]].iter_mut().zip(w) {
            *t += v;
        }
    }
    let mut out = raw;
    for (a, w) in out.iter_mut().enumerate() {
        let c = canton_of[a];
        for (j, v) in w.iter_mut().enumerate() {
            let t = totals[c][j];
            if !(t > 0.0) {
                return Err(Error::input(format!("canton {c} has zero total population")));
            }
            if !t.is_finite() {
                return Err(Error::input(format!(
                    "coefficient {j} has zero posterior variance in canton {c}"
                )));
            }
            *v /= t;
        }
    }
    Ok(out)
}

/// Cantonal coefficients `β_jc = Σ_k w_jk β_jk` for one draw.
pub fn aggregate_canton(area_coefs: &[Vec<f64>], weights: &[Vec<f64>], canton_of: &[usize], n_cantons: usize) -> Vec<Vec<f64>> {
    let k = area_coefs.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; k]; n_cantons];
    for (a, coef) in area_coefs.iter().enumerate() {
        let dst = &mut out[canton_of[a]];
        for ((d, c), w) in dst.iter_mut().zip(coef).zip(&weights[a]) {
            *d += c * w;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub scheme: WeightScheme,
    /// Defaults to the mean of the area ERH medians.
    pub erh_threshold: Option<f64>,
    /// Defaults to the mean of the cantonal heat-RR medians.
    pub rr_threshold: Option<f64>,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            scheme: WeightScheme::Population,
            erh_threshold: None,
            rr_threshold: None,
        }
    }
}

/// Pointwise posterior summary of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub label: String,
    pub temperature: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaMetrics {
    pub area_id: u32,
    pub mmt: Summary,
    pub mmp: Summary,
    pub fallback_draws: usize,
    pub ech: Summary,
    pub erh: Summary,
    pub afh: Option<Summary>,
    pub erh_exceedance: Option<f64>,
    #[serde(skip)]
    pub burden: Vec<Burden>,
    #[serde(skip)]
    pub mmt_draws: Vec<Mmt>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CantonMetrics {
    pub canton_id: u32,
    pub n_areas: usize,
    pub mmt: Summary,
    /// Mean RR over grid temperatures above the cantonal MMT.
    pub heat_rr: Summary,
    pub rr_exceedance: Option<f64>,
    #[serde(skip)]
    pub heat_rr_draws: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_draws: usize,
    pub mmt_fallbacks: usize,
    pub missing_afh_areas: usize,
    pub erh_threshold: f64,
    pub rr_threshold: f64,
    pub scheme: Option<WeightScheme>,
}

#[derive(Debug, Clone)]
pub struct MetricsOutput {
    pub grid: Vec<f64>,
    pub areas: Vec<AreaMetrics>,
    pub area_curves: Vec<CurveRow>,
    pub cantons: Vec<CantonMetrics>,
    pub canton_curves: Vec<CurveRow>,
    /// Labelled `fixed-effect` (β alone) and `population-weighted`.
    pub national_curves: Vec<CurveRow>,
    pub national_mmt: Vec<(String, Summary)>,
    pub report: MetricsReport,
}

struct CurveDraws {
    /// `[draw][grid]`, MMT-rescaled.
    curves: Vec<Vec<f64>>,
    mmts: Vec<Mmt>,
}

fn center_draws(grid: &CurveGrid, window: &ExposureWindow, coefs: impl Iterator<Item = Vec<f64>>) -> CurveDraws {
    let mut curves = Vec::new();
    let mut mmts = Vec::new();
    for c in coefs {
        let mut v = grid.curve(&c);
        let m = find_mmt(&v, &grid.temps, window);
        rescale_to_mmt(&mut v, m.index);
        curves.push(v);
        mmts.push(m);
    }
    CurveDraws { curves, mmts }
}

fn summarize_curve(label: &str, grid: &CurveGrid, curves: &[Vec<f64>]) -> Vec<CurveRow> {
    (0..grid.len())
        .map(|g| {
            let s = Summary::of(&curves.iter().map(|c| c[g]).collect::<Vec<_>>());
            CurveRow {
                label: label.to_string(),
                temperature: grid.temps[g],
                median: s.median,
                lower: s.lower,
                upper: s.upper,
            }
        })
        .collect()
}

fn summarize_mmt(mmts: &[Mmt]) -> (Summary, Summary) {
    let t: Vec<f64> = mmts.iter().map(|m| m.temperature).collect();
    let p: Vec<f64> = mmts.iter().map(|m| m.percentile).collect();
    (Summary::of(&t), Summary::of(&p))
}

/// Full metric pipeline over posterior draws of a heat model. `canton_of`
/// maps each table area to a dense canton index.
pub fn compute_metrics(
    hm: &HeatModel,
    table: &AnalysisTable,
    draws: &PosteriorDraws,
    canton_of: &[usize],
    canton_ids: &[u32],
    opts: &MetricsOptions,
) -> Result<MetricsOutput> {
    let n = table.n_areas();
    if draws.is_empty() {
        return Err(Error::input("no posterior draws"));
    }
    if canton_of.len() != n || canton_of.iter().any(|&c| c >= canton_ids.len()) {
        return Err(Error::input("canton map does not cover all areas"));
    }
    let grid = CurveGrid::new(&hm.basis)?;
    let hist = bin_deaths(table, &grid);
    let layout = &hm.layout;
    let n_draws = draws.len();

    let per_area: Vec<(AreaMetrics, Vec<CurveRow>)> = (0..n)
        .into_par_iter()
        .map(|m| -> Result<_> {
            let window = ExposureWindow::new(&table.area_exposures(m))?;
            let cd = center_draws(&grid, &window, draws.latent.iter().map(|x| layout.area_coefficients(x, m)));
            let burden: Vec<Burden> = cd
                .curves
                .iter()
                .zip(&cd.mmts)
                .map(|(c, mm)| heat_burden(c, mm.index, &hist[m]))
                .collect();
            let (mmt, mmp) = summarize_mmt(&cd.mmts);
            let ech: Vec<f64> = burden.iter().map(|b| b.ech).collect();
            let erh: Vec<f64> = burden.iter().map(|b| b.erh).collect();
            let afh: Option<Vec<f64>> = burden.iter().map(|b| b.afh).collect();
            let id = table.area_ids[m];
            Ok((
                AreaMetrics {
                    area_id: id,
                    mmt,
                    mmp,
                    fallback_draws: cd.mmts.iter().filter(|mm| mm.fallback).count(),
                    ech: Summary::of(&ech),
                    erh: Summary::of(&erh),
                    afh: afh.map(|a| Summary::of(&a)),
                    erh_exceedance: None,
                    burden,
                    mmt_draws: cd.mmts,
                },
                summarize_curve(&id.to_string(), &grid, &cd.curves),
            ))
        })
        .collect::<Result<_>>()?;
    let mut areas = Vec::with_capacity(n);
    let mut area_curves = Vec::with_capacity(n * grid.len());
    for (a, c) in per_area {
        areas.push(a);
        area_curves.extend(c);
    }
    let erh_threshold = opts
        .erh_threshold
        .unwrap_or_else(|| stats::mean(&areas.iter().map(|a| a.erh.median).collect::<Vec<_>>()));
    if n_draws >= MIN_EXCEEDANCE_DRAWS {
        for a in &mut areas {
            let erh: Vec<f64> = a.burden.iter().map(|b| b.erh).collect();
            a.erh_exceedance = Some(exceedance(&erh, erh_threshold)?);
        }
    }

    // Cantonal aggregation.
    let coef_draws: Vec<Vec<Vec<f64>>> = draws
        .latent
        .iter()
        .map(|x| (0..n).map(|m| layout.area_coefficients(x, m)).collect())
        .collect();
    let populations: Vec<f64> = hist.iter().map(|h| h.population).collect();
    let variances: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            (0..layout.n_basis)
                .map(|j| {
                    if n_draws < 2 {
                        1.0
                    } else {
                        stats::variance(&coef_draws.iter().map(|d| d[m][j]).collect::<Vec<_>>())
                    }
                })
                .collect()
        })
        .collect();
    let n_cantons = canton_ids.len();
    let weights = canton_weights(opts.scheme, canton_of, n_cantons, &populations, &variances)?;
    let canton_coefs: Vec<Vec<Vec<f64>>> = coef_draws
        .iter()
        .map(|d| aggregate_canton(d, &weights, canton_of, n_cantons))
        .collect();
    let mut cantons = Vec::with_capacity(n_cantons);
    let mut canton_curves = Vec::new();
    for (c, &cid) in canton_ids.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&m| canton_of[m] == c).collect();
        if members.is_empty() {
            continue;
        }
        let pooled: Vec<f64> = members.iter().flat_map(|&m| table.area_exposures(m)).collect();
        let window = ExposureWindow::new(&pooled)?;
        let cd = center_draws(&grid, &window, canton_coefs.iter().map(|d| d[c].clone()));
        let heat_rr: Vec<f64> = cd
            .curves
            .iter()
            .zip(&cd.mmts)
            .map(|(v, mm)| {
                let above = &v[mm.index + 1..];
                if above.is_empty() {
                    1.0
                } else {
                    above.iter().map(|l| l.exp()).sum::<f64>() / above.len() as f64
                }
            })
            .collect();
        canton_curves.extend(summarize_curve(&cid.to_string(), &grid, &cd.curves));
        cantons.push(CantonMetrics {
            canton_id: cid,
            n_areas: members.len(),
            mmt: summarize_mmt(&cd.mmts).0,
            heat_rr: Summary::of(&heat_rr),
            rr_exceedance: None,
            heat_rr_draws: heat_rr,
        });
    }
    let rr_threshold = opts
        .rr_threshold
        .unwrap_or_else(|| stats::mean(&cantons.iter().map(|c| c.heat_rr.median).collect::<Vec<_>>()));
    if n_draws >= MIN_EXCEEDANCE_DRAWS {
        for c in &mut cantons {
            c.rr_exceedance = Some(exceedance(&c.heat_rr_draws, rr_threshold)?);
        }
    }

    // National curves.
    let window = ExposureWindow::new(&table.exposures())?;
    let total_pop: f64 = populations.iter().sum();
    let fixed = center_draws(&grid, &window, draws.latent.iter().map(|x| layout.national_coefficients(x)));
    let pooled = center_draws(
        &grid,
        &window,
        coef_draws.iter().map(|d| {
            let mut acc = vec![0.0; layout.n_basis];
            for (coef, p) in d.iter().zip(&populations) {
                for (a, c) in acc.iter_mut().zip(coef) {
                    *a += c * p / total_pop;
                }
            }
            acc
        }),
    );
    let mut national_curves = summarize_curve("fixed-effect", &grid, &fixed.curves);
    national_curves.extend(summarize_curve("population-weighted", &grid, &pooled.curves));
    let national_mmt = vec![
        ("fixed-effect".to_string(), summarize_mmt(&fixed.mmts).0),
        ("population-weighted".to_string(), summarize_mmt(&pooled.mmts).0),
    ];

    let report = MetricsReport {
        n_draws,
        mmt_fallbacks: areas.iter().map(|a| a.fallback_draws).sum(),
        missing_afh_areas: areas.iter().filter(|a| a.afh.is_none()).count(),
        erh_threshold,
        rr_threshold,
        scheme: Some(opts.scheme),
    };
    Ok(MetricsOutput {
        grid: grid.temps,
        areas,
        area_curves,
        cantons,
        canton_curves,
        national_curves,
        national_mmt,
        report,
    })
}

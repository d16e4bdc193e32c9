//! Synthetic datasets with known truth on a lattice geography, written in
//! the same file layout the ingest step reads.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{queen_lattice, sample_bym2, AreaGraph, ScaledStructure};
use crate::ingest::{
    self, area_exposure, bundled_holidays, calendar_covariates, interpolate_population, lag_average, CantonRow,
    DeathRow, EdgeRow, GridCell, PopulationRow, StudyInputs, TemperatureRow, WeightRow, MAX_LAG, SUMMER_DAYS,
};
use crate::metrics::{bin_deaths_weighted, find_mmt, heat_burden, rescale_to_mmt, CurveGrid, ExposureWindow};
use crate::model::heat::N_CALENDAR;
use crate::modifiers::{Language, ModifierRecord, SepClass, Urbanicity};
use crate::spline::{Knots, SplineBasis, DEFAULT_REFERENCE_TEMP};

/// J-shaped national curve: linear below the threshold, quadratic above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveShape {
    pub threshold: f64,
    pub cold_slope: f64,
    pub heat_curvature: f64,
}

impl Default for CurveShape {
    fn default() -> Self {
        Self {
            threshold: 17.0,
            cold_slope: 0.01,
            heat_curvature: 0.002,
        }
    }
}

impl CurveShape {
    pub fn log_rr(&self, x: f64) -> f64 {
        let d = x - self.threshold;
        if d > 0.0 {
            self.heat_curvature * d * d
        } else {
            -self.cold_slope * d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureProcess {
    pub mean: f64,
    /// Change of the area mean across the lattice, west to east.
    pub gradient_x: f64,
    /// South to north.
    pub gradient_y: f64,
    /// Amplitude of the within-summer seasonal cycle.
    pub seasonal_amplitude: f64,
    pub ar_coefficient: f64,
    pub innovation_sd: f64,
    pub cells_per_area: usize,
    /// SD of cell deviations from the area temperature.
    pub cell_sd: f64,
}

impl Default for ExposureProcess {
    fn default() -> Self {
        Self {
            mean: 19.0,
            gradient_x: -3.0,
            gradient_y: 2.0,
            seasonal_amplitude: 3.0,
            ar_coefficient: 0.8,
            innovation_sd: 2.0,
            cells_per_area: 2,
            cell_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub nx: usize,
    pub ny: usize,
    /// Canton blocks along x and y.
    pub canton_blocks: [usize; 2],
    pub years: usize,
    pub first_year: i32,
    pub seed: u64,
    pub intercept: f64,
    pub gamma: [f64; N_CALENDAR],
    pub curve: CurveShape,
    pub reference_temp: f64,
    pub sigma_beta: f64,
    pub phi_beta: f64,
    pub sigma_b: f64,
    pub phi_b: f64,
    pub sigma_omega: f64,
    pub seasonality_amplitude: f64,
    pub sigma_delta: f64,
    pub population_range: [f64; 2],
    pub population_growth: f64,
    pub exposure: ExposureProcess,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nx: 10,
            ny: 10,
            canton_blocks: [2, 2],
            years: 3,
            first_year: 2015,
            seed: 1,
            intercept: (1.5e-4f64).ln(),
            gamma: [0.03, 0.01, 0.0, 0.01, 0.02, -0.02, 0.04],
            curve: CurveShape::default(),
            reference_temp: DEFAULT_REFERENCE_TEMP,
            sigma_beta: 0.1,
            phi_beta: 0.5,
            sigma_b: 0.15,
            phi_b: 0.6,
            sigma_omega: 0.002,
            seasonality_amplitude: 0.05,
            sigma_delta: 0.05,
            population_range: [5000.0, 30000.0],
            population_growth: 0.01,
            exposure: ExposureProcess::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx * self.ny < 4 || self.nx < 2 || self.ny < 2 {
            return Err(Error::input("lattice must be at least 2 x 2"));
        }
        let [bx, by] = self.canton_blocks;
        if bx == 0 || by == 0 || bx > self.nx || by > self.ny {
            return Err(Error::input("canton blocks must be between 1 and the lattice size"));
        }
        if self.years == 0 {
            return Err(Error::input("at least one simulated year is needed"));
        }
        let sds = [
            self.sigma_beta,
            self.sigma_b,
            self.sigma_omega,
            self.sigma_delta,
            self.exposure.innovation_sd,
            self.exposure.cell_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::input("variance parameters must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.phi_beta) || !(0.0..=1.0).contains(&self.phi_b) {
            return Err(Error::input("mixing parameters must lie in [0, 1]"));
        }
        let [lo, hi] = self.population_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::input("population range must be positive and ordered"));
        }
        if self.exposure.cells_per_area == 0 || !(self.exposure.ar_coefficient.abs() < 1.0) {
            return Err(Error::input("exposure process needs cells and a stationary AR coefficient"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn n_areas(&self) -> usize {
        self.nx * self.ny
    }
}

#[derive(Debug, Clone)]
pub struct Geography {
    pub graph: Arc<AreaGraph>,
    pub area_ids: Vec<u32>,
    pub canton_ids: Vec<u32>,
}

/// Queen lattice with node `y * nx + x`; cantons are rectangular blocks of
/// a `bx` by `by` partition.
pub fn synth_geography(nx: usize, ny: usize, blocks: [usize; 2]) -> Result<Geography> {
    if nx < 2 || ny < 2 {
        return Err(Error::input("lattice must be at least 2 x 2"));
    }
    let [bx, by] = blocks;
    if bx == 0 || by == 0 || bx > nx || by > ny {
        return Err(Error::input("canton blocks must be between 1 and the lattice size"));
    }
    let canton_of: Vec<usize> = (0..ny)
        .flat_map(|y| (0..nx).map(move |x| (y * by / ny) * bx + x * bx / nx))
        .collect();
    let graph = AreaGraph::build(nx * ny, &queen_lattice(nx, ny), canton_of)?;
    Ok(Geography {
        area_ids: (1..=(nx * ny) as u32).collect(),
        canton_ids: (1..=(bx * by) as u32).collect(),
        graph: Arc::new(graph),
    })
}

/// Daily values of one simulated area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDay {
    pub date: NaiveDate,
    pub population: f64,
    pub exposure: f64,
    /// Expected deaths.
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    pub area_ids: Vec<u32>,
    pub canton_ids: Vec<u32>,
    /// Canton id of each area.
    pub canton_of: Vec<u32>,
    pub knots: Knots,
    pub reference_temp: f64,
    pub intercept: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// `[coefficient][area]`
    pub beta_prime: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub omega: Vec<f64>,
    pub delta: Vec<f64>,
    pub grid: Vec<f64>,
    /// `[area][grid]`, zero at each area's MMT.
    pub curves: Vec<Vec<f64>>,
    pub mmt: Vec<f64>,
    pub mmp: Vec<f64>,
    /// Heat-excess rate per 1,000 from expected counts.
    pub erh: Vec<f64>,
    pub ech: Vec<f64>,
    /// Area mean of the exposure over the study period.
    pub mean_exposure: Vec<f64>,
    #[serde(skip)]
    pub days: Vec<Vec<SimDay>>,
    #[serde(skip)]
    pub temperature: Vec<TemperatureRow>,
    #[serde(skip)]
    pub weights: Vec<WeightRow>,
    #[serde(skip)]
    pub population: Vec<PopulationRow>,
}

impl SimTruth {
    pub fn basis(&self) -> Result<SplineBasis> {
        SplineBasis::new(self.knots.clone(), self.reference_temp)
    }

    /// Area coefficients `β + β'_m`.
    pub fn area_coefficients(&self, m: usize) -> Vec<f64> {
        self.beta.iter().zip(&self.beta_prime).map(|(b, bp)| b + bp[m]).collect()
    }
}

/// Study dates (June-August of each year) and the lag pre-period.
fn study_dates(first_year: i32, years: usize) -> (Vec<NaiveDate>, Vec<NaiveDate>) {
    let mut study = Vec::new();
    let mut all = Vec::new();
    for y in 0..years as i32 {
        let june1 = NaiveDate::from_ymd_opt(first_year + y, 6, 1).unwrap();
        for lag in (1..=MAX_LAG).rev() {
            all.push(june1 - Duration::days(lag));
        }
        for d in 0..SUMMER_DAYS as i64 {
            study.push(june1 + Duration::days(d));
            all.push(june1 + Duration::days(d));
        }
    }
    (study, all)
}

/// Least-squares projection of a function onto the centered basis on the grid.
fn project_curve(basis: &SplineBasis, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let grid = basis.grid();
    let rows = basis.design(&grid)?;
    let k = basis.n_columns();
    let x = DMatrix::from_fn(grid.len(), k, |i, j| rows[i][j]);
    let ref_val = f(basis.reference_temp);
    let y = DVector::from_iterator(grid.len(), grid.iter().map(|&g| f(g) - ref_val));
    let xtx = x.transpose() * &x;
    let sol = xtx
        .cholesky()
        .ok_or_else(|| Error::numeric("spline design is rank deficient"))?
        .solve(&(x.transpose() * y));
    Ok(sol.iter().copied().collect())
}

/// Removes the mean and the centered linear trend.
fn project_rw2_constraints(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let c = (n - 1.0) / 2.0;
    let sxx: f64 = (0..v.len()).map(|i| (i as f64 - c).powi(2)).sum();
    let sxy: f64 = v.iter().enumerate().map(|(i, x)| (i as f64 - c) * x).sum();
    let slope = sxy / sxx;
    for (i, x) in v.iter_mut().enumerate() {
        *x -= mean + slope * (i as f64 - c);
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws the exposure process, latent fields and expected counts.
pub fn synth_truth(config: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimTruth> {
    config.validate()?;
    let geo = synth_geography(config.nx, config.ny, config.canton_blocks)?;
    let structure = ScaledStructure::new(geo.graph.clone())?;
    let n = config.n_areas();
    let ex = &config.exposure;
    let (study, all_dates) = study_dates(config.first_year, config.years);

    // Exposure process: cell temperatures around an AR(1) area series.
    let mut temperature = Vec::new();
    let mut weights = Vec::new();
    let mut area_series: Vec<BTreeMap<NaiveDate, f64>> = Vec::with_capacity(n);
    let stationary = ex.innovation_sd / (1.0 - ex.ar_coefficient.powi(2)).sqrt();
    for m in 0..n {
        let (gx, gy) = ((m % config.nx) as f64, (m / config.nx) as f64);
        let base = ex.mean
            + ex.gradient_x * (gx / (config.nx - 1) as f64 - 0.5)
            + ex.gradient_y * (gy / (config.ny - 1) as f64 - 0.5);
        let cells: Vec<(u32, f64)> = (0..ex.cells_per_area)
            .map(|k| ((m * ex.cells_per_area + k + 1) as u32, rng.random_range(0.2..1.0)))
            .collect();
        for &(cell_id, w) in &cells {
            weights.push(WeightRow {
                area_id: geo.area_ids[m],
                cell_id,
                weight: w,
            });
        }
        let mut ar = 0.0;
        let mut prev_year = None;
        let mut series = BTreeMap::new();
        for &d in &all_dates {
            if prev_year != Some(d.year()) {
                ar = stationary * normal(rng);
                prev_year = Some(d.year());
            } else {
                ar = ex.ar_coefficient * ar + ex.innovation_sd * normal(rng);
            }
            let phase = (d.ordinal0() as f64 - 151.0 + MAX_LAG as f64) / (SUMMER_DAYS as f64 + MAX_LAG as f64);
            let area_t = base + ex.seasonal_amplitude * (std::f64::consts::PI * phase).sin() + ar;
            let mut day_cells = Vec::with_capacity(cells.len());
            for &(cell_id, w) in &cells {
                // Round-tripped exactly through CSV by the shortest representation.
                let t = area_t + ex.cell_sd * normal(rng);
                temperature.push(TemperatureRow {
                    cell_id,
                    date: d,
                    temp: t,
                });
                day_cells.push(GridCell {
                    cell_id,
                    temperature: t,
                    population_weight: w,
                });
            }
            series.insert(d, area_exposure(&day_cells)?);
        }
        area_series.push(series);
    }
    let exposures: Vec<Vec<f64>> = area_series
        .iter()
        .map(|s| lag_average(s, &study))
        .collect::<Result<_>>()?;
    let all_exposures: Vec<f64> = exposures.iter().flatten().copied().collect();
    let basis = SplineBasis::from_exposures(&all_exposures, config.reference_temp)?;
    let k = basis.n_columns();

    // Populations: year-end anchors from the year before the study.
    let mut population = Vec::new();
    let mut daily_pop = Vec::with_capacity(n);
    let [plo, phi] = config.population_range;
    for m in 0..n {
        let p0: f64 = rng.random_range(plo..=phi);
        let anchors: Vec<(i32, f64)> = (0..=config.years as i32)
            .map(|y| {
                let year = config.first_year - 1 + y;
                (year, (p0 * (1.0 + config.population_growth).powi(y)).round())
            })
            .collect();
        for &(year, count) in &anchors {
            population.push(PopulationRow {
                area_id: geo.area_ids[m],
                year,
                count,
            });
        }
        daily_pop.push(interpolate_population(&anchors, &study)?);
    }

    // Latent fields.
    let beta = project_curve(&basis, |x| config.curve.log_rr(x))?;
    let beta_prime: Vec<Vec<f64>> = (0..k)
        .map(|_| sample_bym2(config.sigma_beta, config.phi_beta, &structure, rng))
        .collect::<Result<_>>()?;
    let b = sample_bym2(config.sigma_b, config.phi_b, &structure, rng)?;
    let mut omega: Vec<f64> = (0..SUMMER_DAYS)
        .map(|d| {
            let s = (d as f64 + 0.5) / SUMMER_DAYS as f64;
            config.seasonality_amplitude * (2.0 * std::f64::consts::PI * s).cos()
        })
        .collect();
    let mut slope = 0.0;
    let mut level = 0.0;
    for w in omega.iter_mut() {
        slope += config.sigma_omega * normal(rng);
        level += slope;
        *w += level;
    }
    project_rw2_constraints(&mut omega);
    let delta_dist = Normal::new(0.0, config.sigma_delta.max(0.0)).map_err(|e| Error::input(e.to_string()))?;
    let delta: Vec<f64> = (0..config.years).map(|_| delta_dist.sample(rng)).collect();
    let gamma = config.gamma.to_vec();

    let holidays = bundled_holidays();
    let mut truth = SimTruth {
        config: config.clone(),
        area_ids: geo.area_ids.clone(),
        canton_ids: geo.canton_ids.clone(),
        canton_of: (0..n).map(|m| geo.canton_ids[geo.graph.canton_of()[m]]).collect(),
        knots: basis.knots.clone(),
        reference_temp: basis.reference_temp,
        intercept: config.intercept,
        gamma,
        beta,
        beta_prime,
        b,
        omega,
        delta,
        grid: basis.grid(),
        curves: Vec::new(),
        mmt: Vec::new(),
        mmp: Vec::new(),
        erh: Vec::new(),
        ech: Vec::new(),
        mean_exposure: Vec::new(),
        days: Vec::new(),
        temperature,
        weights,
        population,
    };
    for m in 0..n {
        let coef = truth.area_coefficients(m);
        let days: Vec<SimDay> = study
            .iter()
            .enumerate()
            .map(|(i, &d)| -> Result<SimDay> {
                let x = exposures[m][i];
                let row = basis.evaluate(x, true)?;
                let cal = calendar_covariates(d, &holidays).as_row();
                let eta = truth.intercept
                    + row.iter().zip(&coef).map(|(a, c)| a * c).sum::<f64>()
                    + cal.iter().zip(&truth.gamma).map(|(a, g)| a * g).sum::<f64>()
                    + truth.b[m]
                    + truth.omega[ingest::summer_day_index(d)]
                    + truth.delta[(d.year() - config.first_year) as usize];
                Ok(SimDay {
                    date: d,
                    population: daily_pop[m][i],
                    exposure: x,
                    expected: daily_pop[m][i] * eta.exp(),
                })
            })
            .collect::<Result<_>>()?;
        truth.days.push(days);
    }
    let grid = CurveGrid::new(&basis)?;
    for m in 0..n {
        let days = &truth.days[m];
        let window = ExposureWindow::new(&exposures[m])?;
        let mut curve = grid.curve(&truth.area_coefficients(m));
        let mmt = find_mmt(&curve, &grid.temps, &window);
        rescale_to_mmt(&mut curve, mmt.index);
        let hist = bin_deaths_weighted(
            truth.area_ids[m],
            days.iter().map(|d| (d.exposure, d.expected, d.population)),
            &grid,
        );
        let burden = heat_burden(&curve, mmt.index, &hist);
        truth.curves.push(curve);
        truth.mmt.push(mmt.temperature);
        truth.mmp.push(mmt.percentile);
        truth.erh.push(burden.erh);
        truth.ech.push(burden.ech);
        truth.mean_exposure.push(exposures[m].iter().sum::<f64>() / exposures[m].len() as f64);
    }
    Ok(truth)
}

/// All files of a simulated dataset.
#[derive(Debug, Clone)]
pub struct SimFiles {
    pub deaths: Vec<DeathRow>,
    pub population: Vec<PopulationRow>,
    pub temperature: Vec<TemperatureRow>,
    pub weights: Vec<WeightRow>,
    pub holidays: Vec<NaiveDate>,
    pub edges: Vec<EdgeRow>,
    pub cantons: Vec<CantonRow>,
    pub modifiers: Vec<ModifierRecord>,
}

#[derive(Debug, Serialize)]
struct HolidayRow {
    date: NaiveDate,
}

impl SimFiles {
    pub fn study_inputs(&self) -> StudyInputs {
        StudyInputs {
            deaths: self.deaths.clone(),
            population: self.population.clone(),
            temperature: self.temperature.clone(),
            weights: self.weights.clone(),
            holidays: self.holidays.iter().copied().collect::<HashSet<_>>(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ingest::write_csv(&dir.join("deaths.csv"), &self.deaths)?;
        ingest::write_csv(&dir.join("population.csv"), &self.population)?;
        ingest::write_csv(&dir.join("temperature_grid.csv"), &self.temperature)?;
        ingest::write_csv(&dir.join("grid_weights.csv"), &self.weights)?;
        let hol: Vec<HolidayRow> = self.holidays.iter().map(|&date| HolidayRow { date }).collect();
        ingest::write_csv(&dir.join("holidays.csv"), &hol)?;
        ingest::write_csv(&dir.join("graph.csv"), &self.edges)?;
        ingest::write_csv(&dir.join("cantons.csv"), &self.cantons)?;
        ingest::write_csv(&dir.join("modifiers.csv"), &self.modifiers)
    }
}

/// Poisson counts around the expected values plus geography and modifier
/// files.
pub fn synth_data(truth: &SimTruth, rng: &mut ChaCha8Rng) -> Result<SimFiles> {
    let config = &truth.config;
    let geo = synth_geography(config.nx, config.ny, config.canton_blocks)?;
    let mut deaths = Vec::new();
    for (m, days) in truth.days.iter().enumerate() {
        for d in days {
            let y = if d.expected > 0.0 {
                Poisson::new(d.expected).map_err(|e| Error::numeric(e.to_string()))?.sample(rng) as u32
            } else {
                0
            };
            deaths.push(DeathRow {
                area_id: truth.area_ids[m],
                date: d.date,
                deaths: y,
            });
        }
    }
    let edges = geo
        .graph
        .edges()
        .into_iter()
        .map(|(a, b)| EdgeRow {
            area_a: truth.area_ids[a],
            area_b: truth.area_ids[b],
        })
        .collect();
    let cantons = truth
        .area_ids
        .iter()
        .zip(&truth.canton_of)
        .map(|(&area_id, &canton_id)| CantonRow { area_id, canton_id })
        .collect();
    let languages = [Language::German, Language::French, Language::Italian];
    let modifiers = (0..truth.area_ids.len())
        .map(|m| {
            let c = geo.graph.canton_of()[m];
            let sep = match rng.random_range(0..4) {
                0 => SepClass::Low,
                1 => SepClass::High,
                _ => SepClass::Baseline,
            };
            let urb = match rng.random_range(0..3) {
                0 => Urbanicity::Rural,
                1 => Urbanicity::SemiUrban,
                _ => Urbanicity::Urban,
            };
            ModifierRecord {
                area_id: truth.area_ids[m],
                pct_over_85: (3.0 + normal(rng)).max(0.1),
                ndvi: rng.random_range(0.1..0.8),
                mean_temp: truth.mean_exposure[m],
                no2: (150.0 + 50.0 * normal(rng)).max(5.0),
                sep_class: sep,
                urbanicity: urb,
                language: if geo.canton_ids.len() >= 3 {
                    languages[c.saturating_sub(geo.canton_ids.len() - 3).min(2)]
                } else {
                    languages[c % 3]
                },
            }
        })
        .collect();
    let years: Vec<i32> = (0..config.years as i32).map(|y| config.first_year + y).collect();
    let mut holidays: Vec<NaiveDate> = bundled_holidays()
        .into_iter()
        .filter(|d| years.contains(&d.year()))
        .collect();
    holidays.sort();
    Ok(SimFiles {
        deaths,
        population: truth.population.clone(),
        temperature: truth.temperature.clone(),
        weights: truth.weights.clone(),
        holidays,
        edges,
        cantons,
        modifiers,
    })
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: SimTruth,
    pub files: SimFiles,
}

/// Truth and data from one sequential RNG stream seeded by `config.seed`.
pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = synth_truth(config, &mut rng)?;
    let files = synth_data(&truth, &mut rng)?;
    Ok(Simulation { truth, files })
}

impl Simulation {
    /// Writes the dataset files, `truth.json` and the effective config.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.files.write(dir)?;
        let truth_path = dir.join("truth.json");
        let json = serde_json::to_string_pretty(&self.truth)?;
        std::fs::write(&truth_path, json).map_err(|e| Error::io(&truth_path, e))?;
        let cfg_path = dir.join("sim_config.toml");
        let text = toml::to_string(&self.truth.config).map_err(|e| Error::Config {
            path: cfg_path.clone(),
            message: e.to_string(),
        })?;
        std::fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))
    }
}

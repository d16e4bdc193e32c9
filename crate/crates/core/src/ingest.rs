//! Reading the study files and deriving the daily analysis table:
//! interpolated populations, population-weighted lag-averaged exposures and
//! calendar covariates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AreaGraph;

/// Number of days before each study day that enter the exposure average.
pub const MAX_LAG: i64 = 3;

const BUNDLED_HOLIDAYS: &str = include_str!("../data/holidays.csv");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub cell_id: u32,
    pub temperature: f64,
    pub population_weight: f64,
}

/// Day-of-week indicators (Monday..Saturday; Sunday is the reference) and
/// the public-holiday flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CalendarCovariates {
    pub dow: [bool; 6],
    pub holiday: bool,
}

impl CalendarCovariates {
    /// Values of the 7 calendar columns (6 weekday indicators, holiday).
    pub fn as_row(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (o, &d) in out.iter_mut().zip(&self.dow) {
            *o = f64::from(u8::from(d));
        }
        out[6] = f64::from(u8::from(self.holiday));
        out
    }
}

/// Linear interpolation of year-end population counts. Anchors sit on
/// December 31 of their year; dates outside the anchor range take the
/// nearest anchor.
pub fn interpolate_population(yearly: &[(i32, f64)], dates: &[NaiveDate]) -> Result<Vec<f64>> {
    if yearly.is_empty() {
        return Err(Error::input("population interpolation needs at least one year"));
    }
    let mut anchors: Vec<(NaiveDate, f64)> = yearly
        .iter()
        .map(|&(y, c)| {
            NaiveDate::from_ymd_opt(y, 12, 31)
                .map(|d| (d, c))
                .ok_or_else(|| Error::input(format!("invalid population year {y}")))
        })
        .collect::<Result<_>>()?;
    anchors.sort_by_key(|a| a.0);
    if anchors.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::input("duplicate population year"));
    }
    Ok(dates
        .iter()
        .map(|&d| {
            let k = anchors.partition_point(|a| a.0 <= d);
            if k == 0 {
                anchors[0].1
            } else if k == anchors.len() {
                anchors[k - 1].1
            } else {
                let (d0, c0) = anchors[k - 1];
                let (d1, c1) = anchors[k];
                let frac = (d - d0).num_days() as f64 / (d1 - d0).num_days() as f64;
                c0 + frac * (c1 - c0)
            }
        })
        .collect())
}

/// Population-weighted mean temperature over the cells covering an area.
pub fn area_exposure(cells: &[GridCell]) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::input("area exposure needs at least one grid cell"));
    }
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for c in cells {
        if !(c.population_weight >= 0.0) || !c.temperature.is_finite() {
            return Err(Error::input(format!(
                "grid cell {}: invalid weight {} or temperature {}",
                c.cell_id, c.population_weight, c.temperature
            )));
        }
        wsum += c.population_weight;
        acc += c.population_weight * c.temperature;
    }
    if wsum <= 0.0 {
        return Err(Error::input("grid weights are all zero"));
    }
    Ok(acc / wsum)
}

/// Mean of lags 0..3 of a daily temperature series, for each target date.
/// Every target needs the three preceding days in `series`.
pub fn lag_average(series: &BTreeMap<NaiveDate, f64>, targets: &[NaiveDate]) -> Result<Vec<f64>> {
    targets
        .iter()
        .map(|&d| {
            let mut acc = 0.0;
            for lag in 0..=MAX_LAG {
                let day = d - Duration::days(lag);
                acc += series.get(&day).ok_or_else(|| {
                    Error::input(format!(
                        "cannot compute lagged exposure for {d}: temperature for {day} is missing"
                    ))
                })?;
            }
            Ok(acc / (MAX_LAG + 1) as f64)
        })
        .collect()
}

pub fn calendar_covariates(date: NaiveDate, holidays: &HashSet<NaiveDate>) -> CalendarCovariates {
    let mut dow = [false; 6];
    let idx = date.weekday().num_days_from_monday() as usize;
    if date.weekday() != Weekday::Sun {
        dow[idx] = true;
    }
    CalendarCovariates {
        dow,
        holiday: holidays.contains(&date),
    }
}

/// Holiday calendar shipped with the library (national day plus the
/// federal Christian holidays).
pub fn bundled_holidays() -> HashSet<NaiveDate> {
    parse_holidays(BUNDLED_HOLIDAYS.as_bytes(), Path::new("<bundled holidays>"))
        .expect("bundled holiday calendar parses")
}

#[derive(Deserialize)]
struct HolidayRow {
    date: NaiveDate,
}

fn parse_holidays(reader: impl std::io::Read, path: &Path) -> Result<HashSet<NaiveDate>> {
    let rows: Vec<HolidayRow> = read_csv_from(reader, path)?;
    Ok(rows.into_iter().map(|r| r.date).collect())
}

/// Whether `date` falls in June 1 - August 31.
pub fn is_summer(date: NaiveDate) -> bool {
    (6..=8).contains(&date.month())
}

/// Zero-based day index counted from June 1 of the same year.
pub fn summer_day_index(date: NaiveDate) -> usize {
    let june1 = NaiveDate::from_ymd_opt(date.year(), 6, 1).unwrap();
    (date - june1).num_days() as usize
}

pub const SUMMER_DAYS: usize = 92;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct DeathRow {
    pub area_id: u32,
    pub date: NaiveDate,
    pub deaths: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct PopulationRow {
    pub area_id: u32,
    pub year: i32,
    pub count: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct TemperatureRow {
    pub cell_id: u32,
    pub date: NaiveDate,
    pub temp: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct WeightRow {
    pub area_id: u32,
    pub cell_id: u32,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct EdgeRow {
    pub area_a: u32,
    pub area_b: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct CantonRow {
    pub area_id: u32,
    pub canton_id: u32,
}

/// Raw study inputs as read from disk.
#[derive(Debug, Clone)]
pub struct StudyInputs {
    pub deaths: Vec<DeathRow>,
    pub population: Vec<PopulationRow>,
    pub temperature: Vec<TemperatureRow>,
    pub weights: Vec<WeightRow>,
    pub holidays: HashSet<NaiveDate>,
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file, path)
}

fn read_csv_from<T: DeserializeOwned>(reader: impl std::io::Read, path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a numeric matrix with a header row.
pub fn write_matrix(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::input(format!("{}: row has {} values, header {}", path.display(), r.len(), header.len())));
        }
        w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a numeric matrix written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = rec
            .iter()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::input(format!("{}: bad number '{v}' on data row {}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

impl StudyInputs {
    /// Reads the five input files from `dir`. A missing `holidays.csv`
    /// falls back to the bundled calendar.
    pub fn load(dir: &Path) -> Result<Self> {
        let holidays_path = dir.join("holidays.csv");
        let holidays = if holidays_path.exists() {
            let file = std::fs::File::open(&holidays_path).map_err(|e| Error::io(&holidays_path, e))?;
            parse_holidays(file, &holidays_path)?
        } else {
            bundled_holidays()
        };
        Ok(Self {
            deaths: read_csv(&dir.join("deaths.csv"))?,
            population: read_csv(&dir.join("population.csv"))?,
            temperature: read_csv(&dir.join("temperature_grid.csv"))?,
            weights: read_csv(&dir.join("grid_weights.csv"))?,
            holidays,
        })
    }
}

/// One (area, day) row of the analysis table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub area_id: u32,
    pub date: NaiveDate,
    pub deaths: u32,
    pub population: f64,
    pub exposure: f64,
    /// 0 = Sunday, 1 = Monday, ..., 6 = Saturday.
    pub dow: u8,
    pub holiday: u8,
}

impl AnalysisRow {
    pub fn calendar(&self) -> CalendarCovariates {
        let mut dow = [false; 6];
        if self.dow > 0 {
            dow[self.dow as usize - 1] = true;
        }
        CalendarCovariates {
            dow,
            holiday: self.holiday != 0,
        }
    }
}

/// Assembled model input with dense area/year/day indices.
#[derive(Debug, Clone)]
pub struct AnalysisTable {
    pub rows: Vec<AnalysisRow>,
    pub area_ids: Vec<u32>,
    pub years: Vec<i32>,
    pub area_index: Vec<usize>,
    pub year_index: Vec<usize>,
    pub day_index: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n_rows: usize,
    pub n_areas: usize,
    pub n_dates: usize,
    pub years: Vec<i32>,
    pub dropped_zero_population: usize,
}

impl AnalysisTable {
    /// Indexes rows: areas by ascending id, years ascending, days from June 1.
    pub fn from_rows(rows: Vec<AnalysisRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("analysis table is empty"));
        }
        let area_ids: Vec<u32> = rows.iter().map(|r| r.area_id).collect::<BTreeSet<_>>().into_iter().collect();
        let years: Vec<i32> = rows.iter().map(|r| r.date.year()).collect::<BTreeSet<_>>().into_iter().collect();
        let a_of: HashMap<u32, usize> = area_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        let y_of: HashMap<i32, usize> = years.iter().enumerate().map(|(i, &y)| (y, i)).collect();
        let mut seen = HashSet::with_capacity(rows.len());
        for r in &rows {
            if !is_summer(r.date) {
                return Err(Error::input(format!("record for area {} on {} is outside June-August", r.area_id, r.date)));
            }
            if !seen.insert((r.area_id, r.date)) {
                return Err(Error::input(format!("duplicate record for area {} on {}", r.area_id, r.date)));
            }
            if !(r.population > 0.0) || !r.exposure.is_finite() || r.dow > 6 || r.holiday > 1 {
                return Err(Error::input(format!("invalid record for area {} on {}", r.area_id, r.date)));
            }
        }
        Ok(Self {
            area_index: rows.iter().map(|r| a_of[&r.area_id]).collect(),
            year_index: rows.iter().map(|r| y_of[&r.date.year()]).collect(),
            day_index: rows.iter().map(|r| summer_day_index(r.date)).collect(),
            rows,
            area_ids,
            years,
        })
    }

    pub fn n_areas(&self) -> usize {
        self.area_ids.len()
    }

    pub fn n_years(&self) -> usize {
        self.years.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn exposures(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.exposure).collect()
    }

    /// Exposures of one area.
    pub fn area_exposures(&self, area: usize) -> Vec<f64> {
        self.rows
            .iter()
            .zip(&self.area_index)
            .filter(|(_, &a)| a == area)
            .map(|(r, _)| r.exposure)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_rows(read_csv(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

/// Derives the analysis table from raw inputs. The study dates are those in
/// the deaths file; every area needs a record on every study date.
pub fn build_analysis_table(inputs: &StudyInputs) -> Result<(AnalysisTable, IngestReport)> {
    if inputs.deaths.is_empty() {
        return Err(Error::input("deaths file has no records"));
    }
    let areas: BTreeSet<u32> = inputs.deaths.iter().map(|r| r.area_id).collect();
    let dates: BTreeSet<NaiveDate> = inputs.deaths.iter().map(|r| r.date).collect();
    if let Some(d) = dates.iter().find(|d| !is_summer(**d)) {
        return Err(Error::input(format!("deaths recorded on {d}, outside June-August")));
    }
    let mut deaths: HashMap<(u32, NaiveDate), u32> = HashMap::with_capacity(inputs.deaths.len());
    for r in &inputs.deaths {
        if deaths.insert((r.area_id, r.date), r.deaths).is_some() {
            return Err(Error::input(format!("duplicate deaths record for area {} on {}", r.area_id, r.date)));
        }
    }
    let mut pop: HashMap<u32, Vec<(i32, f64)>> = HashMap::new();
    for r in &inputs.population {
        if !(r.count >= 0.0) {
            return Err(Error::input(format!("negative population for area {} in {}", r.area_id, r.year)));
        }
        pop.entry(r.area_id).or_default().push((r.year, r.count));
    }
    let mut cells_of: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
    for r in &inputs.weights {
        cells_of.entry(r.area_id).or_default().push((r.cell_id, r.weight));
    }
    let mut temp: HashMap<(u32, NaiveDate), f64> = HashMap::with_capacity(inputs.temperature.len());
    for r in &inputs.temperature {
        if temp.insert((r.cell_id, r.date), r.temp).is_some() {
            return Err(Error::input(format!("duplicate temperature for cell {} on {}", r.cell_id, r.date)));
        }
    }
    let date_list: Vec<NaiveDate> = dates.iter().copied().collect();
    let mut needed: BTreeSet<NaiveDate> = BTreeSet::new();
    for &d in &date_list {
        for lag in 0..=MAX_LAG {
            needed.insert(d - Duration::days(lag));
        }
    }
    let mut rows = Vec::with_capacity(areas.len() * date_list.len());
    let mut dropped = 0;
    for &area in &areas {
        let yearly = pop
            .get(&area)
            .ok_or_else(|| Error::input(format!("no population counts for area {area}")))?;
        let population = interpolate_population(yearly, &date_list)?;
        let cells = cells_of
            .get(&area)
            .ok_or_else(|| Error::input(format!("no grid weights for area {area}")))?;
        let mut series = BTreeMap::new();
        for &d in &needed {
            let day_cells = cells
                .iter()
                .map(|&(cell_id, w)| {
                    temp.get(&(cell_id, d))
                        .map(|&t| GridCell {
                            cell_id,
                            temperature: t,
                            population_weight: w,
                        })
                        .ok_or_else(|| {
                            Error::input(format!("temperature missing for grid cell {cell_id} on {d} (area {area})"))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            series.insert(d, area_exposure(&day_cells)?);
        }
        let exposure = lag_average(&series, &date_list)?;
        for (k, &d) in date_list.iter().enumerate() {
            let y = *deaths
                .get(&(area, d))
                .ok_or_else(|| Error::input(format!("no deaths record for area {area} on {d}")))?;
            if population[k] <= 0.0 {
                dropped += 1;
                continue;
            }
            let cal = calendar_covariates(d, &inputs.holidays);
            rows.push(AnalysisRow {
                area_id: area,
                date: d,
                deaths: y,
                population: population[k],
                exposure: exposure[k],
                dow: d.weekday().num_days_from_sunday() as u8,
                holiday: u8::from(cal.holiday),
            });
        }
    }
    let table = AnalysisTable::from_rows(rows)?;
    let report = IngestReport {
        n_rows: table.len(),
        n_areas: areas.len(),
        n_dates: date_list.len(),
        years: table.years.clone(),
        dropped_zero_population: dropped,
    };
    Ok((table, report))
}

/// Reads `graph.csv` and `cantons.csv` and maps external area ids onto the
/// table's dense indices. Returns the graph and the canton ids in index
/// order.
pub fn load_graph(dir: &Path, area_ids: &[u32]) -> Result<(AreaGraph, Vec<u32>)> {
    let edges: Vec<EdgeRow> = read_csv(&dir.join("graph.csv"))?;
    let cantons: Vec<CantonRow> = read_csv(&dir.join("cantons.csv"))?;
    build_graph(&edges, &cantons, area_ids)
}

pub fn build_graph(edges: &[EdgeRow], cantons: &[CantonRow], area_ids: &[u32]) -> Result<(AreaGraph, Vec<u32>)> {
    let idx: HashMap<u32, usize> = area_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let lookup = |a: u32| {
        idx.get(&a)
            .copied()
            .ok_or_else(|| Error::input(format!("area {a} in graph files is not in the data")))
    };
    let e = edges
        .iter()
        .map(|r| Ok((lookup(r.area_a)?, lookup(r.area_b)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut canton_of_area: Vec<Option<u32>> = vec![None; area_ids.len()];
    for r in cantons {
        let a = lookup(r.area_id)?;
        if canton_of_area[a].replace(r.canton_id).is_some() {
            return Err(Error::input(format!("area {} has two canton rows", r.area_id)));
        }
    }
    let canton_ids: Vec<u32> = canton_of_area
        .iter()
        .enumerate()
        .map(|(a, c)| c.ok_or_else(|| Error::input(format!("area {} has no canton", area_ids[a]))))
        .collect::<Result<_>>()?;
    let distinct: Vec<u32> = canton_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let dense: Vec<usize> = canton_ids
        .iter()
        .map(|c| distinct.binary_search(c).unwrap())
        .collect();
    Ok((AreaGraph::build(area_ids.len(), &e, dense)?, distinct))
}

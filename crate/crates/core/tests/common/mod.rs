#![allow(dead_code)]

use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use heatrisk::graph::{queen_lattice, AreaGraph, ScaledStructure};
use heatrisk::ingest::{AnalysisRow, AnalysisTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Synthetic table: `n` areas, `days` consecutive days from June 1 in each
/// of `years` years, random exposures and counts.
pub fn toy_table(n: usize, years: usize, days: usize, seed: u64) -> AnalysisTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for a in 0..n {
        for y in 0..years {
            for k in 0..days {
                let d = date(2015 + y as i32, 6, 1) + Duration::days(k as i64);
                rows.push(AnalysisRow {
                    area_id: 100 + a as u32,
                    date: d,
                    deaths: rng.random_range(0..6),
                    population: rng.random_range(2000.0..8000.0),
                    exposure: rng.random_range(8.0..30.0),
                    dow: d.weekday().num_days_from_sunday() as u8,
                    holiday: u8::from(d.month() == 8 && d.day() == 1),
                });
            }
        }
    }
    AnalysisTable::from_rows(rows).unwrap()
}

pub fn lattice_structure(nx: usize, ny: usize) -> Arc<ScaledStructure> {
    let g = AreaGraph::build(nx * ny, &queen_lattice(nx, ny), vec![0; nx * ny]).unwrap();
    Arc::new(ScaledStructure::new(Arc::new(g)).unwrap())
}

pub fn structure_from(n: usize, edges: &[(usize, usize)]) -> Arc<ScaledStructure> {
    let g = AreaGraph::build(n, edges, vec![0; n]).unwrap();
    Arc::new(ScaledStructure::new(Arc::new(g)).unwrap())
}

//! Row types of the CSV outputs.

use heatrisk::metrics::{AreaMetrics, CantonMetrics, CurveRow};
use heatrisk::stats::Summary;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub area_id: u32,
    pub mmt: f64,
    pub mmt_lower: f64,
    pub mmt_upper: f64,
    pub mmp: f64,
    pub mmp_lower: f64,
    pub mmp_upper: f64,
    pub ech: f64,
    pub ech_lower: f64,
    pub ech_upper: f64,
    /// Per 1,000 residents.
    pub erh: f64,
    pub erh_lower: f64,
    pub erh_upper: f64,
    pub afh: Option<f64>,
    pub afh_lower: Option<f64>,
    pub afh_upper: Option<f64>,
    pub erh_exceedance: Option<f64>,
    pub fallback_draws: usize,
}

impl From<&AreaMetrics> for MetricsRow {
    fn from(a: &AreaMetrics) -> Self {
        Self {
            area_id: a.area_id,
            mmt: a.mmt.median,
            mmt_lower: a.mmt.lower,
            mmt_upper: a.mmt.upper,
            mmp: a.mmp.median,
            mmp_lower: a.mmp.lower,
            mmp_upper: a.mmp.upper,
            ech: a.ech.median,
            ech_lower: a.ech.lower,
            ech_upper: a.ech.upper,
            erh: a.erh.median,
            erh_lower: a.erh.lower,
            erh_upper: a.erh.upper,
            afh: a.afh.map(|s| s.median),
            afh_lower: a.afh.map(|s| s.lower),
            afh_upper: a.afh.map(|s| s.upper),
            erh_exceedance: a.erh_exceedance,
            fallback_draws: a.fallback_draws,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CantonRow {
    pub canton_id: u32,
    pub n_areas: usize,
    pub mmt: f64,
    pub mmt_lower: f64,
    pub mmt_upper: f64,
    /// Mean RR above the cantonal MMT.
    pub heat_rr: f64,
    pub heat_rr_lower: f64,
    pub heat_rr_upper: f64,
    pub rr_exceedance: Option<f64>,
}

impl From<&CantonMetrics> for CantonRow {
    fn from(c: &CantonMetrics) -> Self {
        Self {
            canton_id: c.canton_id,
            n_areas: c.n_areas,
            mmt: c.mmt.median,
            mmt_lower: c.mmt.lower,
            mmt_upper: c.mmt.upper,
            heat_rr: c.heat_rr.median,
            heat_rr_lower: c.heat_rr.lower,
            heat_rr_upper: c.heat_rr.upper,
            rr_exceedance: c.rr_exceedance,
        }
    }
}

/// Pointwise curve summary; `id` is an area id, canton id or curve label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub id: String,
    pub temperature: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<&CurveRow> for CurvePoint {
    fn from(r: &CurveRow) -> Self {
        Self {
            id: r.label.clone(),
            temperature: r.temperature,
            median: r.median,
            lower: r.lower,
            upper: r.upper,
        }
    }
}

pub fn curve_points(rows: &[CurveRow]) -> Vec<CurvePoint> {
    rows.iter().map(CurvePoint::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurdenDraw {
    pub area_id: u32,
    pub draw: usize,
    pub mmt: f64,
    pub ech: f64,
    pub erh: f64,
    pub afh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NationalMmt {
    pub curve: String,
    pub mmt: f64,
    pub lower: f64,
    pub upper: f64,
}

impl NationalMmt {
    pub fn new(curve: &str, s: &Summary) -> Self {
        Self {
            curve: curve.to_string(),
            mmt: s.median,
            lower: s.lower,
            upper: s.upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub canton_id: String,
    pub temperature: f64,
    pub population: f64,
    pub inverse_variance: f64,
    pub difference: f64,
}

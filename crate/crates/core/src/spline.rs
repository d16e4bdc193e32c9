//! Natural cubic spline basis for the exposure-response curve.
//!
//! The basis follows the construction used by R's `splines::ns` without an
//! intercept: cubic B-splines on the boundary-augmented knot sequence,
//! the first column dropped (so every column vanishes at the lower
//! boundary), and the two boundary second-derivative constraints removed
//! by a Householder QR. Outside the boundary knots each column continues
//! linearly with its boundary slope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// Probabilities of the interior knots.
pub const KNOT_PROBS: [f64; 3] = [0.10, 0.75, 0.90];
pub const DEFAULT_REFERENCE_TEMP: f64 = 12.0;
pub const GRID_POINTS: usize = 200;

const ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knots {
    pub interior: Vec<f64>,
    pub boundary: [f64; 2],
}

/// Interior knots at the 10/75/90th percentiles (type-7 quantiles) and
/// boundary knots at the sample extremes.
pub fn knots_from_quantiles(exposures: &[f64]) -> Result<Knots> {
    if exposures.iter().any(|x| !x.is_finite()) {
        return Err(Error::input("exposures contain non-finite values"));
    }
    let sorted = sorted_copy(exposures);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 10 {
        return Err(Error::input(format!(
            "need at least 10 distinct exposure values to place spline knots, found {}",
            distinct.len()
        )));
    }
    let interior: Vec<f64> = KNOT_PROBS
        .iter()
        .map(|&p| quantile_sorted(&sorted, p))
        .collect();
    let boundary = [sorted[0], sorted[sorted.len() - 1]];
    Ok(Knots { interior, boundary })
}

/// `n` equally spaced values from `lo` to `hi` inclusive.
pub fn evaluation_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(hi > lo) || n < 2 {
        return Err(Error::input(format!(
            "evaluation grid needs lo < hi and at least 2 points (got {lo}, {hi}, {n})"
        )));
    }
    let step = (hi - lo) / (n - 1) as f64;
    let mut grid: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    grid[n - 1] = hi;
    Ok(grid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    pub knots: Knots,
    pub reference_temp: f64,
    /// Uncentered basis row at the reference temperature.
    pub center_row: Vec<f64>,
    /// Householder vectors of the constraint QR, one per constraint.
    #[serde(skip)]
    householder: Vec<Vec<f64>>,
    #[serde(skip)]
    augmented: Vec<f64>,
}

impl SplineBasis {
    pub fn new(knots: Knots, reference_temp: f64) -> Result<Self> {
        let [lo, hi] = knots.boundary;
        let mut seq = vec![lo];
        seq.extend_from_slice(&knots.interior);
        seq.push(hi);
        if knots.interior.is_empty() || seq.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::input(format!(
                "spline knots must be strictly increasing inside the boundary: {seq:?}"
            )));
        }
        if !reference_temp.is_finite() {
            return Err(Error::input("reference temperature must be finite"));
        }
        let mut augmented = vec![lo; ORDER];
        augmented.extend_from_slice(&knots.interior);
        augmented.extend(std::iter::repeat_n(hi, ORDER));

        let mut basis = Self {
            knots,
            reference_temp,
            center_row: Vec::new(),
            householder: Vec::new(),
            augmented,
        };
        basis.householder = basis.constraint_qr();
        basis.center_row = basis.raw_row(reference_temp, 0);
        Ok(basis)
    }

    pub fn from_exposures(exposures: &[f64], reference_temp: f64) -> Result<Self> {
        Self::new(knots_from_quantiles(exposures)?, reference_temp)
    }

    /// Rebuilds the derived QR state after deserialization.
    pub fn rebuild(self) -> Result<Self> {
        Self::new(self.knots, self.reference_temp)
    }

    pub fn n_columns(&self) -> usize {
        self.knots.interior.len() + 1
    }

    pub fn boundary(&self) -> [f64; 2] {
        self.knots.boundary
    }

    /// The 200-point grid spanning the boundary knots.
    pub fn grid(&self) -> Vec<f64> {
        let [lo, hi] = self.knots.boundary;
        evaluation_grid(lo, hi, GRID_POINTS).expect("boundary knots are ordered")
    }

    pub fn evaluate(&self, x: f64, centered: bool) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::input(format!("cannot evaluate spline basis at {x}")));
        }
        let mut row = self.raw_row(x, 0);
        if centered {
            for (v, c) in row.iter_mut().zip(&self.center_row) {
                *v -= c;
            }
        }
        Ok(row)
    }

    /// Derivative of order 1 or 2 of the (centered or not, identical) basis.
    pub fn derivative(&self, x: f64, order: usize) -> Vec<f64> {
        assert!(order == 1 || order == 2);
        self.raw_row(x, order)
    }

    /// Centered basis rows for a set of exposures, row-major.
    pub fn design(&self, xs: &[f64]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|&x| self.evaluate(x, true)).collect()
    }

    fn n_bsplines(&self) -> usize {
        self.augmented.len() - ORDER
    }

    /// All B-spline values (or derivatives) at x, full width.
    fn bspline_row(&self, x: f64, deriv: usize) -> Vec<f64> {
        let t = &self.augmented;
        let nb = self.n_bsplines();
        // Span index: t[mu] <= x < t[mu+1], right boundary joins the last span.
        let last = t.len() - ORDER - 1;
        let mut mu = ORDER - 1;
        while mu < last && x >= t[mu + 1] {
            mu += 1;
        }
        (0..nb).map(|i| bspline(t, i, ORDER - 1, deriv, x, mu)).collect()
    }

    fn constraint_qr(&self) -> Vec<Vec<f64>> {
        // Constraint matrix transposed: one column per boundary, rows are
        // the B-splines after dropping the first.
        let cols: Vec<Vec<f64>> = self
            .knots
            .boundary
            .iter()
            .map(|&b| self.bspline_row(b, 2)[1..].to_vec())
            .collect();
        householder_qr(cols)
    }

    /// Projects a full-width B-spline row onto the natural-spline columns.
    fn project(&self, full: &[f64]) -> Vec<f64> {
        let mut y = full[1..].to_vec();
        apply_qt(&self.householder, &mut y);
        y[self.householder.len()..].to_vec()
    }

    fn raw_row(&self, x: f64, deriv: usize) -> Vec<f64> {
        let [lo, hi] = self.knots.boundary;
        let full = if x < lo || x > hi {
            let pivot = if x < lo { lo } else { hi };
            let value = self.bspline_row(pivot, 0);
            let slope = self.bspline_row(pivot, 1);
            match deriv {
                0 => value
                    .iter()
                    .zip(&slope)
                    .map(|(v, s)| v + (x - pivot) * s)
                    .collect(),
                1 => slope,
                _ => vec![0.0; value.len()],
            }
        } else {
            self.bspline_row(x, deriv)
        };
        self.project(&full)
    }
}

/// Cox-de Boor recursion for B_{i,k} and its derivatives, evaluated on span `mu`.
fn bspline(t: &[f64], i: usize, k: usize, deriv: usize, x: f64, mu: usize) -> f64 {
    if deriv > 0 {
        if k == 0 {
            return 0.0;
        }
        let kf = k as f64;
        let mut v = 0.0;
        let d1 = t[i + k] - t[i];
        if d1 > 0.0 {
            v += kf * bspline(t, i, k - 1, deriv - 1, x, mu) / d1;
        }
        let d2 = t[i + k + 1] - t[i + 1];
        if d2 > 0.0 {
            v -= kf * bspline(t, i + 1, k - 1, deriv - 1, x, mu) / d2;
        }
        return v;
    }
    if k == 0 {
        return if i == mu { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = t[i + k] - t[i];
    if d1 > 0.0 {
        v += (x - t[i]) / d1 * bspline(t, i, k - 1, 0, x, mu);
    }
    let d2 = t[i + k + 1] - t[i + 1];
    if d2 > 0.0 {
        v += (t[i + k + 1] - x) / d2 * bspline(t, i + 1, k - 1, 0, x, mu);
    }
    v
}

/// Householder QR in the LINPACK convention; returns the reflector vectors
/// (entries below index l are unused) for each column l.
fn householder_qr(mut cols: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let k = cols.len();
    let mut reflectors = Vec::with_capacity(k);
    for l in 0..k {
        let (head, tail) = cols.split_at_mut(l + 1);
        let x = &mut head[l];
        let mut nrm = x[l..].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut u = vec![0.0; x.len()];
        if nrm != 0.0 {
            if x[l] != 0.0 {
                nrm = nrm.copysign(x[l]);
            }
            for v in x[l..].iter_mut() {
                *v /= nrm;
            }
            x[l] += 1.0;
            for y in tail.iter_mut() {
                let dot: f64 = x[l..].iter().zip(&y[l..]).map(|(a, b)| a * b).sum();
                let t = -dot / x[l];
                for (yv, xv) in y[l..].iter_mut().zip(&x[l..]) {
                    *yv += t * xv;
                }
            }
            u[l..].copy_from_slice(&x[l..]);
        }
        reflectors.push(u);
    }
    reflectors
}

/// y <- Qᵀ y for the reflectors produced by [`householder_qr`].
fn apply_qt(reflectors: &[Vec<f64>], y: &mut [f64]) {
    for (l, u) in reflectors.iter().enumerate() {
        if u[l] == 0.0 {
            continue;
        }
        let dot: f64 = u[l..].iter().zip(&y[l..]).map(|(a, b)| a * b).sum();
        let t = -dot / u[l];
        for (yv, uv) in y[l..].iter_mut().zip(&u[l..]) {
            *yv += t * uv;
        }
    }
}

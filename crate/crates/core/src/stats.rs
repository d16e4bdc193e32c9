//! Small descriptive-statistics helpers shared across modules.

/// Quantile with linear interpolation between order statistics
/// (the "type 7" convention). `sorted` must be ascending and non-empty;
/// `p` is a probability in [0, 1].
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let sorted = sorted_copy(values);
    quantile_sorted(&sorted, p)
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Inverse of [`quantile_sorted`]: the probability (in percent) at which the
/// interpolated quantile function reaches `x`. Values outside the sample
/// range clamp to 0 or 100.
pub fn percentile_rank_sorted(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    if n == 1 || x <= sorted[0] {
        return 0.0;
    }
    if x >= sorted[n - 1] {
        return 100.0;
    }
    // Largest index with sorted[i] <= x, then skip ties to the last one so
    // the rank is the upper end of a flat run.
    let i = sorted.partition_point(|&v| v <= x) - 1;
    let h = if sorted[i + 1] > sorted[i] {
        i as f64 + (x - sorted[i]) / (sorted[i + 1] - sorted[i])
    } else {
        i as f64
    };
    100.0 * h / (n - 1) as f64
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with n - 1 denominator.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Median and equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let sorted = sorted_copy(values);
        Self {
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

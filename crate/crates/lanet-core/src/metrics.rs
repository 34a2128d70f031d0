//! The four K-mode forecasting metrics: minADE, minFDE, miss rate, and
//! Brier-minFDE.
//!
//! "Best" always means the mode whose endpoint lands closest to the ground
//! truth, ties broken by lower mode index. minFDE (and the metrics derived
//! from it) requires the final truth step to be valid; minADE tolerates gaps
//! in intermediate steps by averaging over valid steps only.

use serde::{Deserialize, Serialize};

use crate::decoder::{Forecast, Truth};
use crate::error::{Error, Result};

/// Endpoint-error threshold defining a miss, meters.
pub const MISS_THRESHOLD_M: f64 = 2.0;

fn endpoint_step(truth: &Truth) -> Result<usize> {
    let last = truth.valid.len() - 1;
    if !truth.valid[last] {
        return Err(Error::invalid(
            "final truth step invalid; endpoint metrics undefined",
        ));
    }
    Ok(last)
}

fn endpoint_error(forecast: &Forecast, truth: &Truth, mode: usize, step: usize) -> f64 {
    let p = forecast.modes[mode].locations[step];
    let q = truth.positions[step];
    let dx = p[0] - q[0];
    let dy = p[1] - q[1];
    (dx * dx + dy * dy).sqrt()
}

/// Minimum final displacement error and the index of the best mode.
pub fn min_fde(forecast: &Forecast, truth: &Truth) -> Result<(f64, usize)> {
    let step = endpoint_step(truth)?;
    let mut best = (f64::INFINITY, 0usize);
    for m in 0..forecast.num_modes() {
        let e = endpoint_error(forecast, truth, m, step);
        if e < best.0 {
            best = (e, m);
        }
    }
    Ok(best)
}

/// Average displacement of the best-endpoint mode over valid truth steps.
pub fn min_ade(forecast: &Forecast, truth: &Truth) -> Result<f64> {
    truth.require_valid()?;
    let (_, best) = min_fde(forecast, truth)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (step, &valid) in truth.valid.iter().enumerate() {
        if valid {
            sum += endpoint_error(forecast, truth, best, step);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// minFDE increased by `(1 - p)²` where `p` is the probability assigned to
/// the best-endpoint mode.
pub fn b_min_fde(forecast: &Forecast, truth: &Truth) -> Result<f64> {
    let (fde, best) = min_fde(forecast, truth)?;
    let p = forecast.mode_probs[best];
    Ok(fde + (1.0 - p) * (1.0 - p))
}

/// Whether every mode's endpoint misses by more than the threshold.
pub fn is_miss(forecast: &Forecast, truth: &Truth) -> Result<bool> {
    let (fde, _) = min_fde(forecast, truth)?;
    Ok(fde > MISS_THRESHOLD_M)
}

/// Dataset-level metric aggregate in Table-1 column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub b_min_fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub cases: usize,
}

impl MetricReport {
    /// Header matching [`MetricReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "b_min_fde,min_ade,min_fde,miss_rate,cases"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.b_min_fde, self.min_ade, self.min_fde, self.miss_rate, self.cases
        )
    }

    /// Human-readable table in the leaderboard's column order.
    pub fn table(&self) -> String {
        format!(
            "{:>12} {:>10} {:>10} {:>8}\n{:>12.4} {:>10.4} {:>10.4} {:>8.4}",
            "b-minFDE", "minADE", "minFDE", "MR", self.b_min_fde, self.min_ade, self.min_fde, self.miss_rate
        )
    }
}

/// Evaluate a batch of (forecast, truth) cases. Min-metrics average by case
/// count; the miss rate is the case-weighted mean, so concatenating datasets
/// composes as expected.
pub fn evaluate(cases: &[(Forecast, Truth)]) -> Result<MetricReport> {
    if cases.is_empty() {
        return Err(Error::invalid("evaluate: empty dataset"));
    }
    let mut sums = (0.0, 0.0, 0.0);
    let mut misses = 0usize;
    for (forecast, truth) in cases {
        let (fde, _) = min_fde(forecast, truth)?;
        sums.0 += b_min_fde(forecast, truth)?;
        sums.1 += min_ade(forecast, truth)?;
        sums.2 += fde;
        if fde > MISS_THRESHOLD_M {
            misses += 1;
        }
    }
    let n = cases.len() as f64;
    Ok(MetricReport {
        b_min_fde: sums.0 / n,
        min_ade: sums.1 / n,
        min_fde: sums.2 / n,
        miss_rate: misses as f64 / n,
        cases: cases.len(),
    })
}

//! Step-response performance metrics: rise time, overshoot, settling time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("step amplitude is zero")]
    ZeroAmplitude,
    #[error("response never reaches {0}% of the step")]
    NeverRises(f64),
    #[error("segment is empty or has mismatched lengths")]
    EmptySegment,
}

/// Metric definitions. Defaults: 10–90% rise, ±2% settling band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub rise_low: f64,
    pub rise_high: f64,
    pub settle_band: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            rise_low: 0.1,
            rise_high: 0.9,
            settle_band: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Seconds between the low and high rise levels.
    pub rise_time: f64,
    /// Peak beyond the target, percent of the step amplitude.
    pub overshoot: f64,
    /// Seconds from the segment start until the response stays inside the
    /// band; `None` when it is still outside at the end of the segment.
    pub settling_time: Option<f64>,
}

/// Interpolated time at which `normalized` first reaches `level`.
fn first_crossing(times: &[f64], normalized: &[f64], level: f64) -> Option<f64> {
    let k = normalized.iter().position(|&y| y >= level)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (y0, y1) = (normalized[k - 1], normalized[k]);
    Some(times[k - 1] + (level - y0) / (y1 - y0) * (times[k] - times[k - 1]))
}

/// Metrics of one setpoint step.
///
/// `times` are measured from the step instant; the response is expected to
/// move from `target - amplitude` to `target`.
pub fn compute_metrics(
    times: &[f64],
    values: &[f64],
    target: f64,
    amplitude: f64,
    opts: MetricOptions,
) -> Result<StepMetrics, MetricsError> {
    if times.is_empty() || times.len() != values.len() {
        return Err(MetricsError::EmptySegment);
    }
    if amplitude == 0.0 || !amplitude.is_finite() {
        return Err(MetricsError::ZeroAmplitude);
    }
    let baseline = target - amplitude;
    let normalized: Vec<f64> = values.iter().map(|y| (y - baseline) / amplitude).collect();

    let t_low = first_crossing(times, &normalized, opts.rise_low)
        .ok_or(MetricsError::NeverRises(100.0 * opts.rise_low))?;
    let t_high = first_crossing(times, &normalized, opts.rise_high)
        .ok_or(MetricsError::NeverRises(100.0 * opts.rise_high))?;

    let peak = normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let overshoot = (100.0 * (peak - 1.0)).max(0.0);

    let last_outside = normalized
        .iter()
        .rposition(|y| (y - 1.0).abs() > opts.settle_band);
    let settling_time = match last_outside {
        None => Some(times[0]),
        Some(k) if k + 1 < times.len() => Some(times[k + 1]),
        Some(_) => None,
    };

    Ok(StepMetrics {
        rise_time: t_high - t_low,
        overshoot,
        settling_time,
    })
}

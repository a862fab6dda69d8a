//! Regional first-order identification from open-loop step responses.
//!
//! Each record holds a uniformly sampled temperature trace with one input
//! step. The gain comes from the pre-step level and the settled level; the
//! time constant is the interpolated time at which the response has covered
//! `1 - 1/e` (63.2%) of its excursion.
//!
//! A record that is settled but not completely flat still carries a small
//! exponential tail in its final window. The settled level is corrected for
//! that tail using the current time-constant estimate, and the two estimates
//! are iterated to a fixed point. On a fully settled record the correction
//! vanishes and the estimate is plain endpoint averaging.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::PlantConfig;

/// Fraction of post-step samples treated as the settled window.
pub const SETTLED_FRACTION: f64 = 0.1;
/// Maximum peak-to-peak variation of the settled window, relative to the
/// excursion.
pub const SETTLED_VARIATION: f64 = 0.02;
const CONTIGUITY_TOL: f64 = 1e-9;
const MAX_REFINEMENTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysidError {
    #[error("input does not change (u0 = u1 = {0})")]
    ZeroInputStep(f64),
    #[error("response has not settled: final-window variation {variation:.3}% of excursion")]
    NotSettled { variation: f64 },
    #[error("response never crosses the 63.2% level")]
    NonMonotoneOnset,
    #[error("record has no post-step samples")]
    TooShort,
    #[error("records do not form contiguous input segments: {0}")]
    NonContiguousSegments(String),
    #[error("no step records given")]
    NoRecords,
    #[error("invalid step record: {0}")]
    InvalidRecord(String),
}

/// Uniformly sampled open-loop step response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub ts: f64,
    pub u0: f64,
    pub u1: f64,
    /// Temperature at `i * ts`, °C.
    pub samples: Vec<f64>,
    /// Time at which the input switched from `u0` to `u1`.
    pub t_step: f64,
}

impl StepRecord {
    pub fn validate(&self) -> Result<(), SysidError> {
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(SysidError::InvalidRecord(format!("ts = {}", self.ts)));
        }
        if self.samples.is_empty() {
            return Err(SysidError::InvalidRecord("no samples".into()));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(SysidError::InvalidRecord("non-finite sample".into()));
        }
        if !(self.t_step >= 0.0) {
            return Err(SysidError::InvalidRecord(format!(
                "t_step = {}",
                self.t_step
            )));
        }
        Ok(())
    }

    pub fn is_identifiable(&self) -> bool {
        self.u1 != self.u0
    }

    pub fn time(&self, i: usize) -> f64 {
        sample_time(i, self.ts)
    }

    /// Input applied over the sample interval starting at `i`.
    pub fn input_at(&self, i: usize) -> f64 {
        if self.time(i) + 1e-9 < self.t_step {
            self.u0
        } else {
            self.u1
        }
    }

    /// Index of the first sample taken with the new input applied.
    fn step_index(&self) -> usize {
        (0..self.samples.len())
            .find(|&i| self.time(i) + 1e-9 >= self.t_step)
            .unwrap_or(self.samples.len())
    }
}

/// `i * ts` rounded to the nanosecond so logged times print cleanly.
pub fn sample_time(i: usize, ts: f64) -> f64 {
    (i as f64 * ts * 1e9).round() / 1e9
}

/// First-order lag `gain / (tau·s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderModel {
    pub gain: f64,
    pub tau: f64,
}

/// One input interval of a regional model. `u_high = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSegment {
    pub u_low: f64,
    pub u_high: Option<f64>,
    pub gain: f64,
    pub tau: f64,
}

impl RegionSegment {
    pub fn model(&self) -> FirstOrderModel {
        FirstOrderModel {
            gain: self.gain,
            tau: self.tau,
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.u_low && self.u_high.is_none_or(|hi| u < hi)
    }
}

/// Local first-order models over a partition of `[0, ∞)` in plant input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionalModel {
    pub regions: Vec<RegionSegment>,
}

impl RegionalModel {
    pub fn model_for(&self, u: f64) -> Option<FirstOrderModel> {
        self.regions
            .iter()
            .find(|r| r.contains(u))
            .map(RegionSegment::model)
    }

    /// Plant parameters reproducing this model around `ambient_temp`.
    pub fn to_plant_config(&self, ambient_temp: f64) -> PlantConfig {
        PlantConfig {
            ambient_temp,
            region_gains: self.regions.iter().map(|r| r.gain).collect(),
            region_taus: self.regions.iter().map(|r| r.tau).collect(),
            region_breaks: self.regions.iter().filter_map(|r| r.u_high).collect(),
            ..PlantConfig::canonical()
        }
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Time after the step at which the normalized response first reaches
/// `level`, linearly interpolated between bracketing samples.
fn crossing_time(offsets: &[f64], normalized: &[f64], level: f64) -> Option<f64> {
    let k = normalized.iter().position(|&y| y >= level)?;
    if k == 0 {
        return Some(offsets[0]);
    }
    let (y0, y1) = (normalized[k - 1], normalized[k]);
    let frac = (level - y0) / (y1 - y0);
    Some(offsets[k - 1] + frac * (offsets[k] - offsets[k - 1]))
}

/// Gain and time constant of one step response.
pub fn estimate_first_order(rec: &StepRecord) -> Result<FirstOrderModel, SysidError> {
    rec.validate()?;
    if !rec.is_identifiable() {
        return Err(SysidError::ZeroInputStep(rec.u0));
    }
    let split = rec.step_index();
    let post = &rec.samples[split..];
    if post.len() < 2 {
        return Err(SysidError::TooShort);
    }
    let y0 = if split > 0 {
        mean(&rec.samples[..split])
    } else {
        rec.samples[0]
    };
    let offsets: Vec<f64> = (split..rec.samples.len())
        .map(|i| rec.time(i) - rec.t_step)
        .collect();

    let tail_len = ((post.len() as f64 * SETTLED_FRACTION).ceil() as usize)
        .max(2)
        .min(post.len());
    let tail = &post[post.len() - tail_len..];
    let tail_offsets = &offsets[offsets.len() - tail_len..];
    let tail_mean = mean(tail);
    let excursion = tail_mean - y0;
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| {
            (a.min(y), b.max(y))
        });
    let variation = hi - lo;
    if !(variation < SETTLED_VARIATION * excursion.abs()) {
        return Err(SysidError::NotSettled {
            variation: if excursion == 0.0 {
                f64::INFINITY
            } else {
                100.0 * variation / excursion.abs()
            },
        });
    }

    let level = 1.0 - (-1.0f64).exp();
    let mut y_ss = tail_mean;
    let mut tau = f64::NAN;
    for _ in 0..MAX_REFINEMENTS {
        let span = y_ss - y0;
        let normalized: Vec<f64> = post.iter().map(|y| (y - y0) / span).collect();
        let next_tau =
            crossing_time(&offsets, &normalized, level).ok_or(SysidError::NonMonotoneOnset)?;
        if !(next_tau > 0.0) {
            return Err(SysidError::NonMonotoneOnset);
        }
        let converged = (next_tau - tau).abs() <= 1e-12 * next_tau;
        tau = next_tau;
        if converged {
            break;
        }
        // Mean residual exp(-s/tau) of a first-order response over the window.
        let residual = tail_offsets.iter().map(|s| (-s / tau).exp()).sum::<f64>() / tail_len as f64;
        y_ss = y0 + excursion / (1.0 - residual);
    }

    Ok(FirstOrderModel {
        gain: (y_ss - y0) / (rec.u1 - rec.u0),
        tau,
    })
}

/// One local model per record; the input axis is partitioned at the step
/// targets, with the first region extended down to 0 and the last up to ∞.
pub fn identify_regions(recs: &[StepRecord]) -> Result<RegionalModel, SysidError> {
    if recs.is_empty() {
        return Err(SysidError::NoRecords);
    }
    let mut spans: Vec<(f64, f64, FirstOrderModel)> = recs
        .iter()
        .map(|r| {
            let model = estimate_first_order(r)?;
            Ok((r.u0.min(r.u1), r.u0.max(r.u1), model))
        })
        .collect::<Result<_, SysidError>>()?;
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    for pair in spans.windows(2) {
        let (prev_hi, next_lo) = (pair[0].1, pair[1].0);
        if (next_lo - prev_hi).abs() > CONTIGUITY_TOL {
            return Err(SysidError::NonContiguousSegments(format!(
                "segment ending at {prev_hi} followed by segment starting at {next_lo}"
            )));
        }
    }
    let n = spans.len();
    let regions = spans
        .iter()
        .enumerate()
        .map(|(i, &(_, hi, model))| RegionSegment {
            u_low: if i == 0 { 0.0 } else { spans[i - 1].1 },
            u_high: (i + 1 < n).then_some(hi),
            gain: model.gain,
            tau: model.tau,
        })
        .collect();
    Ok(RegionalModel { regions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Analytic first-order step sampled at `ts`.
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        gain: f64,
        tau: f64,
        u0: f64,
        u1: f64,
        y0: f64,
        pre: f64,
        dur: f64,
        ts: f64,
    ) -> StepRecord {
        let n = ((pre + dur) / ts).round() as usize;
        let samples = (0..=n)
            .map(|i| {
                let t = sample_time(i, ts);
                if t < pre {
                    y0
                } else {
                    y0 + gain * (u1 - u0) * (1.0 - (-(t - pre) / tau).exp())
                }
            })
            .collect();
        StepRecord {
            ts,
            u0,
            u1,
            samples,
            t_step: pre,
        }
    }

    #[test]
    fn recovers_region_one() {
        let rec = synthetic(9.5, 6.5, 0.0, 1.0, 29.6, 5.0, 60.0, 0.1);
        let m = estimate_first_order(&rec).unwrap();
        assert!((m.gain - 9.5).abs() < 0.095 * 1e-3, "{m:?}");
        assert!((m.tau - 6.5).abs() < 0.13 * 1e-2, "{m:?}");
    }

    #[test]
    fn corrects_unfinished_tail() {
        // 60 s at tau = 16 leaves ~2.9% of the excursion in the final window.
        let rec = synthetic(10.0, 16.0, 2.0, 3.0, 47.1, 5.0, 60.0, 0.1);
        let m = estimate_first_order(&rec).unwrap();
        assert!((m.gain - 10.0).abs() < 1e-6, "{m:?}");
        assert!((m.tau - 16.0).abs() < 1e-3, "{m:?}");
    }

    #[test]
    fn zero_step() {
        let rec = synthetic(9.5, 6.5, 1.0, 1.0, 39.1, 5.0, 60.0, 0.1);
        assert!(!rec.is_identifiable());
        assert_eq!(
            estimate_first_order(&rec),
            Err(SysidError::ZeroInputStep(1.0))
        );
    }

    #[test]
    fn unsettled_record() {
        let rec = synthetic(8.0, 15.0, 1.0, 2.0, 39.1, 5.0, 20.0, 0.1);
        assert!(matches!(
            estimate_first_order(&rec),
            Err(SysidError::NotSettled { .. })
        ));
    }

    #[test]
    fn onset_without_lag() {
        // Output jumps at the instant of the step: no first-order onset.
        let mut rec = synthetic(8.0, 1.0, 1.0, 2.0, 40.0, 1.0, 30.0, 0.1);
        for y in rec.samples.iter_mut().skip(10) {
            *y = 48.0;
        }
        assert_eq!(
            estimate_first_order(&rec),
            Err(SysidError::NonMonotoneOnset)
        );
    }

    #[test]
    fn measured_endpoints_give_gain_near_ten() {
        // 29.6 -> 39.5 °C for a unit step.
        let rec = synthetic(9.9, 6.5, 0.0, 1.0, 29.6, 5.0, 60.0, 0.1);
        let m = estimate_first_order(&rec).unwrap();
        assert!((m.gain - 9.9).abs() < 0.01);
    }

    #[test]
    fn identify_three_regions() {
        let recs = vec![
            synthetic(9.5, 6.5, 0.0, 1.0, 29.6, 5.0, 60.0, 0.1),
            synthetic(8.0, 15.0, 1.0, 2.0, 39.1, 5.0, 60.0, 0.1),
            synthetic(10.0, 16.0, 2.0, 3.0, 47.1, 5.0, 60.0, 0.1),
        ];
        let model = identify_regions(&recs).unwrap();
        assert_eq!(model.regions.len(), 3);
        let bounds: Vec<_> = model.regions.iter().map(|r| (r.u_low, r.u_high)).collect();
        assert_eq!(
            bounds,
            vec![(0.0, Some(1.0)), (1.0, Some(2.0)), (2.0, None)]
        );
        for (seg, (k, tau)) in model
            .regions
            .iter()
            .zip([(9.5, 6.5), (8.0, 15.0), (10.0, 16.0)])
        {
            assert!((seg.gain - k).abs() < 0.01 * k);
            assert!((seg.tau - tau).abs() < 0.02 * tau);
        }
        assert_eq!(model.model_for(1.0).unwrap().gain, model.regions[1].gain);
        assert_eq!(model.to_plant_config(29.6).region_breaks, vec![1.0, 2.0]);
    }

    #[test]
    fn gap_is_rejected() {
        let recs = vec![
            synthetic(9.5, 6.5, 0.0, 1.0, 29.6, 5.0, 60.0, 0.1),
            synthetic(10.0, 16.0, 2.0, 3.0, 47.1, 5.0, 60.0, 0.1),
        ];
        assert!(matches!(
            identify_regions(&recs),
            Err(SysidError::NonContiguousSegments(_))
        ));
        assert_eq!(identify_regions(&[]), Err(SysidError::NoRecords));
    }

    #[test]
    fn single_record_covers_everything() {
        let recs = vec![synthetic(9.5, 6.5, 0.0, 1.0, 29.6, 5.0, 60.0, 0.1)];
        let model = identify_regions(&recs).unwrap();
        assert_eq!(model.regions.len(), 1);
        assert_eq!(model.regions[0].u_low, 0.0);
        assert_eq!(model.regions[0].u_high, None);
        assert!(model.model_for(123.0).is_some());
    }

    proptest! {
        #[test]
        fn round_trip_over_gain_and_tau(gain in 1.0f64..20.0, tau in 1.0f64..30.0) {
            let rec = synthetic(gain, tau, 0.5, 1.5, 30.0, 2.0, 10.0 * tau, 0.1);
            let m = estimate_first_order(&rec).unwrap();
            prop_assert!((m.gain - gain).abs() < 0.01 * gain);
            prop_assert!((m.tau - tau).abs() < 0.02 * tau);
        }

        #[test]
        fn scale_equivariance(alpha in 0.1f64..10.0) {
            let rec = synthetic(8.0, 15.0, 1.0, 2.0, 39.1, 5.0, 60.0, 0.1);
            let base = estimate_first_order(&rec).unwrap();
            let y0 = rec.samples[0];
            let scaled = StepRecord {
                samples: rec.samples.iter().map(|y| y0 + alpha * (y - y0)).collect(),
                ..rec
            };
            let m = estimate_first_order(&scaled).unwrap();
            prop_assert!((m.gain - alpha * base.gain).abs() < 1e-9 * alpha * base.gain);
            prop_assert!((m.tau - base.tau).abs() < 1e-9 * base.tau);
        }

        #[test]
        fn direction_symmetry(gain in 1.0f64..20.0, tau in 1.0f64..30.0) {
            let up = synthetic(gain, tau, 1.0, 2.0, 40.0, 2.0, 10.0 * tau, 0.1);
            let down = synthetic(gain, tau, 2.0, 1.0, 40.0 + gain, 2.0, 10.0 * tau, 0.1);
            let a = estimate_first_order(&up).unwrap();
            let b = estimate_first_order(&down).unwrap();
            prop_assert!((a.gain - b.gain).abs() < 1e-9 * gain);
            prop_assert!((a.tau - b.tau).abs() < 1e-9 * tau);
        }
    }
}

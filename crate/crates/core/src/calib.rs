//! Cubic calibration between the measured sensor voltage and air temperature.
//!
//! The trainer's amplified thermistor signal is read as a voltage in roughly
//! `-3..8` V and converted to degrees Celsius by a cubic polynomial. This
//! module evaluates that polynomial, fits it to calibration readings by least
//! squares and inverts it (the simulator needs temperature to voltage).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower edge of the voltage range where a calibration is trusted.
pub const TRUSTED_VOLTAGE_MIN: f64 = -4.0;
/// Upper edge of the voltage range where a calibration is trusted.
pub const TRUSTED_VOLTAGE_MAX: f64 = 9.0;

const INVERT_BRACKET: f64 = 50.0;
const BISECTION_WIDTH: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("need ≥4 points, got {0}")]
    FewerThanFourPoints(usize),
    #[error("need ≥4 distinct voltages, got {0}")]
    DegenerateVoltages(usize),
    #[error("calibration polynomial is not strictly increasing")]
    NonMonotonePoly,
    #[error("non-finite value in calibration data")]
    NonFinite,
}

/// `T = c3·V³ + c2·V² + c1·V + c0`, temperature in °C from voltage in volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoly {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Default for CalibrationPoly {
    fn default() -> Self {
        Self::TRAINER
    }
}

impl CalibrationPoly {
    /// Calibration of the PT326 thermistor channel.
    pub const TRAINER: CalibrationPoly = CalibrationPoly {
        c3: 0.072,
        c2: -0.3033,
        c1: 2.2459,
        c0: 38.1792,
    };

    pub fn new(c3: f64, c2: f64, c1: f64, c0: f64) -> Self {
        Self { c3, c2, c1, c0 }
    }

    /// Temperature for a measured voltage.
    pub fn eval(&self, v: f64) -> f64 {
        ((self.c3 * v + self.c2) * v + self.c1) * v + self.c0
    }

    /// `dT/dV` at `v`.
    pub fn slope(&self, v: f64) -> f64 {
        (3.0 * self.c3 * v + 2.0 * self.c2) * v + self.c1
    }

    /// Discriminant of the derivative `3·c3·V² + 2·c2·V + c1`.
    pub fn slope_discriminant(&self) -> f64 {
        let b = 2.0 * self.c2;
        b * b - 4.0 * (3.0 * self.c3) * self.c1
    }

    /// True when the derivative is positive for every real voltage.
    pub fn is_strictly_increasing(&self) -> bool {
        if self.c3 > 0.0 {
            self.c1 > 0.0 && self.slope_discriminant() < 0.0
        } else {
            self.c3 == 0.0 && self.c2 == 0.0 && self.c1 > 0.0
        }
    }

    /// Voltage that reads as temperature `t`.
    ///
    /// Brackets the root on `[-50, 50]` V (widened if needed), bisects to
    /// 1e-12 V and polishes with a single Newton step.
    pub fn invert(&self, t: f64) -> Result<f64, CalibError> {
        if !t.is_finite() {
            return Err(CalibError::NonFinite);
        }
        if !self.is_strictly_increasing() {
            return Err(CalibError::NonMonotonePoly);
        }
        let (mut lo, mut hi) = (-INVERT_BRACKET, INVERT_BRACKET);
        while self.eval(lo) > t {
            lo *= 2.0;
        }
        while self.eval(hi) < t {
            hi *= 2.0;
        }
        while hi - lo > BISECTION_WIDTH {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(mid) < t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let v = 0.5 * (lo + hi);
        let polished = v - (self.eval(v) - t) / self.slope(v);
        let v = if polished.is_finite() && (polished - v).abs() <= BISECTION_WIDTH {
            polished
        } else {
            v
        };
        if !(TRUSTED_VOLTAGE_MIN..=TRUSTED_VOLTAGE_MAX).contains(&v) {
            tracing::warn!(voltage = v, temperature = t, "calibration extrapolated");
        }
        Ok(v)
    }
}

/// One calibration reading: steady-state temperature and measured voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub temperature: f64,
    pub voltage: f64,
}

impl CalibrationPoint {
    pub fn new(temperature: f64, voltage: f64) -> Self {
        Self {
            temperature,
            voltage,
        }
    }

    pub fn in_trusted_range(&self) -> bool {
        (TRUSTED_VOLTAGE_MIN..=TRUSTED_VOLTAGE_MAX).contains(&self.voltage)
    }
}

/// Calibration readings of the trainer's thermistor channel.
pub fn trainer_points() -> Vec<CalibrationPoint> {
    [
        (23.0, -3.5299),
        (30.0, -2.5177),
        (40.0, 1.2735),
        (50.0, 4.5324),
        (60.0, 6.7338),
        (70.0, 7.5873),
    ]
    .into_iter()
    .map(|(t, v)| CalibrationPoint::new(t, v))
    .collect()
}

pub fn eval_poly(poly: &CalibrationPoly, v: f64) -> f64 {
    poly.eval(v)
}

pub fn invert_poly(poly: &CalibrationPoly, t: f64) -> Result<f64, CalibError> {
    poly.invert(t)
}

/// Least-squares cubic through `points`.
///
/// Voltages are centered and scaled to `[-1, 1]` before forming the normal
/// equations, then the coefficients are mapped back to raw volts.
pub fn fit_cubic(points: &[CalibrationPoint]) -> Result<CalibrationPoly, CalibError> {
    if points.len() < 4 {
        return Err(CalibError::FewerThanFourPoints(points.len()));
    }
    if points
        .iter()
        .any(|p| !p.voltage.is_finite() || !p.temperature.is_finite())
    {
        return Err(CalibError::NonFinite);
    }
    for p in points.iter().filter(|p| !p.in_trusted_range()) {
        tracing::warn!(
            voltage = p.voltage,
            "calibration point outside trusted range"
        );
    }

    let distinct = distinct_count(points.iter().map(|p| p.voltage));
    if distinct < 4 {
        return Err(CalibError::DegenerateVoltages(distinct));
    }

    let (vmin, vmax) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.voltage), hi.max(p.voltage))
        });
    let center = 0.5 * (vmin + vmax);
    let scale = 0.5 * (vmax - vmin);

    let mut normal = [[0.0_f64; 4]; 4];
    let mut rhs = [0.0_f64; 4];
    for p in points {
        let x = (p.voltage - center) / scale;
        let basis = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            rhs[i] += basis[i] * p.temperature;
            for j in 0..4 {
                normal[i][j] += basis[i] * basis[j];
            }
        }
    }
    let a = solve4(normal, rhs).ok_or(CalibError::DegenerateVoltages(distinct))?;

    // T = Σ a_k ((V - m)/s)^k expanded into powers of V.
    let (m, s) = (center, scale);
    let (s2, s3) = (s * s, s * s * s);
    let c3 = a[3] / s3;
    let c2 = a[2] / s2 - 3.0 * a[3] * m / s3;
    let c1 = a[1] / s - 2.0 * a[2] * m / s2 + 3.0 * a[3] * m * m / s3;
    let c0 = a[0] - a[1] * m / s + a[2] * m * m / s2 - a[3] * m * m * m / s3;
    Ok(CalibrationPoly { c3, c2, c1, c0 })
}

/// Residuals `T_i - poly(V_i)` for each point.
pub fn residuals(poly: &CalibrationPoly, points: &[CalibrationPoint]) -> Vec<f64> {
    points
        .iter()
        .map(|p| p.temperature - poly.eval(p.voltage))
        .collect()
}

pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|r| r * r).sum::<f64>() / values.len() as f64).sqrt()
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let span = v.last().unwrap_or(&0.0) - v.first().unwrap_or(&0.0);
    let tol = 1e-12 * span.abs().max(1.0);
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for x in v {
        if x - last > tol {
            count += 1;
            last = x;
        }
    }
    count
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, p) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *x -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let tail: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Some(x)
}

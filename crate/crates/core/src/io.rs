//! Plain-text formats: calibration points, step records and JSON documents.

use std::fmt::Write as _;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::calib::CalibrationPoint;
use crate::sysid::{sample_time, StepRecord};

pub const CALIBRATION_HEADER: &str = "T,V";
pub const STEP_RECORD_HEADER: &str = "t,u,T";
/// Largest deviation of a sample interval from the inferred timestep.
pub const MAX_JITTER: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("expected header `{expected}`, found `{found}`")]
    Header {
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("sample interval at line {line} deviates from {ts} s")]
    Jitter { line: usize, ts: f64 },
    #[error("input changes more than once (line {0})")]
    MultipleSteps(usize),
    #[error("too few rows: {0}")]
    TooShort(usize),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn check_header(first: Option<(usize, &str)>, expected: &'static str) -> Result<(), FormatError> {
    let found = first.map(|(_, l)| l).unwrap_or_default();
    let normalized: String = found.chars().filter(|c| !c.is_whitespace()).collect();
    if normalized != expected {
        return Err(FormatError::Header {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

fn parse_fields<const N: usize>(line: usize, text: &str) -> Result<[f64; N], FormatError> {
    let fields: Vec<&str> = text.split(',').map(str::trim).collect();
    if fields.len() != N {
        return Err(FormatError::Parse {
            line,
            msg: format!("expected {N} fields, found {}", fields.len()),
        });
    }
    let mut out = [0.0_f64; N];
    for (slot, field) in out.iter_mut().zip(&fields) {
        *slot = field.parse().map_err(|_| FormatError::Parse {
            line,
            msg: format!("`{field}` is not a number"),
        })?;
        if !slot.is_finite() {
            return Err(FormatError::Parse {
                line,
                msg: format!("`{field}` is not finite"),
            });
        }
    }
    Ok(out)
}

/// Parses `T,V` calibration data: one `temperature_c,voltage_v` per line.
pub fn parse_calibration_points(text: &str) -> Result<Vec<CalibrationPoint>, FormatError> {
    let mut lines = data_lines(text);
    check_header(lines.next(), CALIBRATION_HEADER)?;
    lines
        .map(|(n, l)| {
            let [t, v] = parse_fields::<2>(n, l)?;
            Ok(CalibrationPoint::new(t, v))
        })
        .collect()
}

pub fn write_calibration_points(points: &[CalibrationPoint]) -> String {
    let mut out = format!("{CALIBRATION_HEADER}\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.temperature, p.voltage);
    }
    out
}

/// Writes a step record as `t,u,T` rows.
pub fn write_step_record(rec: &StepRecord) -> String {
    let mut out = format!("{STEP_RECORD_HEADER}\n");
    for (i, y) in rec.samples.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", rec.time(i), rec.input_at(i), y);
    }
    out
}

/// Parses a `t,u,T` step record, inferring and validating the timestep.
pub fn parse_step_record(text: &str) -> Result<StepRecord, FormatError> {
    let mut lines = data_lines(text);
    check_header(lines.next(), STEP_RECORD_HEADER)?;
    let rows: Vec<(usize, [f64; 3])> = lines
        .map(|(n, l)| Ok((n, parse_fields::<3>(n, l)?)))
        .collect::<Result<_, FormatError>>()?;
    if rows.len() < 2 {
        return Err(FormatError::TooShort(rows.len()));
    }
    let t0 = rows[0].1[0];
    let ts = rows[1].1[0] - t0;
    if !(ts > 0.0) {
        return Err(FormatError::Jitter {
            line: rows[1].0,
            ts,
        });
    }
    for (i, (line, [t, _, _])) in rows.iter().enumerate() {
        if (t - t0 - sample_time(i, ts)).abs() > MAX_JITTER
            && (t - t0 - i as f64 * ts).abs() > MAX_JITTER
        {
            return Err(FormatError::Jitter { line: *line, ts });
        }
    }
    let u0 = rows[0].1[1];
    let mut u1 = u0;
    let mut t_step = rows.last().map(|r| r.1[0] - t0).unwrap_or(0.0);
    let mut stepped = false;
    for (line, [t, u, _]) in &rows {
        if !stepped && *u != u0 {
            stepped = true;
            u1 = *u;
            t_step = t - t0;
        } else if stepped && *u != u1 {
            return Err(FormatError::MultipleSteps(*line));
        }
    }
    Ok(StepRecord {
        ts,
        u0,
        u1,
        samples: rows.iter().map(|r| r.1[2]).collect(),
        t_step,
    })
}

pub fn to_document<T: Serialize>(value: &T) -> Result<String, FormatError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

pub fn from_document<T: DeserializeOwned>(text: &str) -> Result<T, FormatError> {
    Ok(serde_json::from_str(text)?)
}

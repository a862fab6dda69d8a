//! Request and response bodies of the HTTP service.

use serde::{Deserialize, Serialize};

use crate::calib::{residuals, rms, CalibrationPoint, CalibrationPoly};
use crate::sim::{SimLog, Summary};
use crate::sysid::StepRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateRequest {
    pub points: Vec<CalibrationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateResponse {
    pub poly: CalibrationPoly,
    /// Measured minus fitted temperature, one per input point.
    pub residuals: Vec<f64>,
    pub rms: f64,
}

impl CalibrateResponse {
    pub fn new(poly: CalibrationPoly, points: &[CalibrationPoint]) -> Self {
        let residuals = residuals(&poly, points);
        let rms = rms(&residuals);
        Self {
            poly,
            residuals,
            rms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub u0: f64,
    pub u1: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default = "default_preset")]
    pub preset: String,
}

fn default_duration() -> f64 {
    60.0
}

fn default_ts() -> f64 {
    0.1
}

fn default_preset() -> String {
    "canonical".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifyRequest {
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    /// Full log in CSV form.
    pub csv: String,
    pub summary: Summary,
}

impl From<&SimLog> for SimulateResponse {
    fn from(log: &SimLog) -> Self {
        Self {
            csv: log.to_csv(),
            summary: log.summary.clone(),
        }
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

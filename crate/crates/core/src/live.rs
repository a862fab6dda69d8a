//! Messages of the live trainer stream.
//!
//! The stream is line oriented: each message is one JSON object. The server
//! publishes a `sample` per tick and answers commands with `ack` or `error`.

use serde::{Deserialize, Serialize};

use crate::control::ControllerConfig;
use crate::sim::LogRow;

/// Operator command, applied at the next tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    SetSetpoint { value: f64 },
    SetThrottle { value: f64 },
    Pause,
    Resume,
    Reset,
    SetController { controller: ControllerConfig },
}

impl Command {
    pub fn parse(line: &str) -> Result<Self, String> {
        serde_json::from_str(line.trim()).map_err(|e| format!("malformed command: {e}"))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Command::SetSetpoint { .. } => "set_setpoint",
            Command::SetThrottle { .. } => "set_throttle",
            Command::Pause => "pause",
            Command::Resume => "resume",
            Command::Reset => "reset",
            Command::SetController { .. } => "set_controller",
        }
    }
}

/// One tick of the live loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub seq: u64,
    pub t: f64,
    pub setpoint: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
    #[serde(rename = "V")]
    pub voltage: f64,
    pub u: f64,
    pub region: String,
    pub throttle: f64,
}

impl Sample {
    pub fn from_row(seq: u64, row: &LogRow) -> Self {
        Self {
            seq,
            t: row.t,
            setpoint: row.setpoint,
            temperature: row.temp_measured,
            voltage: row.volts_measured,
            u: row.u_daq,
            region: row.region_label(),
            throttle: row.throttle,
        }
    }
}

/// Anything the server sends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Sample(Sample),
    Ack { command: String },
    Error { message: String },
}

impl ServerMessage {
    /// Single-line JSON encoding.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("message types always serialize")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim())
    }
}

//! Region-switched discrete PI control.
//!
//! Each input region has its own PI gains. The active region is chosen from
//! the previous tick's saturated output, all regions share one integrator,
//! and the output is clamped to the DAQ range with conditional-integration
//! anti-windup.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("plant input {0} is negative")]
    NegativeInput(f64),
    #[error("invalid controller document: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIGains {
    /// DAQ volts per °C.
    pub kp: f64,
    /// DAQ volts per °C·s.
    pub ki: f64,
}

impl PIGains {
    pub const fn new(kp: f64, ki: f64) -> Self {
        Self { kp, ki }
    }
}

/// One row of the controller document: gains active on `[u_low, u_high)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRegion {
    pub u_low: f64,
    /// `None` (JSON `null`) for the unbounded top region.
    pub u_high: Option<f64>,
    pub kp: f64,
    pub ki: f64,
}

impl ControlRegion {
    pub fn gains(&self) -> PIGains {
        PIGains::new(self.kp, self.ki)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.u_low && self.u_high.is_none_or(|hi| u < hi)
    }
}

/// Controller description document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub regions: Vec<ControlRegion>,
    pub ts: f64,
    pub sat_low: f64,
    pub sat_high: f64,
    #[serde(default = "enabled")]
    pub anti_windup: bool,
}

fn enabled() -> bool {
    true
}

impl Default for ControllerConfig {
    /// Three-region controller for the trainer:
    /// `1.3 + 0.11/s`, `1.5 + 0.13/s`, `1.8 + 0.12/s` switched at 1 and 2 V.
    fn default() -> Self {
        Self {
            regions: vec![
                ControlRegion {
                    u_low: 0.0,
                    u_high: Some(1.0),
                    kp: 1.3,
                    ki: 0.11,
                },
                ControlRegion {
                    u_low: 1.0,
                    u_high: Some(2.0),
                    kp: 1.5,
                    ki: 0.13,
                },
                ControlRegion {
                    u_low: 2.0,
                    u_high: None,
                    kp: 1.8,
                    ki: 0.12,
                },
            ],
            ts: 0.1,
            sat_low: 0.0,
            sat_high: 4.0,
            anti_windup: true,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |msg: String| Err(ControlError::InvalidConfig(msg));
        let Some(first) = self.regions.first() else {
            return bad("at least one region is required".into());
        };
        if first.u_low != 0.0 {
            return bad(format!(
                "first region must start at 0, starts at {}",
                first.u_low
            ));
        }
        for (i, r) in self.regions.iter().enumerate() {
            let last = i + 1 == self.regions.len();
            match (r.u_high, last) {
                (None, true) => {}
                (Some(hi), false) => {
                    if !(hi > r.u_low) {
                        return bad(format!("region {i} is empty"));
                    }
                    if self.regions[i + 1].u_low != hi {
                        return bad(format!("gap or overlap after region {i}"));
                    }
                }
                (None, false) => return bad(format!("region {i} is unbounded but not last")),
                (Some(_), true) => {
                    return bad("last region must be unbounded (u_high = null)".into())
                }
            }
            if !(r.kp >= 0.0 && r.ki >= 0.0) || !r.kp.is_finite() || !r.ki.is_finite() {
                return bad(format!("region {i} gains must be non-negative"));
            }
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return bad(format!("ts must be positive, got {}", self.ts));
        }
        if !(self.sat_low >= 0.0 && self.sat_low < self.sat_high) || !self.sat_high.is_finite() {
            return bad("saturation must satisfy 0 ≤ sat_low < sat_high".into());
        }
        Ok(())
    }

    /// Largest proportional-gain gap between any two regions.
    pub fn max_kp_gap(&self) -> f64 {
        let (lo, hi) = self
            .regions
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
                (a.min(r.kp), b.max(r.kp))
            });
        hi - lo
    }

    pub fn max_ki(&self) -> f64 {
        self.regions.iter().map(|r| r.ki).fold(0.0, f64::max)
    }
}

/// Index of the region whose half-open interval contains `u_prev`.
pub fn select_region(u_prev: f64, regions: &[ControlRegion]) -> Result<usize, ControlError> {
    if u_prev < 0.0 || u_prev.is_nan() {
        return Err(ControlError::NegativeInput(u_prev));
    }
    regions
        .iter()
        .position(|r| r.contains(u_prev))
        .ok_or_else(|| ControlError::InvalidConfig(format!("no region contains {u_prev}")))
}

/// Backward-Euler PI step. Returns `(u_raw, integrator')`.
pub fn pi_tick(gains: PIGains, integrator: f64, e: f64, ts: f64) -> (f64, f64) {
    let integrator = integrator + gains.ki * ts * e;
    (gains.kp * e + integrator, integrator)
}

/// Roman-numeral label of a region index (`0 -> "I"`).
pub fn region_label(index: usize) -> String {
    const NUMERALS: [(usize, &str); 9] = [
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut n = index + 1;
    let mut out = String::new();
    for (value, glyph) in NUMERALS {
        while n >= value {
            out.push_str(glyph);
            n -= value;
        }
    }
    out
}

/// Result of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Saturated DAQ command.
    pub u: f64,
    /// Unsaturated command with the tentative integrator update.
    pub u_raw: f64,
    pub region: usize,
    pub integrator: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedController {
    config: ControllerConfig,
    integrator: f64,
    u_prev: f64,
}

impl SwitchedController {
    /// Controller at rest: zero integrator, previous output at `sat_low`.
    pub fn new(config: ControllerConfig) -> Result<Self, ControlError> {
        let rest = config.sat_low;
        Self::holding(config, rest)
    }

    /// Controller in equilibrium holding output `u` with zero error.
    pub fn holding(config: ControllerConfig, u: f64) -> Result<Self, ControlError> {
        config.validate()?;
        if !(config.sat_low..=config.sat_high).contains(&u) {
            return Err(ControlError::InvalidConfig(format!(
                "held output {u} outside saturation range"
            )));
        }
        Ok(Self {
            config,
            integrator: u,
            u_prev: u,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn integrator(&self) -> f64 {
        self.integrator
    }

    pub fn u_prev(&self) -> f64 {
        self.u_prev
    }

    /// Region the next tick will use.
    pub fn active_region(&self) -> usize {
        select_region(self.u_prev, &self.config.regions)
            .expect("u_prev stays inside the validated saturation range")
    }

    /// Replaces the gain table, keeping integrator and previous output.
    pub fn set_config(&mut self, config: ControllerConfig) -> Result<(), ControlError> {
        config.validate()?;
        self.u_prev = self.u_prev.clamp(config.sat_low, config.sat_high);
        self.config = config;
        Ok(())
    }

    /// Output this controller would produce with `region`'s gains, without
    /// changing state.
    pub fn evaluate(&self, region: usize, e: f64) -> ControlOutput {
        let cfg = &self.config;
        let gains = cfg.regions[region].gains();
        let (u_raw, tentative) = pi_tick(gains, self.integrator, e, cfg.ts);
        let winding = (u_raw > cfg.sat_high && e > 0.0) || (u_raw < cfg.sat_low && e < 0.0);
        let integrator = if cfg.anti_windup && winding {
            self.integrator
        } else {
            tentative
        };
        let unclamped = gains.kp * e + integrator;
        let u = unclamped.clamp(cfg.sat_low, cfg.sat_high);
        ControlOutput {
            u,
            u_raw,
            region,
            integrator,
            saturated: u != unclamped,
        }
    }

    pub fn tick(&mut self, e: f64) -> ControlOutput {
        let out = self.evaluate(self.active_region(), e);
        self.integrator = out.integrator;
        self.u_prev = out.u;
        out
    }
}

pub fn switched_tick(ctrl: &SwitchedController, e: f64) -> (f64, SwitchedController) {
    let mut next = ctrl.clone();
    let out = next.tick(e);
    (out.u, next)
}

//! Fixed-timestep scenario engine.
//!
//! Every tick runs in a fixed order: read the sensor from the state left by
//! the previous tick, compute the error, run the switched controller, then
//! advance the plant under the new command. Setpoint and throttle schedules
//! are zero-order held and take effect at tick boundaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CalibrationPoly;
use crate::control::{region_label, ControlError, ControllerConfig, SwitchedController};
use crate::metrics::{compute_metrics, MetricOptions, StepMetrics};
use crate::plant::{PlantConfig, PlantError, PlantState};
use crate::sysid::{sample_time, StepRecord};

/// Header of the closed-loop CSV log.
pub const LOG_HEADER: &str = "t,setpoint,T_internal,T_measured,V_measured,e,u_daq,u_plant,region";

/// Seconds of pre-step samples kept in an open-loop record.
pub const PRE_STEP_S: f64 = 5.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub duration: f64,
    #[serde(default = "default_ts")]
    pub ts: f64,
    /// `[t, setpoint]` pairs, held until the next entry.
    #[serde(default)]
    pub setpoints: Vec<(f64, f64)>,
    /// `[t, factor]` pairs, held until the next entry.
    #[serde(default)]
    pub throttle: Vec<(f64, f64)>,
    #[serde(default = "default_preset")]
    pub plant_preset: String,
    /// Full plant config; overrides `plant_preset` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantConfig>,
    /// Controller document; the three-region default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller: Option<ControllerConfig>,
    /// Starting temperature. The run starts in equilibrium there: the plant
    /// at rest and the controller holding the input that sustains it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_temp: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_ts() -> f64 {
    0.1
}

fn default_preset() -> String {
    "canonical".to_string()
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            duration: 60.0,
            ts: default_ts(),
            setpoints: Vec::new(),
            throttle: Vec::new(),
            plant_preset: default_preset(),
            plant: None,
            controller: None,
            initial_temp: None,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Plant config after preset/override resolution, with the scenario seed.
    pub fn plant_config(&self) -> Result<PlantConfig, SimError> {
        let mut cfg = match &self.plant {
            Some(cfg) => cfg.clone(),
            None => PlantConfig::preset(&self.plant_preset)?,
        };
        cfg.noise_seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn controller_config(&self) -> ControllerConfig {
        self.controller.clone().unwrap_or_else(|| ControllerConfig {
            ts: self.ts,
            ..ControllerConfig::default()
        })
    }

    pub fn tick_count(&self) -> usize {
        (self.duration / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidScenario(msg));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return bad(format!("ts must be positive, got {}", self.ts));
        }
        for (name, sched) in [("setpoints", &self.setpoints), ("throttle", &self.throttle)] {
            if sched.windows(2).any(|w| w[1].0 < w[0].0) {
                return bad(format!("{name} schedule is not time-sorted"));
            }
            if sched
                .iter()
                .any(|(t, v)| !t.is_finite() || !v.is_finite() || *t < 0.0)
            {
                return bad(format!("{name} schedule has invalid entries"));
            }
        }
        if let Some(&(_, f)) = self.throttle.iter().find(|(_, f)| !(*f > 0.0)) {
            return Err(PlantError::NonPositiveFactor(f).into());
        }
        let ctrl = self.controller_config();
        ctrl.validate()?;
        if (ctrl.ts - self.ts).abs() > 1e-12 {
            return bad(format!(
                "controller ts {} differs from scenario ts {}",
                ctrl.ts, self.ts
            ));
        }
        self.plant_config()?;
        Ok(())
    }
}

/// One logged tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub setpoint: f64,
    pub temp_internal: f64,
    pub temp_measured: f64,
    pub volts_measured: f64,
    pub error: f64,
    pub u_daq: f64,
    pub u_plant: f64,
    pub region: usize,
    pub throttle: f64,
    pub integrator: f64,
}

impl LogRow {
    pub fn region_label(&self) -> String {
        region_label(self.region)
    }

    fn write_csv(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            self.t,
            self.setpoint,
            self.temp_internal,
            self.temp_measured,
            self.volts_measured,
            self.error,
            self.u_daq,
            self.u_plant,
            self.region_label()
        );
    }
}

/// Metrics of one setpoint change inside a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: f64,
    pub from: f64,
    pub to: f64,
    pub metrics: Option<StepMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub switch_count: usize,
    pub regions_visited: Vec<String>,
    pub steps: Vec<StepSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub rows: Vec<LogRow>,
    pub summary: Summary,
}

impl SimLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(LOG_HEADER);
        out.push('\n');
        for row in &self.rows {
            row.write_csv(&mut out);
        }
        out
    }
}

/// Held value of a `[t, value]` schedule at time `t`.
fn scheduled(schedule: &[(f64, f64)], t: f64) -> Option<f64> {
    schedule
        .iter()
        .take_while(|(at, _)| *at <= t + TIME_EPS)
        .last()
        .map(|&(_, v)| v)
}

/// Closed-loop simulation advanced one tick at a time.
///
/// Used both for batch runs and for the paced live loop, where operator
/// commands overwrite the held setpoint or throttle between ticks.
#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    base_plant: PlantConfig,
    plant_cfg: PlantConfig,
    plant: PlantState,
    controller: SwitchedController,
    calib: CalibrationPoly,
    tick: usize,
    setpoint: f64,
    throttle: f64,
    next_setpoint: usize,
    next_throttle: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::with_calibration(scenario, CalibrationPoly::TRAINER)
    }

    pub fn with_calibration(scenario: Scenario, calib: CalibrationPoly) -> Result<Self, SimError> {
        scenario.validate()?;
        if !calib.is_strictly_increasing() {
            return Err(PlantError::Calib(crate::calib::CalibError::NonMonotonePoly).into());
        }
        let base_plant = scenario.plant_config()?;
        let throttle = scheduled(&scenario.throttle, 0.0).unwrap_or(base_plant.throttle_factor);
        let plant_cfg = base_plant.with_throttle(throttle)?;
        let initial_temp = scenario.initial_temp.unwrap_or(plant_cfg.ambient_temp);
        let held = plant_cfg.equilibrium_input(initial_temp)?;
        let controller = SwitchedController::holding(scenario.controller_config(), held)?;
        let plant = PlantState::new(initial_temp, &plant_cfg);
        Ok(Self {
            setpoint: initial_temp,
            throttle,
            base_plant,
            plant_cfg,
            plant,
            controller,
            calib,
            tick: 0,
            next_setpoint: 0,
            next_throttle: 0,
            scenario,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        sample_time(self.tick, self.scenario.ts)
    }

    pub fn ticks(&self) -> usize {
        self.tick
    }

    pub fn controller(&self) -> &SwitchedController {
        &self.controller
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn plant_config(&self) -> &PlantConfig {
        &self.plant_cfg
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    /// Holds a new setpoint from the next tick on.
    pub fn set_setpoint(&mut self, value: f64) -> Result<(), SimError> {
        if !value.is_finite() {
            return Err(SimError::InvalidScenario(format!("setpoint {value}")));
        }
        self.setpoint = value;
        Ok(())
    }

    /// Holds a new throttle factor from the next tick on.
    pub fn set_throttle(&mut self, factor: f64) -> Result<(), SimError> {
        self.plant_cfg = self.base_plant.with_throttle(factor)?;
        self.throttle = factor;
        Ok(())
    }

    pub fn set_controller(&mut self, config: ControllerConfig) -> Result<(), SimError> {
        if (config.ts - self.scenario.ts).abs() > 1e-12 {
            return Err(SimError::InvalidScenario(format!(
                "controller ts {} differs from loop ts {}",
                config.ts, self.scenario.ts
            )));
        }
        self.controller.set_config(config)?;
        Ok(())
    }

    fn apply_schedules(&mut self, t: f64) -> Result<(), SimError> {
        while let Some(&(at, value)) = self.scenario.setpoints.get(self.next_setpoint) {
            if at > t + TIME_EPS {
                break;
            }
            self.setpoint = value;
            self.next_setpoint += 1;
        }
        while let Some(&(at, factor)) = self.scenario.throttle.get(self.next_throttle) {
            if at > t + TIME_EPS {
                break;
            }
            self.set_throttle(factor)?;
            self.next_throttle += 1;
        }
        Ok(())
    }

    /// Runs one tick and returns its log row.
    pub fn step(&mut self) -> Result<LogRow, SimError> {
        let t = self.time();
        self.apply_schedules(t)?;
        let temp_internal = self.plant.temp();
        let reading = self.plant.measure(&self.plant_cfg, &self.calib)?;
        let error = self.setpoint - reading.temperature;
        let out = self.controller.tick(error);
        self.plant.tick(out.u, self.scenario.ts, &self.plant_cfg)?;
        self.tick += 1;
        Ok(LogRow {
            t,
            setpoint: self.setpoint,
            temp_internal,
            temp_measured: reading.temperature,
            volts_measured: reading.voltage,
            error,
            u_daq: out.u,
            u_plant: self.plant_cfg.drive_volts(out.u),
            region: out.region,
            throttle: self.throttle,
            integrator: out.integrator,
        })
    }
}

/// Runs a scenario to completion.
pub fn run_closed_loop(scn: &Scenario) -> Result<SimLog, SimError> {
    run_closed_loop_with(scn, MetricOptions::default())
}

pub fn run_closed_loop_with(scn: &Scenario, opts: MetricOptions) -> Result<SimLog, SimError> {
    let mut sim = Simulation::new(scn.clone())?;
    let n = scn.tick_count();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push(sim.step()?);
    }
    let summary = summarize(&rows, opts);
    Ok(SimLog { rows, summary })
}

/// Switch count, visited regions and per-setpoint-step metrics.
pub fn summarize(rows: &[LogRow], opts: MetricOptions) -> Summary {
    let switch_count = rows
        .windows(2)
        .filter(|w| w[0].region != w[1].region)
        .count();
    let mut visited: Vec<usize> = rows.iter().map(|r| r.region).collect();
    visited.sort_unstable();
    visited.dedup();

    // Segment boundaries: the first row and every setpoint change.
    let mut starts = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let changed = i > 0 && row.setpoint != rows[i - 1].setpoint;
        if changed || (i == 0 && row.setpoint != row.temp_measured) {
            starts.push(i);
        }
    }
    let steps = starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let end = starts.get(k + 1).copied().unwrap_or(rows.len());
            let from = if start == 0 {
                rows[0].temp_measured
            } else {
                rows[start - 1].setpoint
            };
            let to = rows[start].setpoint;
            let seg = &rows[start..end];
            let times: Vec<f64> = seg.iter().map(|r| r.t - rows[start].t).collect();
            let values: Vec<f64> = seg.iter().map(|r| r.temp_measured).collect();
            let result = compute_metrics(&times, &values, to, to - from, opts);
            StepSummary {
                t: rows[start].t,
                from,
                to,
                error: result.as_ref().err().map(ToString::to_string),
                metrics: result.ok(),
            }
        })
        .collect();
    Summary {
        switch_count,
        regions_visited: visited.into_iter().map(region_label).collect(),
        steps,
    }
}

/// Open-loop step test: settle at `u0`, then record `PRE_STEP_S` seconds at
/// `u0` followed by `duration` seconds at `u1`.
pub fn run_open_loop_step(
    u0: f64,
    u1: f64,
    duration: f64,
    ts: f64,
    cfg: &PlantConfig,
) -> Result<StepRecord, SimError> {
    cfg.validate()?;
    cfg.steady_state_temp(u0)?;
    cfg.steady_state_temp(u1)?;
    if !(duration > 0.0) || !(ts > 0.0) {
        return Err(SimError::InvalidScenario(format!(
            "duration {duration} and ts {ts} must be positive"
        )));
    }
    let mut plant = PlantState::at_ambient(cfg);
    let tau_max = cfg.region_taus.iter().copied().fold(0.0, f64::max);
    let settle_ticks = (10.0 * tau_max / ts).ceil() as usize;
    for _ in 0..settle_ticks {
        plant.tick(u0, ts, cfg)?;
    }
    let pre = (PRE_STEP_S / ts).round() as usize;
    let post = (duration / ts).round() as usize;
    let t_step = sample_time(pre, ts);
    let mut samples = Vec::with_capacity(pre + post + 1);
    for i in 0..=pre + post {
        samples.push(plant.temp());
        plant.tick(if i < pre { u0 } else { u1 }, ts, cfg)?;
    }
    Ok(StepRecord {
        ts,
        u0,
        u1,
        samples,
        t_step,
    })
}

//! Virtual hot-air-blower plant.
//!
//! The thermal behaviour is a first-order lag towards a piecewise-linear
//! static map `T_ss(u)`, anchored at ambient temperature. Each input region
//! contributes its own incremental gain to the map and its own time constant
//! to the lag. The lag is advanced with an exact zero-order-hold update, so a
//! trajectory that stays in one region matches the analytic solution
//! regardless of the timestep.
//!
//! The time constant is scheduled on the operating point: the region of the
//! equilibrium input that would hold the current temperature (evaluated at
//! the midpoint of each tick's move). A step from `u = 0` to `u = 1`
//! therefore evolves entirely with region I dynamics, the same way the local
//! model was observed when it was identified.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{CalibError, CalibrationPoly};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("input {u} V outside DAQ range [{lo}, {hi}] V")]
    InputOutOfRange { u: f64, lo: f64, hi: f64 },
    #[error("timestep must be positive, got {0}")]
    NonPositiveTimestep(f64),
    #[error("throttle factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("unknown plant preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid plant config: {0}")]
    InvalidConfig(String),
    #[error("temperature {0} °C is not reachable in steady state")]
    Unreachable(f64),
    #[error(transparent)]
    Calib(#[from] CalibError),
}

/// Plant parameters. Field names are the keys of the config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub ambient_temp: f64,
    /// Incremental steady-state gain per region, °C per DAQ volt.
    pub region_gains: Vec<f64>,
    /// Time constant per region, seconds.
    pub region_taus: Vec<f64>,
    /// Region boundaries in DAQ volts, strictly increasing.
    pub region_breaks: Vec<f64>,
    #[serde(default = "default_daq_range")]
    pub daq_out_range: [f64; 2],
    #[serde(default = "default_plant_range")]
    pub plant_in_range: [f64; 2],
    pub amp_gain: f64,
    #[serde(default)]
    pub sensor_delay_s: f64,
    #[serde(default = "one")]
    pub throttle_factor: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn default_daq_range() -> [f64; 2] {
    [0.0, 4.0]
}

fn default_plant_range() -> [f64; 2] {
    [0.0, 13.0]
}

fn one() -> f64 {
    1.0
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl PlantConfig {
    /// Identified regional models: gains (9.5, 8, 10), taus (6.5, 15, 16).
    pub fn canonical() -> Self {
        Self {
            ambient_temp: 29.6,
            region_gains: vec![9.5, 8.0, 10.0],
            region_taus: vec![6.5, 15.0, 16.0],
            region_breaks: vec![1.0, 2.0],
            daq_out_range: default_daq_range(),
            plant_in_range: default_plant_range(),
            amp_gain: 13.0 / 4.0,
            sensor_delay_s: 0.0,
            throttle_factor: 1.0,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    /// Gains anchored on the recorded step endpoints 39.5, 48.7 and 59.0 °C.
    pub fn empirical() -> Self {
        Self {
            region_gains: vec![9.9, 9.2, 10.3],
            ..Self::canonical()
        }
    }

    pub fn preset(name: &str) -> Result<Self, PlantError> {
        match name {
            "canonical" => Ok(Self::canonical()),
            "empirical" => Ok(Self::empirical()),
            other => Err(PlantError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |msg: &str| Err(PlantError::InvalidConfig(msg.to_string()));
        let n = self.region_gains.len();
        if n == 0 || self.region_taus.len() != n || self.region_breaks.len() + 1 != n {
            return bad("need one gain and tau per region and one break fewer");
        }
        if self
            .region_gains
            .iter()
            .any(|g| !(*g > 0.0) || !g.is_finite())
        {
            return bad("region gains must be positive");
        }
        if self
            .region_taus
            .iter()
            .any(|t| !(*t > 0.0) || !t.is_finite())
        {
            return bad("region taus must be positive");
        }
        if self.region_breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("region breaks must be strictly increasing");
        }
        let [lo, hi] = self.daq_out_range;
        if !(lo < hi) {
            return bad("daq_out_range must be increasing");
        }
        if self.region_breaks.iter().any(|b| *b <= lo || *b >= hi) {
            return bad("region breaks must lie inside daq_out_range");
        }
        if !self.ambient_temp.is_finite() {
            return bad("ambient_temp must be finite");
        }
        if !(self.amp_gain > 0.0)
            || (self.amp_gain * hi - self.plant_in_range[1]).abs() > 1e-9
            || (self.amp_gain * lo - self.plant_in_range[0]).abs() > 1e-9
        {
            return bad("amp_gain must map daq_out_range onto plant_in_range");
        }
        if !(self.sensor_delay_s >= 0.0) || !self.sensor_delay_s.is_finite() {
            return bad("sensor_delay_s must be non-negative");
        }
        if !(self.throttle_factor > 0.0) {
            return Err(PlantError::NonPositiveFactor(self.throttle_factor));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn region_count(&self) -> usize {
        self.region_gains.len()
    }

    /// Region index of a DAQ input: region `i` covers `[break_{i-1}, break_i)`.
    pub fn input_region(&self, u: f64) -> usize {
        self.region_breaks.iter().filter(|&&b| u >= b).count()
    }

    fn check_input(&self, u: f64) -> Result<(), PlantError> {
        let [lo, hi] = self.daq_out_range;
        if !(lo..=hi).contains(&u) {
            return Err(PlantError::InputOutOfRange { u, lo, hi });
        }
        Ok(())
    }

    /// Static map without range checking.
    fn static_map(&self, u: f64) -> f64 {
        let mut rise = 0.0;
        let mut lower = self.daq_out_range[0];
        for (i, gain) in self.region_gains.iter().enumerate() {
            let upper = self.region_breaks.get(i).copied().unwrap_or(f64::INFINITY);
            if u <= lower {
                break;
            }
            rise += gain * (u.min(upper) - lower);
            lower = upper;
        }
        self.ambient_temp + self.throttle_factor * rise
    }

    /// Steady-state temperature for a held DAQ input.
    pub fn steady_state_temp(&self, u: f64) -> Result<f64, PlantError> {
        self.check_input(u)?;
        Ok(self.static_map(u))
    }

    /// Held input that settles at `temp`, the inverse of the static map.
    pub fn equilibrium_input(&self, temp: f64) -> Result<f64, PlantError> {
        let [lo, hi] = self.daq_out_range;
        let t_max = self.static_map(hi);
        if !(self.ambient_temp - 1e-12..=t_max + 1e-12).contains(&temp) {
            return Err(PlantError::Unreachable(temp));
        }
        let mut lower = lo;
        let mut base = self.ambient_temp;
        for (i, gain) in self.region_gains.iter().enumerate() {
            let upper = self.region_breaks.get(i).copied().unwrap_or(hi);
            let top = base + self.throttle_factor * gain * (upper - lower);
            if temp < top || i + 1 == self.region_count() {
                let u = lower + (temp - base) / (self.throttle_factor * gain);
                return Ok(u.clamp(lo, hi));
            }
            base = top;
            lower = upper;
        }
        unreachable!("validated config has at least one region")
    }

    /// Region whose segment of the static map contains `temp`.
    ///
    /// Temperatures below ambient use the first region and those above the
    /// top of the map use the last.
    pub fn operating_region(&self, temp: f64) -> usize {
        self.region_breaks
            .iter()
            .filter(|&&b| temp >= self.static_map(b))
            .count()
    }

    /// Plant drive voltage produced by the amplifier for a DAQ command.
    pub fn drive_volts(&self, u: f64) -> f64 {
        self.amp_gain * u
    }

    pub fn with_throttle(&self, factor: f64) -> Result<Self, PlantError> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(PlantError::NonPositiveFactor(factor));
        }
        Ok(Self {
            throttle_factor: factor,
            ..self.clone()
        })
    }
}

pub fn steady_state_temp(u: f64, cfg: &PlantConfig) -> Result<f64, PlantError> {
    cfg.steady_state_temp(u)
}

pub fn set_throttle(cfg: &PlantConfig, factor: f64) -> Result<PlantConfig, PlantError> {
    cfg.with_throttle(factor)
}

/// Sensor reading as seen by the control computer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub voltage: f64,
    pub temperature: f64,
}

/// Mutable plant state. Owned by one simulation loop.
#[derive(Debug, Clone)]
pub struct PlantState {
    temp: f64,
    t: f64,
    /// `(time, temperature)` samples, oldest first.
    delay_buffer: VecDeque<(f64, f64)>,
    rng: ChaCha8Rng,
}

impl PlantState {
    /// Plant at rest at `initial_temp`; the delay line reads `initial_temp`
    /// until it has filled.
    pub fn new(initial_temp: f64, cfg: &PlantConfig) -> Self {
        let mut delay_buffer = VecDeque::new();
        delay_buffer.push_back((0.0, initial_temp));
        Self {
            temp: initial_temp,
            t: 0.0,
            delay_buffer,
            rng: ChaCha8Rng::seed_from_u64(cfg.noise_seed),
        }
    }

    pub fn at_ambient(cfg: &PlantConfig) -> Self {
        Self::new(cfg.ambient_temp, cfg)
    }

    /// Internal (undelayed, noise-free) temperature.
    pub fn temp(&self) -> f64 {
        self.temp
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Advances one zero-order-hold step of length `ts` with input `u`.
    pub fn tick(&mut self, u: f64, ts: f64, cfg: &PlantConfig) -> Result<(), PlantError> {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(PlantError::NonPositiveTimestep(ts));
        }
        let target = cfg.steady_state_temp(u)?;
        let lag = |tau: f64| target + (self.temp - target) * (-ts / tau).exp();
        let here = cfg.operating_region(self.temp);
        let trial = lag(cfg.region_taus[here]);
        // Band of the tick's midpoint, so a tick that starts on a band edge
        // uses the band it moves into.
        let mid = cfg.operating_region(0.5 * (self.temp + trial));
        self.temp = if mid == here {
            trial
        } else {
            lag(cfg.region_taus[mid])
        };
        self.t += ts;
        self.delay_buffer.push_back((self.t, self.temp));
        let horizon = self.t - cfg.sensor_delay_s + TIME_EPS;
        while self.delay_buffer.len() > 1 && self.delay_buffer[1].0 <= horizon {
            self.delay_buffer.pop_front();
        }
        Ok(())
    }

    /// Temperature `sensor_delay_s` in the past, or the oldest sample while
    /// the delay line is warming up.
    pub fn delayed_temp(&self, cfg: &PlantConfig) -> f64 {
        let horizon = self.t - cfg.sensor_delay_s + TIME_EPS;
        self.delay_buffer
            .iter()
            .rev()
            .find(|(time, _)| *time <= horizon)
            .or(self.delay_buffer.front())
            .map(|&(_, temp)| temp)
            .unwrap_or(self.temp)
    }

    /// Reads the sensor: delay, optional Gaussian noise, conversion to volts
    /// through the calibration inverse and back to °C the way the control
    /// computer does it.
    pub fn measure(
        &mut self,
        cfg: &PlantConfig,
        calib: &CalibrationPoly,
    ) -> Result<Measurement, PlantError> {
        let mut sensed = self.delayed_temp(cfg);
        if cfg.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, cfg.noise_sigma)
                .map_err(|e| PlantError::InvalidConfig(e.to_string()))?;
            sensed += normal.sample(&mut self.rng);
        }
        let voltage = calib.invert(sensed)?;
        Ok(Measurement {
            voltage,
            temperature: calib.eval(voltage),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn static_map_anchors() {
        let cfg = PlantConfig::canonical();
        assert_eq!(cfg.steady_state_temp(0.0).unwrap(), 29.6);
        assert!((cfg.steady_state_temp(1.0).unwrap() - 39.1).abs() < 1e-12);
        assert!((cfg.steady_state_temp(3.0).unwrap() - 57.1).abs() < 1e-12);
        assert!((cfg.steady_state_temp(4.0).unwrap() - 67.1).abs() < 1e-12);
    }

    #[test]
    fn empirical_preset_hits_recorded_endpoints() {
        let cfg = PlantConfig::empirical();
        for (u, t) in [(1.0, 39.5), (2.0, 48.7), (3.0, 59.0)] {
            assert!((cfg.steady_state_temp(u).unwrap() - t).abs() < 1e-9);
        }
    }

    #[test]
    fn input_out_of_range() {
        let cfg = PlantConfig::canonical();
        assert!(matches!(
            cfg.steady_state_temp(4.5),
            Err(PlantError::InputOutOfRange { .. })
        ));
        assert!(cfg.steady_state_temp(-0.1).is_err());
    }

    #[test]
    fn static_map_continuous_at_breaks() {
        let cfg = PlantConfig::canonical();
        for b in [1.0, 2.0] {
            let below = cfg.steady_state_temp(b - 1e-9).unwrap();
            let at = cfg.steady_state_temp(b).unwrap();
            assert!((at - below).abs() < 1e-7);
        }
    }

    #[test]
    fn equilibrium_input_inverts_map() {
        let cfg = PlantConfig::canonical();
        for i in 0..=400 {
            let u = i as f64 / 100.0;
            let t = cfg.steady_state_temp(u).unwrap();
            assert!((cfg.equilibrium_input(t).unwrap() - u).abs() < 1e-9);
        }
        assert!(cfg.equilibrium_input(20.0).is_err());
        assert!(cfg.equilibrium_input(70.0).is_err());
    }

    #[test]
    fn throttle_scales_map() {
        let cfg = PlantConfig::canonical();
        let same = cfg.with_throttle(1.0).unwrap();
        assert_eq!(same.steady_state_temp(2.5), cfg.steady_state_temp(2.5));
        let low = set_throttle(&cfg, 0.8).unwrap();
        assert!((low.steady_state_temp(1.0).unwrap() - 37.2).abs() < 1e-12);
        assert_eq!(
            cfg.with_throttle(0.0),
            Err(PlantError::NonPositiveFactor(0.0))
        );
    }

    #[test]
    fn voltage_chain() {
        let cfg = PlantConfig::canonical();
        assert_eq!(cfg.drive_volts(4.0), 13.0);
        assert_eq!(cfg.drive_volts(0.0), 0.0);
        let mut bad = cfg.clone();
        bad.amp_gain = 3.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PlantConfig::canonical().validate().is_ok());
        let mut c = PlantConfig::canonical();
        c.region_taus[1] = 0.0;
        assert!(c.validate().is_err());
        let mut c = PlantConfig::canonical();
        c.region_breaks = vec![2.0, 1.0];
        assert!(c.validate().is_err());
        assert!(matches!(
            PlantConfig::preset("nope"),
            Err(PlantError::UnknownPreset(_))
        ));
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let cfg = PlantConfig::canonical();
        let t = cfg.steady_state_temp(1.7).unwrap();
        let mut s = PlantState::new(t, &cfg);
        s.tick(1.7, 0.1, &cfg).unwrap();
        assert!((s.temp() - t).abs() < 1e-12);
    }

    #[test]
    fn one_time_constant_step() {
        let cfg = PlantConfig::canonical();
        let mut s = PlantState::at_ambient(&cfg);
        for _ in 0..65 {
            s.tick(1.0, 0.1, &cfg).unwrap();
        }
        let want = 29.6 + 9.5 * (1.0 - (-1.0f64).exp());
        assert!((s.temp() - want).abs() < 1e-10, "{}", s.temp());
        assert!((s.temp() - 35.605).abs() < 1e-3);
    }

    #[test]
    fn rate_matches_ode_for_small_steps() {
        let cfg = PlantConfig::canonical();
        for ts in [1e-2, 1e-3, 1e-4] {
            let mut s = PlantState::new(31.0, &cfg);
            s.tick(0.8, ts, &cfg).unwrap();
            let rate = (s.temp() - 31.0) / ts;
            let ode = (cfg.steady_state_temp(0.8).unwrap() - 31.0) / 6.5;
            assert!((rate - ode).abs() < ode.abs() * ts, "ts={ts}");
        }
    }

    #[test]
    fn rejects_bad_timestep() {
        let cfg = PlantConfig::canonical();
        let mut s = PlantState::at_ambient(&cfg);
        assert_eq!(
            s.tick(1.0, 0.0, &cfg),
            Err(PlantError::NonPositiveTimestep(0.0))
        );
    }

    #[test]
    fn measurement_identity_path() {
        let cfg = PlantConfig::canonical();
        let calib = CalibrationPoly::TRAINER;
        let mut s = PlantState::new(38.1792, &cfg);
        let m = s.measure(&cfg, &calib).unwrap();
        assert!(m.voltage.abs() < 1e-12);
        assert!((m.temperature - 38.1792).abs() < 1e-12);

        let mut s = PlantState::at_ambient(&cfg);
        for k in 0..200 {
            s.tick(if k < 100 { 3.0 } else { 0.5 }, 0.1, &cfg).unwrap();
            let m = s.measure(&cfg, &calib).unwrap();
            assert!((m.temperature - s.temp()).abs() < 1e-9);
        }
    }

    #[test]
    fn delay_replays_internal_temperature() {
        let mut cfg = PlantConfig::canonical();
        cfg.sensor_delay_s = 0.5;
        let calib = CalibrationPoly::TRAINER;
        let mut s = PlantState::at_ambient(&cfg);
        let mut history = vec![s.temp()];
        for k in 1..=120usize {
            s.tick(if k < 60 { 2.5 } else { 0.3 }, 0.1, &cfg).unwrap();
            history.push(s.temp());
            let m = s.measure(&cfg, &calib).unwrap();
            let want = history[k.saturating_sub(5)];
            assert!((m.temperature - want).abs() < 1e-9, "tick {k}");
        }
    }

    #[test]
    fn noise_is_reproducible() {
        let mut cfg = PlantConfig::canonical();
        cfg.noise_sigma = 0.2;
        cfg.noise_seed = 7;
        let calib = CalibrationPoly::TRAINER;
        let run = || {
            let mut s = PlantState::at_ambient(&cfg);
            (0..50)
                .map(|_| {
                    s.tick(1.0, 0.1, &cfg).unwrap();
                    s.measure(&cfg, &calib).unwrap().temperature
                })
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let mut s = PlantState::at_ambient(&cfg);
        let clean: Vec<f64> = (0..50)
            .map(|_| {
                s.tick(1.0, 0.1, &cfg).unwrap();
                s.temp()
            })
            .collect();
        assert!(a.iter().zip(&clean).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn operating_region_bands() {
        let cfg = PlantConfig::canonical();
        assert_eq!(cfg.operating_region(29.6), 0);
        assert_eq!(cfg.operating_region(39.0), 0);
        assert_eq!(cfg.operating_region(39.1), 1);
        assert_eq!(cfg.operating_region(47.1), 2);
        assert_eq!(cfg.operating_region(80.0), 2);
        assert_eq!(cfg.input_region(1.0), 1);
        assert_eq!(cfg.input_region(0.999), 0);
    }

    proptest! {
        #[test]
        fn exact_discretization_matches_analytic(
            region in 0usize..3,
            frac_start in 0.0f64..0.999,
            frac_u in 0.0f64..0.999,
            ts in 0.01f64..1.0,
            steps in 1usize..400,
        ) {
            let cfg = PlantConfig::canonical();
            let lo = [0.0, 1.0, 2.0][region];
            let hi = [1.0, 2.0, 4.0][region];
            let u = lo + frac_u * (hi - lo);
            let t0 = cfg.steady_state_temp(lo + frac_start * (hi - lo)).unwrap();
            let t_ss = cfg.steady_state_temp(u).unwrap();
            let tau = cfg.region_taus[region];
            let mut s = PlantState::new(t0, &cfg);
            for k in 1..=steps {
                s.tick(u, ts, &cfg).unwrap();
                let t = k as f64 * ts;
                let want = t_ss + (t0 - t_ss) * (-t / tau).exp();
                prop_assert!((s.temp() - want).abs() <= 1e-10 * want.abs());
            }
        }

        #[test]
        fn monotone_convergence(u in 0.0f64..4.0, t0 in 29.6f64..67.0) {
            let cfg = PlantConfig::canonical();
            let target = cfg.steady_state_temp(u).unwrap();
            let mut s = PlantState::new(t0, &cfg);
            let mut gap = (t0 - target).abs();
            for _ in 0..300 {
                s.tick(u, 0.1, &cfg).unwrap();
                let next = (s.temp() - target).abs();
                prop_assert!(next < gap || gap == 0.0);
                prop_assert!((s.temp() - target).signum() == (t0 - target).signum() || next == 0.0);
                gap = next;
            }
        }

        #[test]
        fn static_map_strictly_increasing(a in 0.0f64..4.0, b in 0.0f64..4.0) {
            prop_assume!(a < b);
            let cfg = PlantConfig::canonical();
            prop_assert!(cfg.steady_state_temp(a).unwrap() < cfg.steady_state_temp(b).unwrap());
        }
    }
}

//! Paced closed loop behind the live endpoint.
//!
//! One task owns the [`Simulation`]. Connection handlers validate operator
//! commands and push them into a bounded queue; the task drains the queue at
//! each tick boundary, steps the loop and fans the sample out over a
//! broadcast channel. A full queue drops its oldest command. A subscriber
//! that falls behind the broadcast buffer is disconnected by its handler, so
//! the loop never waits on a client.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::Utf8Bytes;
use habs_core::live::{Command, Sample, ServerMessage};
use habs_core::sim::SimError;
use habs_core::{Scenario, Simulation};
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use tokio::time::MissedTickBehavior;

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub scenario: Scenario,
    /// Wall-clock time per tick. Equal to the scenario timestep for real-time
    /// pacing; tests shorten it.
    pub period: Duration,
    pub queue_capacity: usize,
    /// Samples buffered per subscriber before it counts as lagging.
    pub subscriber_buffer: usize,
}

impl LiveConfig {
    pub fn new(scenario: Scenario) -> Self {
        let period = Duration::from_secs_f64(scenario.ts);
        Self {
            scenario,
            period,
            queue_capacity: 64,
            subscriber_buffer: 256,
        }
    }

    pub fn with_period(mut self, period: Duration) -> Self {
        self.period = period;
        self
    }
}

#[derive(Debug)]
struct CommandQueue {
    inner: Mutex<VecDeque<Command>>,
    capacity: usize,
}

impl CommandQueue {
    fn push(&self, cmd: Command) {
        let mut q = self.inner.lock().expect("command queue poisoned");
        if q.len() >= self.capacity {
            if let Some(dropped) = q.pop_front() {
                tracing::warn!(
                    command = dropped.kind(),
                    "command queue full, dropping oldest"
                );
            }
        }
        q.push_back(cmd);
    }

    fn drain(&self) -> Vec<Command> {
        self.inner
            .lock()
            .expect("command queue poisoned")
            .drain(..)
            .collect()
    }
}

/// Cloneable handle used by connection handlers.
#[derive(Debug, Clone)]
pub struct LiveHandle {
    queue: Arc<CommandQueue>,
    samples: broadcast::Sender<Utf8Bytes>,
    loop_ts: f64,
}

impl LiveHandle {
    /// Validates a command and queues it for the next tick boundary.
    pub fn submit(&self, cmd: Command) -> Result<(), String> {
        match &cmd {
            Command::SetSetpoint { value } if !value.is_finite() => {
                return Err(format!("setpoint must be finite, got {value}"));
            }
            Command::SetThrottle { value } if !(*value > 0.0 && value.is_finite()) => {
                return Err(format!("throttle factor must be positive, got {value}"));
            }
            Command::SetController { controller } => {
                controller.validate().map_err(|e| e.to_string())?;
                if (controller.ts - self.loop_ts).abs() > 1e-12 {
                    return Err(format!(
                        "controller ts {} differs from loop ts {}",
                        controller.ts, self.loop_ts
                    ));
                }
            }
            _ => {}
        }
        self.queue.push(cmd);
        Ok(())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Utf8Bytes> {
        self.samples.subscribe()
    }
}

struct LiveLoop {
    scenario: Scenario,
    sim: Simulation,
    paused: bool,
    seq: u64,
}

impl LiveLoop {
    fn apply(&mut self, cmd: Command) -> Result<(), SimError> {
        match cmd {
            Command::SetSetpoint { value } => self.sim.set_setpoint(value),
            Command::SetThrottle { value } => self.sim.set_throttle(value),
            Command::SetController { controller } => self.sim.set_controller(controller),
            Command::Pause => {
                self.paused = true;
                Ok(())
            }
            Command::Resume => {
                self.paused = false;
                Ok(())
            }
            Command::Reset => {
                self.sim = Simulation::new(self.scenario.clone())?;
                Ok(())
            }
        }
    }

    /// One tick boundary: apply queued commands, then step unless paused.
    fn tick(&mut self, commands: Vec<Command>) -> Option<String> {
        for cmd in commands {
            let kind = cmd.kind();
            if let Err(e) = self.apply(cmd) {
                tracing::warn!(command = kind, error = %e, "command rejected by the loop");
            }
        }
        if self.paused {
            return None;
        }
        match self.sim.step() {
            Ok(row) => {
                self.seq += 1;
                Some(ServerMessage::Sample(Sample::from_row(self.seq, &row)).to_line())
            }
            Err(e) => {
                tracing::error!(error = %e, "simulation step failed, pausing");
                self.paused = true;
                None
            }
        }
    }
}

/// Starts the live loop on the current runtime.
pub fn spawn_live(cfg: LiveConfig) -> Result<(LiveHandle, JoinHandle<()>), SimError> {
    let sim = Simulation::new(cfg.scenario.clone())?;
    let (samples, _) = broadcast::channel(cfg.subscriber_buffer.max(1));
    let handle = LiveHandle {
        queue: Arc::new(CommandQueue {
            inner: Mutex::new(VecDeque::with_capacity(cfg.queue_capacity)),
            capacity: cfg.queue_capacity.max(1),
        }),
        samples: samples.clone(),
        loop_ts: cfg.scenario.ts,
    };
    let queue = Arc::clone(&handle.queue);
    let mut state = LiveLoop {
        scenario: cfg.scenario,
        sim,
        paused: false,
        seq: 0,
    };
    let period = cfg.period;
    let task = tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            if let Some(line) = state.tick(queue.drain()) {
                // No subscribers is not an error.
                let _ = samples.send(line.into());
            }
        }
    });
    Ok((handle, task))
}

//! Virtual PT326 hot-air-blower process trainer.
//!
//! - [`api`]: request and response bodies of the HTTP service.
//! - [`calib`]: cubic voltage/temperature calibration, fitting and inversion.
//! - [`plant`]: piecewise first-order thermal plant with sensor chain.
//! - [`sysid`]: regional first-order identification from step records.
//! - [`control`]: region-switched discrete PI control.
//! - [`metrics`]: rise time, overshoot and settling time.
//! - [`sim`]: scenario engine, open-loop step tests and logs.
//! - [`io`]: text formats for points, records, documents and logs.
//! - [`live`]: message schema of the live trainer stream.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod calib;
pub mod control;
pub mod io;
pub mod live;
pub mod metrics;
pub mod plant;
pub mod sim;
pub mod sysid;

pub use calib::{fit_cubic, CalibrationPoint, CalibrationPoly};
pub use control::{ControllerConfig, PIGains, SwitchedController};
pub use metrics::{compute_metrics, StepMetrics};
pub use plant::{PlantConfig, PlantState};
pub use sim::{run_closed_loop, run_open_loop_step, Scenario, SimLog, Simulation};
pub use sysid::{
    estimate_first_order, identify_regions, FirstOrderModel, RegionalModel, StepRecord,
};

//! Stochastic loadability margins of power systems near a saddle-node
//! bifurcation.
//!
//! The crate covers the load-noise model (vector Ornstein–Uhlenbeck), the
//! slow-fast saddle-node normal form, a differential-algebraic grid model
//! with exponential-recovery loads, a semi-implicit integrator, a
//! reciprocal-condition-number detector and a Monte Carlo driver.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detector;
pub mod error;
pub mod grid;
pub mod integrator;
pub mod io;
pub mod montecarlo;
pub mod normal_form;
pub mod ou;
pub mod rng;

pub use detector::{DetectorConfig, MarginSample};
pub use error::{Error, Result};
pub use grid::{GridModel, GridState, LoadDynParams, NetworkCase, RampSchedule};
pub use integrator::{simulate_trajectory, IntegratorConfig, Termination, TrajectoryRecord};
pub use montecarlo::{run_experiment, ExperimentResult, ExperimentSpec, MarginStatistics};
pub use ou::{OuParams, OuState};
pub use rng::RngStream;

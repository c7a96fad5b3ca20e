//! Power-system model: network data, loads, ramp and reduced dynamics.

pub mod case;
pub mod load;
pub mod model;
pub mod ramp;
pub mod reduced;

pub use case::{Branch, Bus, BusKind, Generator, NetworkCase};
pub use load::{load_consumption, load_state_derivative, LoadDynParams, LoadPoint};
pub use model::{GridModel, GridState, NewtonOptions, QLimit};
pub use ramp::{ramp_lambda, RampSchedule};
pub use reduced::{reduced_state_matrix, reduced_state_matrix_fd};

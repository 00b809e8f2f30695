//! Controller library and desk-scale simulator for a self-synchronized,
//! grid-feeding inverter on a weak grid.
//!
//! The crate models the averaged plant (LCL-less inductive filter, weak grid,
//! DC link with pre-charge path and a lag-limited input power source), a
//! full-order observer that estimates the PCC voltage from the inductor
//! current alone, and the control stack built on top of that estimate:
//!
//! * [`current_loop`] — PI current limiter with modulation-index saturation
//!   and anti-windup, transparent in normal operation;
//! * [`energy_control`] — feedback-linearization controller of DC-link
//!   energy and reactive power via the complex-energy change of variables;
//! * [`droop`] — slow PCC-voltage-magnitude loop producing the reactive
//!   power reference and the maximum-input-power signal;
//! * [`startup`] — variable-resistor start-up controller;
//! * [`supervisor`] — the IDLE/PRECHARGE/STARTUP/RUN state machine wiring
//!   everything together;
//! * [`simkit`] — fixed-step RK4 kernel, event scheduler and trace recorder;
//! * [`scenario`] — scenario files (TOML) and the built-in study cases.
//!
//! No controller ever reads the true PCC voltage: every control law consumes
//! the observer estimate, so the interface itself guarantees
//! self-synchronization.

pub mod current_loop;
pub mod droop;
pub mod energy_control;
mod error;
pub mod observer;
pub mod plant;
pub mod scenario;
pub mod simkit;
pub mod space_vector;
pub mod startup;
pub mod supervisor;
pub mod tuning;

pub use error::Error;
pub use space_vector::{clarke, inverse_clarke, ComplexGain, SpaceVector};

/// Convenience result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

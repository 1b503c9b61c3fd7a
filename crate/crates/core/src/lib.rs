//! Design, evaluation and spectroscopic verification of shaped RF pulses
//! for coupled spin-½ systems.
//!
//! States are traceless deviation density matrices, Hamiltonians are in
//! rad/s (ħ = 1) and every user-facing frequency is in Hz.

pub mod error;
pub mod expr;
pub mod gates;
pub mod grape;
pub mod linalg;
pub mod operator;
pub mod propagation;
pub mod pulse_file;
pub mod sensitivity;
pub mod spectro;
pub mod spin;

pub use error::{Error, Result};
pub use operator::{OperatorMatrix, Role};
pub use propagation::ControlPulse;
pub use spin::SpinSystem;

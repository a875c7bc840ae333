//! Two-level control: 50 Hz box-constrained MPC over joint increments and
//! 1 kHz PD torque control, plus primitive planning.

pub mod mpc;
pub mod pid;
pub mod plan;
pub mod qp;
pub mod track;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid problem: {0}")]
    Domain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("planning failed: {0}")]
    Planning(String),
    #[error("simulation fault: {0}")]
    Sim(String),
}

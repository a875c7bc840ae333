//! Visual estimators: food-location selection and mouth-pose estimation.

pub mod food;
pub mod mouth;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("no food inside the scooping region")]
    NoFood,
    #[error("candidate sites must be finite and inside the mask")]
    InvalidSites,
    #[error("bowl geometry is invalid")]
    InvalidBowl,
    #[error("face registration failed: {0}")]
    Registration(String),
    #[error("only {0} landmarks survived filtering")]
    TooFewLandmarks(usize),
    #[error("degenerate face geometry: {0}")]
    Degenerate(&'static str),
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
}

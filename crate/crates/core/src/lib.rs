//! Jump unraveling of time-local quantum master equations with martingale
//! weighting, doubled-space channel embedding and initial-state recovery.

pub mod config;
pub mod embedding;
pub mod equation;
pub mod error;
pub mod linalg;
pub mod output;
pub mod presets;
pub mod recovery;
pub mod run;
pub mod unraveling;

pub use equation::{CanonicalMasterEquation, PairedEquations, TimeOperator, TimeRate};
pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, DensityMatrix, StateVector, Superoperator, Tolerances, C64};

//! Rotationally symmetric translating solitons of higher-order mean curvature
//! flows in doubly-warped products ℙ ×_χ ℝ.

pub mod ambient;
pub mod angle;
pub mod cli;
pub mod asym;
pub mod curvature;
pub mod error;
pub mod families;
pub mod integrate;
pub mod oracle;
pub mod phase;

pub use error::{Result, SolvError};

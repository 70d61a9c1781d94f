//! Grid laboratory for capacities on complex Sobolev spaces.

pub mod calculus;
pub mod capacity;
pub mod config;
pub mod wstar;
pub mod envelope;
pub mod error;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod inequalities;
pub mod reduce;
pub mod report;
pub mod svg;

pub use error::{CapError, Result};

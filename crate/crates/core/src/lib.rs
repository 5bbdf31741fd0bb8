//! Optimal experiment design and strategic data-contribution games.

pub mod analysis;
mod ascent;
mod concave;
pub mod criteria;
pub mod design;
pub mod error;
pub mod game;
pub mod instances;
pub mod linalg;
pub mod line;
pub mod mechanism;
pub mod solver;

pub use criteria::{CriterionKind, CriterionValue};
pub use design::{AgentProfile, DesignMeasure, DesignSpace, InfoMatrix};
pub use error::{Error, Result};

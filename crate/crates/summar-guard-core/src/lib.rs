//! Analytic tables with aggregable properties, propagated through queries so
//! that incorrect aggregations can be rejected before they run.

pub mod dsl;
pub mod engine;
pub mod error;
pub mod graph;
pub mod model;
pub mod propagate;
pub mod property;
pub mod session;
pub mod summarizability;
pub mod value;

pub use error::{Error, Result};

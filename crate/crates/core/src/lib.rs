pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod nuisance;
pub mod report;
pub mod simulate;
pub mod tabular;

pub use error::{Error, Result};

pub mod amplifier;
pub mod analysis;
pub mod constants;
pub mod error;
pub mod exec;
pub mod exotic_field;
pub mod limits;
pub mod source_model;
pub mod timeseries;

pub use constants::PhysicalConstants;
pub use error::{PossError, Result};
pub use exec::Execution;

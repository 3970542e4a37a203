pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;

pub use error::{Error, Result};
pub mod training;

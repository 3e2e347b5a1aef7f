pub mod analysis;
pub mod autodiff;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod samplers;
pub mod shifts;
pub mod tensor;
pub mod uq_methods;

pub use error::{Error, Result};

pub mod control;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod neural;
pub mod predictor;
pub mod rng;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};

pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod network;
pub mod params;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};

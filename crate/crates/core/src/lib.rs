pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub use numcore::{Rng, Tape, Tensor, Var};
pub mod layers;
pub mod params;
pub mod recurrent;
pub mod losses;
pub mod models;
pub mod trainer;
pub mod forecast;
pub mod metrics;
pub mod fileio;
pub mod data;
pub mod experiment;

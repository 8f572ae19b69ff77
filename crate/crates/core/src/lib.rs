//! Markovian binary tree population models fitted to demographic data.
pub mod cli;
pub mod demography;
pub mod error;
pub mod estimation;
pub mod io;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod selection;
pub mod simulation;
pub mod uncertainty;

pub use error::{Error, Result};

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod nn;
pub mod ocp;
pub mod planner;
pub mod prior;

pub use error::{Error, Result};

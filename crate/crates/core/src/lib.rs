pub mod config;
pub mod consistency;
pub mod error;
pub mod model;
pub mod mpc;
pub mod neural;
pub mod testbed;
pub mod training;

pub use error::{Error, Result};

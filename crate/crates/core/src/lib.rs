pub mod analytic;
pub mod channel;
pub mod config;
pub mod detection;
pub mod error;
pub mod geometry;
pub mod quadrature;
pub mod sim;
pub mod special;
pub mod stats;

pub use error::{Error, Result};

pub mod camera;
pub mod dataset;
pub mod ekf;
pub mod entropy;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod sim;
pub mod tracker;

pub use error::{Result, VioError};

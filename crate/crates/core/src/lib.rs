//! Pose algebra, maze simulation, the odometry / graph-optimizer networks
//! and their training pipeline.

mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod mazeworld;
pub mod nets;
pub mod training;

pub use error::{Error, Result};

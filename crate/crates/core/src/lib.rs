pub mod augment;
pub mod autodiff;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;

pub use error::{Result, SeldError};

//! Speech emotion recognition pipeline built around the EmoFormer model.

pub mod audio;
pub mod augment;
pub mod dataset;
pub mod dsp;
pub mod emof;
pub mod error;
pub mod experiment;
pub mod features;
pub mod matrix;
pub mod metrics;
pub mod mfcc;
pub mod model;
pub mod synthetic;
pub mod training;
pub mod xvector;

pub use error::{Error, Result};

//! Small tensor engine with tape-based reverse-mode differentiation.
//!
//! Values are `f64` throughout. Every forward op validates shapes before
//! touching data and rejects non-finite results.

pub mod attention;
pub mod conv;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use attention::{AttentionOutput, AttentionParams};
pub use conv::{ConvGeometry, Padding};
pub use dropout::DropoutKey;
pub use error::{Result, TensorError};
pub use norm::{BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

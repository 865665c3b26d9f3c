//! Shuffled group whitening fused with multi-positive contrastive learning,
//! at a scale where every property can be checked numerically.

pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod whitening;

pub use error::{Error, Result};
pub use tensor::Matrix;

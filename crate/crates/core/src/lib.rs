//! Dense skeleton representation learning: a two-stream spatio-temporal
//! encoder pretrained with multi-grained feature decorrelation, plus the
//! downstream evaluation harness.

pub mod autograd;
pub mod checkpoint;
pub mod downstream;
pub mod dste;
pub mod error;
pub mod kinks;
pub mod mgfd;
pub mod parallel;
pub mod params;
pub mod pretrain;
pub mod seed;
pub mod skelio;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Mat;

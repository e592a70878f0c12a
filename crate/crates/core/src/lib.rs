//! Multi-scale wavelet transformer (MSWT) for face forgery detection.
//!
//! The crate is self-contained: a small `f64` reverse-mode autograd engine
//! ([`autograd`]), neural layers and the AdamW recipe ([`nn`]), the Haar
//! wavelet pyramid ([`wavelet`]), the frequency/spatial fusion block
//! ([`fsf`]), the staged network ([`model`]), a synthetic forgery corpus
//! ([`data`]), and metrics, EMD analysis and training loops ([`analysis`],
//! [`harness`]).

pub mod analysis;
pub mod autograd;
pub mod data;
pub mod error;
pub mod fsf;
pub mod gradcheck;
pub mod harness;
pub mod model;
pub mod nn;
pub(crate) mod kernels;
pub mod tensor;
pub mod wavelet;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;

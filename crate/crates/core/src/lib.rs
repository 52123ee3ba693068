//! Saliency maps for small convolutional networks, with gradual
//! extrapolation of coarse maps back to input resolution.
//!
//! The crate contains a minimal CNN runtime with an activation tape
//! ([`autonet`]), a seeded synthetic dataset and SGD trainer ([`trainer`]),
//! Grad-CAM and excitation backprop ([`attribution`]), the extrapolation
//! itself ([`gradual`]), evaluation metrics ([`fia`]) and a CLI ([`cli`]).

pub mod attribution;
pub mod autonet;
pub mod cli;
pub mod csv;
pub mod error;
pub mod fia;
pub mod fsutil;
pub mod gradual;
pub mod netpbm;
pub mod pipeline;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

//! Slice interpolation for anisotropic 3D medical volumes.
//!
//! The network synthesizes `R - 1` axial slices between every pair of
//! adjacent input slices, so `S` input slices become `(S - 1)·R + 1`.

pub mod analysis;
pub mod error;
pub mod eval;
pub mod model;
pub mod nnops;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod volformat;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};

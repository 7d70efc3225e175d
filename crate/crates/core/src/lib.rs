//! Transverse contraction of space-time tensor networks for quench dynamics.

extern crate blas_src;

pub mod contraction;
pub mod decomp;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod models;
pub mod mps;
pub mod oracle;
pub mod tmpo;
pub mod truncation;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

//! Filters as state-transition operators `u = S f`, their source and drain
//! echoes, and randomized low-rank compression of the full echo set.

pub mod cli;
pub mod compression;
pub mod diffusion;
pub mod display;
pub mod echo;
pub mod error;
pub mod filters;
pub mod image;
pub mod inpainting;
pub mod kernels;
pub mod linalg;
pub mod opticflow;
pub mod osmosis;
pub mod pgm;
pub mod service;
pub mod stencil;
pub mod test_images;

pub use error::{Error, Result};
pub use image::{FlowField, Image, Mask};
pub use linalg::LinearOperator;

//! Mask-guided video subject swapping at desk scale.
//!
//! The crate is organised around the data flow of a swap:
//!
//! - [`video`], [`pose`], [`tensor_io`], [`frames`]: domain types and persistence.
//! - [`mask_augment`]: adaptive grid, bounding-box and extra-shape mask augmentation.
//! - [`codec`]: a lossless pixel-shuffle stand-in for a 3D video VAE
//!   (temporal ×4 with a standalone first frame, spatial ×8).
//! - [`fusion`]: assembly of the fused model input, attention mask and loss mask.
//! - [`denoiser`]: a small diffusion transformer with hand-written backprop,
//!   flow-matching objective, subject-reweighted loss and trainer.
//! - [`inference`]: tunnel planning, segment scheduling, Euler sampling and compositing.
//! - [`data`]: synthetic scene generation, quality filtering and category balancing.
//! - [`eval`]: background-preservation and reference-appearance proxy metrics.

pub mod codec;
pub mod data;
pub mod denoiser;
pub mod error;
pub mod eval;
pub mod frames;
pub mod fusion;
pub mod inference;
pub mod mask_augment;
pub mod pose;
pub mod raster;
pub mod resample;
pub mod tensor_io;
pub mod video;

pub use error::{Error, Result};
pub use video::{BBox, MaskSequence, ReferenceImage, VideoClip};

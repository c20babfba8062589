//! Sparse-detector photoacoustic tomography toolkit.
//!
//! * [`tensor`]: reverse-mode differentiation over 4-D activations.
//! * [`phantoms`]: ground-truth initial-pressure generators and augmentation.
//! * [`acoustics`]: k-space pseudospectral forward model and time reversal.
//! * [`networks`]: UNet and fully dense UNet builders.
//! * [`metrics`]: PSNR, SSIM and report aggregation.
//! * [`pipeline`]: datasets, training, fine-tuning and experiments.

pub mod acoustics;
pub mod error;
pub mod image;
pub mod metrics;
pub mod networks;
pub mod phantoms;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image2D;
pub use tensor::{Element, Mode, Tensor};

//! Two-stage non-parallel voice conversion: an autoencoder whose latent code is
//! adversarially stripped of speaker identity, plus a residual GAN that
//! sharpens the decoder output. Includes the spectral front end, training
//! schedule, conversion paths and objective evaluation.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod conversion;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod fingerprint;
pub mod kernels;
pub mod losses;
pub mod model;
pub mod nn;
pub mod real;
pub mod tensor;
pub mod training;
pub mod wav;

pub use error::{Error, Result};

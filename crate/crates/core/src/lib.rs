//! Attribute-blind conditional variational autoencoder.
//!
//! Images are encoded to a latent Gaussian without ever seeing their
//! protected attributes (age, gender, origin). The attributes are appended to
//! the sampled latent code right before decoding, so the decoder carries them
//! and the latent has no reason to. A concealed record is just that latent
//! code; it can be revealed under any attribute vector. The [`eval`] module
//! audits the claim with probe classifiers.

mod binio;
pub mod cli;
pub mod conceal;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{NumericMode, Real, Tensor};

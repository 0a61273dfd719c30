//! The blind conditional VAE: architecture, sampling, loss, training and
//! checkpoints.

mod attributes;
mod checkpoint;
mod cvae;
mod train;

pub use attributes::{AttributeVector, Gender, Origin, ATTR_LEN, MAX_AGE, ORIGIN_CLASSES};
pub use checkpoint::{
    checkpoint_bytes, fingerprint, load_checkpoint, load_checkpoint_expecting, model_from_bytes, save_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use cvae::{
    architecture, kl_divergence, loss, reparameterize, CvaeConfig, CvaeModel, ForwardVars, LossVars, Variant,
    FORMAT_VERSION, LEAKY_SLOPE, SUPPORTED_SIDES,
};
pub use train::{batch_tensors, train, write_loss_csv, EpochStats};

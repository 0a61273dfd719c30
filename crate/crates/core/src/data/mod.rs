//! Dataset ingestion, the synthetic glyph dataset, image codecs and the
//! train/test split.

mod codec;
mod dataset;
mod labels;
pub mod synth;

pub use codec::{image_read, image_write, resize_square};
pub use dataset::{
    load_dataset, load_dataset_with_report, split_counts, write_manifest, DatasetSplit, IngestReport, LabeledImage,
    SkippedFile,
};
pub use labels::{label_filename, parse_label_filename};
pub use synth::{synth_generate, write_dataset_dir};

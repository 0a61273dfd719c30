use std::fs;
use std::path::{Path, PathBuf};

use super::codec::{image_read, resize_square};
use super::labels::parse_label_filename;
use crate::error::{Error, Result};
use crate::model::AttributeVector;
use crate::rng::Pcg32;
use crate::tensor::Tensor;

/// One image with its protected attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// `[3×S×S]` pixels in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub attrs: AttributeVector,
    pub source_id: String,
}

/// Disjoint train/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Sorts `items` by source id, shuffles them with `seed` and puts the
    /// first 85% (rounded half up) in the training set.
    pub fn from_items(mut items: Vec<LabeledImage>, seed: u64) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("cannot split an empty dataset".into()));
        }
        items.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        if items.windows(2).any(|w| w[0].source_id == w[1].source_id) {
            return Err(Error::Config("duplicate source ids in dataset".into()));
        }
        Pcg32::with_stream(seed, 0x5350_4c49).shuffle(&mut items);
        let (n_train, _) = split_counts(items.len());
        let test = items.split_off(n_train);
        Ok(Self {
            train: items,
            test,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.test.is_empty()
    }

    pub fn image_side(&self) -> Option<usize> {
        self.train.iter().chain(&self.test).next().map(|s| s.pixels.shape()[1])
    }
}

/// `(train, test)` sizes for `n` items: train is `round(0.85·n)` with ties
/// going to train.
pub fn split_counts(n: usize) -> (usize, usize) {
    let train = (85 * n + 50) / 100;
    (train, n - train)
}

/// A file the loader could not use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub loaded: usize,
    pub skipped: Vec<SkippedFile>,
}

/// Loads a directory of `<age>_<gender>_<race>_*.{png,jpg,ppm}` files,
/// resizes them to `image_side` and splits 85/15.
pub fn load_dataset(dir: impl AsRef<Path>, image_side: usize, split_seed: u64) -> Result<DatasetSplit> {
    load_dataset_with_report(dir, image_side, split_seed).map(|(split, _)| split)
}

/// [`load_dataset`] that also returns which files were skipped and why.
/// Unparseable or undecodable files are logged and skipped.
pub fn load_dataset_with_report(
    dir: impl AsRef<Path>,
    image_side: usize,
    split_seed: u64,
) -> Result<(DatasetSplit, IngestReport)> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();

    let mut report = IngestReport::default();
    let mut items = Vec::new();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let loaded = parse_label_filename(&name).and_then(|attrs| {
            let raw = image_read(&path)?;
            let pixels = resize_square(&raw, image_side)?;
            Ok(LabeledImage {
                pixels,
                attrs,
                source_id: name.clone(),
            })
        });
        match loaded {
            Ok(item) => items.push(item),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push(SkippedFile {
                    path,
                    reason: e.to_string(),
                });
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Config(format!("no usable labeled images in {}", dir.display())));
    }
    report.loaded = items.len();
    Ok((DatasetSplit::from_items(items, split_seed)?, report))
}

/// Writes `source_id,age,gender,race,split` rows for every sample.
pub fn write_manifest(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Codec {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["source_id", "age", "gender", "race", "split"]).map_err(csv_err)?;
    let rows = split.train.iter().map(|s| (s, "train")).chain(split.test.iter().map(|s| (s, "test")));
    for (s, part) in rows {
        let gender = s.attrs.gender_label().map_or("".into(), |g| g.index().to_string());
        let race = s.attrs.origin_label().map_or("".into(), |r| r.to_string());
        let age = format!("{}", s.attrs.age_years().round());
        w.write_record([s.source_id.as_str(), &age, &gender, &race, part]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

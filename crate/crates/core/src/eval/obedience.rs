//! Whether revealed images show the attributes they were revealed with,
//! judged by probes trained on original images.

use std::fmt;
use std::io::Write;
use std::path::Path;

use super::leakage::{audit_disjoint, labels, latent_codes};
use super::probe::{mae, rmse, train_probe, ProbeModel, ProbeOptions, ProbeTask};
use crate::data::{DatasetSplit, LabeledImage};
use crate::error::{Error, Result};
use crate::model::{AttributeVector, CvaeModel, Gender, Origin, ATTR_LEN};
use crate::tensor::{Real, Tensor};

/// Target ages of the standard report, in years.
pub const DEFAULT_TARGET_AGES: [f64; 5] = [1.0, 20.0, 40.0, 60.0, 80.0];

const DECODE_CHUNK: usize = 64;

/// Flattens an image into probe features.
pub fn image_features<T: Real>(image: &Tensor<T>) -> Vec<f64> {
    image.data().iter().map(|v| v.as_f64()).collect()
}

/// Gender and age probes fitted to original training images.
#[derive(Debug, Clone)]
pub struct ImageProbes {
    pub gender: ProbeModel,
    pub age: ProbeModel,
}

impl ImageProbes {
    pub fn train(train: &[LabeledImage], seed: u64) -> Result<Self> {
        let x: Vec<Vec<f64>> = train.iter().map(|s| image_features(&s.pixels)).collect();
        let gender = train_probe(&x, &labels(ProbeTask::Gender, train)?, ProbeTask::Gender, &ProbeOptions::mlp(64), seed)?;
        let age = train_probe(&x, &labels(ProbeTask::Age, train)?, ProbeTask::Age, &ProbeOptions::mlp(64), seed ^ 0x616765)?;
        Ok(Self { gender, age })
    }
}

/// One row of the per-target table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObedienceRow {
    pub target_age: f64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObedienceReport {
    /// One row per target age, over both revealed genders.
    pub rows: Vec<ObedienceRow>,
    /// Mean of the per-target RMSE and MAE columns.
    pub average_rmse: f64,
    pub average_mae: f64,
    /// Fraction of reveals the image gender probe assigns to the requested
    /// gender.
    pub gender_flip_rate: f64,
    /// Age-probe RMSE on reveals at each record's own attributes.
    pub own_attribute_rmse: f64,
    /// Age-probe RMSE on the original test images.
    pub probe_age_rmse: f64,
    /// Gender-probe accuracy on the original test images.
    pub probe_gender_accuracy: f64,
    pub n_test: usize,
    pub seed: u64,
}

impl ObedienceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target_age,rmse,mae\n");
        for r in &self.rows {
            out += &format!("{},{:.6},{:.6}\n", r.target_age, r.rmse, r.mae);
        }
        out += &format!("average,{:.6},{:.6}\n", self.average_rmse, self.average_mae);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ObedienceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8} {:>8}", "Target age", "RMSE", "MAE")?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>8.2} {:>8.2}", r.target_age, r.rmse, r.mae)?;
        }
        writeln!(f, "{:<12} {:>8.2} {:>8.2}", "Average", self.average_rmse, self.average_mae)?;
        writeln!(f, "gender flip rate        {:.4}", self.gender_flip_rate)?;
        writeln!(f, "own-attribute age RMSE  {:.2}", self.own_attribute_rmse)?;
        writeln!(
            f,
            "probe on originals      age RMSE {:.2}, gender accuracy {:.4} ({} test images, seed {})",
            self.probe_age_rmse, self.probe_gender_accuracy, self.n_test, self.seed
        )
    }
}

/// Decodes every code in `codes` with the attribute vector `attrs_of(i)`.
pub(crate) fn reveal_all<T: Real>(
    model: &CvaeModel<T>,
    codes: &[Vec<f64>],
    attrs_of: &dyn Fn(usize) -> Result<AttributeVector>,
) -> Result<Vec<Vec<f64>>> {
    let d = model.latent_dim();
    let mut out = Vec::with_capacity(codes.len());
    let per_image = 3 * model.image_side() * model.image_side();
    for (c, chunk) in codes.chunks(DECODE_CHUNK).enumerate() {
        let z: Vec<f64> = chunk.iter().flatten().copied().collect();
        let mut attrs = Vec::with_capacity(chunk.len() * ATTR_LEN);
        for i in 0..chunk.len() {
            attrs.extend(attrs_of(c * DECODE_CHUNK + i)?.to_array());
        }
        let images = model.decode_batch(
            &Tensor::from_f64(vec![chunk.len(), d], &z)?,
            &Tensor::from_f64(vec![chunk.len(), ATTR_LEN], &attrs)?,
        )?;
        out.extend(images.data().chunks(per_image).map(|px| px.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

/// Obedience report with image probes trained here on the training split.
pub fn obedience_report<T: Real>(
    model: &CvaeModel<T>,
    data: &DatasetSplit,
    target_ages: &[f64],
    seed: u64,
) -> Result<ObedienceReport> {
    audit_disjoint(data)?;
    let probes = ImageProbes::train(&data.train, seed)?;
    obedience_report_with(model, &probes, data, target_ages, seed)
}

/// Reveals every test record at each target age for both genders (keeping
/// its own origin) and scores the reveals with `probes`.
pub fn obedience_report_with<T: Real>(
    model: &CvaeModel<T>,
    probes: &ImageProbes,
    data: &DatasetSplit,
    target_ages: &[f64],
    seed: u64,
) -> Result<ObedienceReport> {
    if target_ages.is_empty() {
        return Err(Error::Config("obedience needs at least one target age".into()));
    }
    if data.test.is_empty() {
        return Err(Error::Config("obedience needs a non-empty test split".into()));
    }
    let test = &data.test;
    let codes = latent_codes(model, test)?;
    let origins: Vec<Origin> = test
        .iter()
        .map(|s| s.attrs.origin_label().map(Origin::Class).unwrap_or(Origin::Neutral))
        .collect();

    let mut rows = Vec::with_capacity(target_ages.len());
    let (mut hits, mut reveals) = (0usize, 0usize);
    for &age in target_ages {
        let mut predicted = Vec::new();
        for gender in [Gender::Male, Gender::Female] {
            let images = reveal_all(model, &codes, &|i| AttributeVector::target(age, gender.code(), origins[i]))?;
            predicted.extend(probes.age.predict(&images)?);
            let g = probes.gender.predict(&images)?;
            hits += g.iter().filter(|&&p| p == gender.index() as f64).count();
            reveals += g.len();
        }
        let targets = vec![age; predicted.len()];
        rows.push(ObedienceRow {
            target_age: age,
            rmse: rmse(&predicted, &targets),
            mae: mae(&predicted, &targets),
        });
    }

    let own = reveal_all(model, &codes, &|i| Ok(test[i].attrs))?;
    let true_ages = labels(ProbeTask::Age, test)?;
    let own_attribute_rmse = rmse(&probes.age.predict(&own)?, &true_ages);
    let originals: Vec<Vec<f64>> = test.iter().map(|s| image_features(&s.pixels)).collect();
    let probe_age_rmse = probes.age.score(&originals, &true_ages)?;
    let probe_gender_accuracy = probes.gender.score(&originals, &labels(ProbeTask::Gender, test)?)?;

    let k = rows.len() as f64;
    Ok(ObedienceReport {
        average_rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / k,
        average_mae: rows.iter().map(|r| r.mae).sum::<f64>() / k,
        rows,
        gender_flip_rate: hits as f64 / reveals as f64,
        own_attribute_rmse,
        probe_age_rmse,
        probe_gender_accuracy,
        n_test: test.len(),
        seed,
    })
}

/// Pixel RMSE of reveal-at-own-attributes against the originals, next to
/// the RMSE of always predicting the mean training image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    pub rmse: f64,
    pub mean_image_rmse: f64,
}

pub fn reconstruction_report<T: Real>(model: &CvaeModel<T>, data: &DatasetSplit) -> Result<ReconstructionReport> {
    if data.train.is_empty() || data.test.is_empty() {
        return Err(Error::Config("reconstruction needs non-empty train and test splits".into()));
    }
    let codes = latent_codes(model, &data.test)?;
    let reveals = reveal_all(model, &codes, &|i| Ok(data.test[i].attrs))?;
    let n_px = data.train[0].pixels.len();
    let mut mean = vec![0.0f64; n_px];
    for s in &data.train {
        for (m, &v) in mean.iter_mut().zip(s.pixels.data()) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= data.train.len() as f64);

    let (mut se_model, mut se_mean) = (0.0f64, 0.0f64);
    for (s, r) in data.test.iter().zip(&reveals) {
        for ((&x, &y), &m) in s.pixels.data().iter().zip(r).zip(&mean) {
            let x = f64::from(x);
            se_model += (x - y) * (x - y);
            se_mean += (x - m) * (x - m);
        }
    }
    let count = (data.test.len() * n_px) as f64;
    Ok(ReconstructionReport {
        rmse: (se_model / count).sqrt(),
        mean_image_rmse: (se_mean / count).sqrt(),
    })
}

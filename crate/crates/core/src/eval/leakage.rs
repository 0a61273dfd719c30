//! How much attribute information survives in concealed latent codes.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use super::probe::{baseline_score, train_probe, ProbeOptions, ProbeTask};
use crate::conceal::sample_noise;
use crate::data::{DatasetSplit, LabeledImage};
use crate::error::{Error, Result};
use crate::model::{batch_tensors, reparameterize, train, CvaeModel, Variant};
use crate::tensor::{Graph, Real, Tensor};

const ENCODE_CHUNK: usize = 64;

/// Held-out scores of the linear and one-hidden-layer probes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePair {
    pub linear: f64,
    pub mlp: f64,
}

impl ProbePair {
    /// The more revealing of the two: higher accuracy, or lower age RMSE.
    pub fn best(&self, task: ProbeTask) -> f64 {
        if task.is_classification() {
            self.linear.max(self.mlp)
        } else {
            self.linear.min(self.mlp)
        }
    }
}

/// Probe results for one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLeakage {
    pub task: ProbeTask,
    /// Probes on sampled codes, `z = mu + sigma * eps`.
    pub sampled: ProbePair,
    /// Probes on posterior means.
    pub mean: ProbePair,
    /// Score of the label-blind predictor (majority class or mean age).
    pub baseline: f64,
    /// Probes on the plain autoencoder's sampled codes, if measured.
    pub plain_ae: Option<ProbePair>,
    /// Probes on the plain autoencoder's posterior means, if measured.
    pub plain_ae_mean: Option<ProbePair>,
}

impl AttributeLeakage {
    /// Headline leakage: the best probe on sampled codes.
    pub fn probe(&self) -> f64 {
        self.sampled.best(self.task)
    }

    pub fn mean_probe(&self) -> f64 {
        self.mean.best(self.task)
    }

    pub fn plain_probe(&self) -> Option<f64> {
        self.plain_ae.map(|p| p.best(self.task))
    }

    pub fn plain_mean_probe(&self) -> Option<f64> {
        self.plain_ae_mean.map(|p| p.best(self.task))
    }
}

/// Leakage of every protected attribute from a model's latent codes.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub attributes: Vec<AttributeLeakage>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl LeakageReport {
    pub fn get(&self, task: ProbeTask) -> &AttributeLeakage {
        self.attributes.iter().find(|a| a.task == task).expect("every task is reported")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "attribute,metric,sampled_linear,sampled_mlp,sampled,mean_linear,mean_mlp,mean,baseline,plain_ae,plain_ae_mean\n",
        );
        for a in &self.attributes {
            let plain = a.plain_probe().map(|v| format!("{v:.6}")).unwrap_or_default();
            let plain_mean = a.plain_mean_probe().map(|v| format!("{v:.6}")).unwrap_or_default();
            out += &format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
                a.task,
                a.task.metric(),
                a.sampled.linear,
                a.sampled.mlp,
                a.probe(),
                a.mean.linear,
                a.mean.mlp,
                a.mean_probe(),
                a.baseline,
                plain,
                plain_mean
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Latent leakage ({} train / {} test, seed {}); best of linear and MLP probes",
            self.n_train, self.n_test, self.seed
        )?;
        writeln!(
            f,
            "{:<8} {:<9} {:>9} {:>9} {:>9} {:>13} {:>13}",
            "attr", "metric", "sampled", "mean", "baseline", "plain sampled", "plain mean"
        )?;
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for a in &self.attributes {
            writeln!(
                f,
                "{:<8} {:<9} {:>9.4} {:>9.4} {:>9.4} {:>13} {:>13}",
                a.task.name(),
                a.task.metric(),
                a.probe(),
                a.mean_probe(),
                a.baseline,
                cell(a.plain_probe()),
                cell(a.plain_mean_probe())
            )?;
        }
        Ok(())
    }
}

/// Fails if any source id appears in both halves of the split.
pub fn audit_disjoint(data: &DatasetSplit) -> Result<()> {
    let train: BTreeSet<&str> = data.train.iter().map(|s| s.source_id.as_str()).collect();
    if let Some(dup) = data.test.iter().find(|s| train.contains(s.source_id.as_str())) {
        return Err(Error::Contract(format!("sample {} is in both train and test", dup.source_id)));
    }
    Ok(())
}

/// Mean-mode latent codes, rounded through `f32` exactly as stored in a
/// concealed record.
pub fn latent_codes<T: Real>(model: &CvaeModel<T>, samples: &[LabeledImage]) -> Result<Vec<Vec<f64>>> {
    encode_codes(model, samples, None)
}

/// Sampled latent codes. Sample `i` uses the noise of
/// `ConcealMode::Sample(seed + i)`, so each code equals the record
/// `conceal` would produce for that image.
pub fn sampled_latent_codes<T: Real>(
    model: &CvaeModel<T>,
    samples: &[LabeledImage],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    encode_codes(model, samples, Some(seed))
}

fn encode_codes<T: Real>(model: &CvaeModel<T>, samples: &[LabeledImage], seed: Option<u64>) -> Result<Vec<Vec<f64>>> {
    let d = model.latent_dim();
    let mut codes = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(ENCODE_CHUNK) {
        let items: Vec<&LabeledImage> = chunk.iter().collect();
        let (images, _) = batch_tensors::<T>(&items)?;
        let (mu, logvar) = model.encode_batch(&images)?;
        for (row, lv) in mu.data().chunks(d).zip(logvar.data().chunks(d)) {
            let code = match seed {
                None => row.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
                Some(base) => {
                    let mut noise = sample_noise(base.wrapping_add(codes.len() as u64));
                    let mut g = Graph::new();
                    let m = g.constant(Tensor::new(vec![d], row.to_vec())?);
                    let l = g.constant(Tensor::new(vec![d], lv.to_vec())?);
                    let z = reparameterize(&mut g, m, l, &mut noise)?;
                    g.value(z).to_f64_vec()
                }
            };
            codes.push(code.into_iter().map(|v| f64::from(v as f32)).collect());
        }
    }
    Ok(codes)
}

pub(crate) fn labels(task: ProbeTask, samples: &[LabeledImage]) -> Result<Vec<f64>> {
    samples.iter().map(|s| task.label(&s.attrs)).collect()
}

/// Held-out linear and MLP probe scores for one representation.
fn probe_scores(
    train_x: &[Vec<f64>],
    test_x: &[Vec<f64>],
    data: &DatasetSplit,
    task: ProbeTask,
    seed: u64,
) -> Result<ProbePair> {
    let train_y = labels(task, &data.train)?;
    let test_y = labels(task, &data.test)?;
    let linear = train_probe(train_x, &train_y, task, &ProbeOptions::linear(), seed)?;
    let mlp = train_probe(train_x, &train_y, task, &ProbeOptions::mlp(32), seed ^ 0x6d6c70)?;
    Ok(ProbePair {
        linear: linear.score(test_x, &test_y)?,
        mlp: mlp.score(test_x, &test_y)?,
    })
}

struct Codes {
    train: Vec<Vec<f64>>,
    test: Vec<Vec<f64>>,
}

impl Codes {
    fn mean<T: Real>(model: &CvaeModel<T>, data: &DatasetSplit) -> Result<Self> {
        Ok(Self { train: latent_codes(model, &data.train)?, test: latent_codes(model, &data.test)? })
    }

    /// Train and test draws use disjoint noise seeds.
    fn sampled<T: Real>(model: &CvaeModel<T>, data: &DatasetSplit, seed: u64) -> Result<Self> {
        let test_seed = seed.wrapping_add(data.train.len() as u64);
        Ok(Self {
            train: sampled_latent_codes(model, &data.train, seed)?,
            test: sampled_latent_codes(model, &data.test, test_seed)?,
        })
    }
}

/// Probes `model`'s latents and, when given, a plain autoencoder's sampled
/// latents on the same split. Probes see only training-portion codes and
/// are scored on test-portion codes.
pub fn leakage_report_against<T: Real>(
    model: &CvaeModel<T>,
    plain: Option<&CvaeModel<T>>,
    data: &DatasetSplit,
    seed: u64,
) -> Result<LeakageReport> {
    audit_disjoint(data)?;
    if data.test.is_empty() {
        return Err(Error::Config("leakage needs a non-empty test split".into()));
    }
    let mean = Codes::mean(model, data)?;
    let sampled = Codes::sampled(model, data, seed)?;
    let plain = match plain {
        Some(p) => Some((Codes::sampled(p, data, seed)?, Codes::mean(p, data)?)),
        None => None,
    };

    let mut attributes = Vec::new();
    for task in ProbeTask::ALL {
        let (plain_ae, plain_ae_mean) = match &plain {
            Some((sampled, mean)) => (
                Some(probe_scores(&sampled.train, &sampled.test, data, task, seed)?),
                Some(probe_scores(&mean.train, &mean.test, data, task, seed)?),
            ),
            None => (None, None),
        };
        attributes.push(AttributeLeakage {
            task,
            sampled: probe_scores(&sampled.train, &sampled.test, data, task, seed)?,
            mean: probe_scores(&mean.train, &mean.test, data, task, seed)?,
            baseline: baseline_score(task, &labels(task, &data.train)?, &labels(task, &data.test)?),
            plain_ae,
            plain_ae_mean,
        });
    }
    Ok(LeakageReport {
        attributes,
        n_train: data.train.len(),
        n_test: data.test.len(),
        seed,
    })
}

/// Trains the architecture-matched plain autoencoder with `model`'s
/// configuration on the training split.
pub fn train_plain_baseline<T: Real>(model: &CvaeModel<T>, data: &DatasetSplit) -> Result<CvaeModel<T>> {
    let mut plain = CvaeModel::new(model.config.clone(), Variant::Plain)?;
    train(&mut plain, &data.train, &mut |s| {
        log::info!("plain baseline epoch {}: recon {:.3} kl {:.3}", s.epoch, s.recon, s.kl)
    })?;
    Ok(plain)
}

/// Full leakage report, training the plain baseline internally.
pub fn leakage_report<T: Real>(model: &CvaeModel<T>, data: &DatasetSplit, seed: u64) -> Result<LeakageReport> {
    let plain = train_plain_baseline(model, data)?;
    leakage_report_against(model, Some(&plain), data, seed)
}

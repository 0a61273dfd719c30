//! Small supervised probes used to measure what a representation encodes.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{AttributeVector, MAX_AGE, ORIGIN_CLASSES};
use crate::nn::{forward_stack, init_params, Activation, Adam, LayerKind, LayerSpec, ParamStore};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Tensor};

/// Probe architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeKind {
    Linear,
    /// One ReLU hidden layer of the given width.
    Mlp(usize),
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProbeKind::Linear => f.write_str("linear"),
            ProbeKind::Mlp(h) => write!(f, "mlp-{h}"),
        }
    }
}

/// What the probe predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeTask {
    /// Binary gender classification.
    Gender,
    /// Five-way origin classification.
    Race,
    /// Age regression, in years.
    Age,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 3] = [ProbeTask::Gender, ProbeTask::Race, ProbeTask::Age];

    pub fn name(self) -> &'static str {
        match self {
            ProbeTask::Gender => "gender",
            ProbeTask::Race => "race",
            ProbeTask::Age => "age",
        }
    }

    /// Number of classes, or `None` for regression.
    pub fn classes(self) -> Option<usize> {
        match self {
            ProbeTask::Gender => Some(2),
            ProbeTask::Race => Some(ORIGIN_CLASSES),
            ProbeTask::Age => None,
        }
    }

    pub fn is_classification(self) -> bool {
        self.classes().is_some()
    }

    /// Name of the score this task reports.
    pub fn metric(self) -> &'static str {
        if self.is_classification() {
            "accuracy"
        } else {
            "rmse"
        }
    }

    /// The ground-truth label of a sample: class index, or age in years.
    /// Fails for attribute vectors that carry no hard label (neutral codes).
    pub fn label(self, attrs: &AttributeVector) -> Result<f64> {
        let missing = || Error::Contract(format!("sample has no hard {} label", self.name()));
        match self {
            ProbeTask::Gender => attrs.gender_label().map(|g| g.index() as f64).ok_or_else(missing),
            ProbeTask::Race => attrs.origin_label().map(|o| o as f64).ok_or_else(missing),
            ProbeTask::Age => Ok(attrs.age_years()),
        }
    }
}

impl fmt::Display for ProbeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Training hyperparameters for [`train_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub kind: ProbeKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 penalty on weights (not biases), added to the mean loss.
    pub weight_decay: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            kind: ProbeKind::Linear,
            lr: 3e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 15,
            weight_decay: 0.0,
        }
    }
}

impl ProbeOptions {
    pub fn linear() -> Self {
        Self::default()
    }

    pub fn mlp(hidden: usize) -> Self {
        Self {
            kind: ProbeKind::Mlp(hidden),
            ..Self::default()
        }
    }
}

/// Minimum labeled samples per class for a classification probe.
pub const MIN_PER_CLASS: usize = 20;
/// Minimum samples for a regression probe.
pub const MIN_REGRESSION: usize = 100;

/// A trained probe with its input standardization.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub task: ProbeTask,
    pub params: ParamStore<f64>,
    specs: Vec<LayerSpec>,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn probe_specs(kind: ProbeKind, input_dim: usize, outputs: usize) -> Vec<LayerSpec> {
    let dense = |name: &str, i, o, act| LayerSpec::new(name, LayerKind::Dense { in_features: i, out_features: o }, act);
    match kind {
        ProbeKind::Linear => vec![dense("probe.out", input_dim, outputs, Activation::Linear)],
        ProbeKind::Mlp(h) => vec![
            dense("probe.hidden", input_dim, h, Activation::Relu),
            dense("probe.out", h, outputs, Activation::Linear),
        ],
    }
}

fn check_labels(task: ProbeTask, labels: &[f64]) -> Result<()> {
    match task.classes() {
        Some(k) => {
            let mut counts = vec![0usize; k];
            for &l in labels {
                if l.fract() != 0.0 || l < 0.0 || l >= k as f64 {
                    return Err(Error::Config(format!("{task} label {l} is not a class index below {k}")));
                }
                counts[l as usize] += 1;
            }
            if let Some((class, &n)) = counts.iter().enumerate().find(|(_, &n)| n < MIN_PER_CLASS) {
                return Err(Error::Config(format!(
                    "{task} probe needs at least {MIN_PER_CLASS} samples per class; class {class} has {n}"
                )));
            }
        }
        None => {
            if labels.len() < MIN_REGRESSION {
                return Err(Error::Config(format!(
                    "{task} probe needs at least {MIN_REGRESSION} samples, got {}",
                    labels.len()
                )));
            }
            if labels.iter().any(|l| !l.is_finite()) {
                return Err(Error::Config(format!("{task} labels must be finite")));
            }
        }
    }
    Ok(())
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains a probe on `inputs` (equal-length feature vectors) and `labels`
/// (class indices for classification, years for age). A seeded 80/20
/// split of the inputs drives early stopping; the parameters with the
/// best validation loss are kept.
pub fn train_probe(
    inputs: &[Vec<f64>],
    labels: &[f64],
    task: ProbeTask,
    options: &ProbeOptions,
    seed: u64,
) -> Result<ProbeModel> {
    if inputs.len() != labels.len() {
        return Err(Error::Config(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    check_labels(task, labels)?;
    let dim = inputs[0].len();
    if dim == 0 || inputs.iter().any(|x| x.len() != dim) {
        return Err(Error::Config("probe inputs must be non-empty vectors of equal length".into()));
    }
    if options.batch_size == 0 || options.max_epochs == 0 {
        return Err(Error::Config("probe batch size and epoch budget must be positive".into()));
    }

    let mut rng = Pcg32::with_stream(seed, 0x5052_4f42);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    rng.shuffle(&mut order);
    let n_val = (inputs.len() / 5).max(1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let mut fit_idx = fit_idx.to_vec();

    let mut input_mean = vec![0.0; dim];
    let mut input_scale = vec![1.0; dim];
    for j in 0..dim {
        let (m, s) = mean_and_std(fit_idx.iter().map(|&i| inputs[i][j]));
        input_mean[j] = m;
        input_scale[j] = if s > 1e-8 { s } else { 1.0 };
    }
    let (target_mean, target_scale) = if task.is_classification() {
        (0.0, 1.0)
    } else {
        let (m, s) = mean_and_std(fit_idx.iter().map(|&i| labels[i]));
        (m, if s > 1e-8 { s } else { 1.0 })
    };

    let outputs = task.classes().unwrap_or(1);
    let specs = probe_specs(options.kind, dim, outputs);
    let params = init_params(&specs, &[dim], rng.next_u32() as u64)?;
    let mut probe = ProbeModel {
        kind: options.kind,
        task,
        params,
        specs,
        input_mean,
        input_scale,
        target_mean,
        target_scale,
        best_epoch: 0,
    };
    let val_x = probe.standardize(val_idx.iter().map(|&i| &inputs[i]))?;
    let val_y: Vec<f64> = val_idx.iter().map(|&i| labels[i]).collect();

    let opt = Adam::with_lr(options.lr);
    let mut best = (probe.loss_on(&val_x, &val_y)?, probe.params.clone());
    let mut stale = 0;
    for epoch in 1..=options.max_epochs {
        rng.shuffle(&mut fit_idx);
        for chunk in fit_idx.chunks(options.batch_size) {
            let x = probe.standardize(chunk.iter().map(|&i| &inputs[i]))?;
            let y: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let bound = probe.params.bind(&mut g);
            let xv = g.constant(x);
            let out = forward_stack(&mut g, &probe.specs, &bound, xv)?;
            let mut loss = probe.task_loss(&mut g, out, &y)?;
            if options.weight_decay > 0.0 {
                for spec in &probe.specs {
                    let w = bound.var(&spec.weight_name())?;
                    let sq = g.mul(w, w)?;
                    let s = g.sum(sq)?;
                    let pen = g.scale(s, options.weight_decay)?;
                    loss = g.add(loss, pen)?;
                }
            }
            let mut grads = g.backward(loss)?;
            let named: BTreeMap<String, Tensor<f64>> = bound.collect(&mut grads);
            probe.params.adam_step(&named, &opt)?;
        }
        let val_loss = probe.loss_on(&val_x, &val_y)?;
        if val_loss < best.0 {
            best = (val_loss, probe.params.clone());
            probe.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= options.patience {
                break;
            }
        }
    }
    probe.params = best.1;
    log::debug!(
        "{} {} probe: best epoch {}, validation loss {:.4}",
        probe.kind,
        task,
        probe.best_epoch,
        best.0
    );
    Ok(probe)
}

impl ProbeModel {
    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    fn standardize<'a>(&self, rows: impl Iterator<Item = &'a Vec<f64>>) -> Result<Tensor<f64>> {
        let dim = self.input_dim();
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != dim {
                return Err(Error::Contract(format!("probe expects {dim} features, got {}", row.len())));
            }
            data.extend(row.iter().zip(&self.input_mean).zip(&self.input_scale).map(|((v, m), s)| (v - m) / s));
            n += 1;
        }
        Tensor::new(vec![n, dim], data)
    }

    fn task_loss(&self, g: &mut Graph<f64>, out: crate::tensor::Var, y: &[f64]) -> Result<crate::tensor::Var> {
        if self.task.is_classification() {
            let classes: Vec<usize> = y.iter().map(|&l| l as usize).collect();
            g.softmax_cross_entropy(out, &classes)
        } else {
            let t: Vec<f64> = y.iter().map(|v| (v - self.target_mean) / self.target_scale).collect();
            let target = g.constant(Tensor::new(vec![y.len(), 1], t)?);
            let diff = g.sub(out, target)?;
            let sq = g.mul(diff, diff)?;
            let s = g.sum(sq)?;
            g.scale(s, 1.0 / y.len() as f64)
        }
    }

    fn loss_on(&self, x: &Tensor<f64>, y: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = forward_stack(&mut g, &self.specs, &bound, xv)?;
        let loss = self.task_loss(&mut g, out, y)?;
        Ok(g.value(loss).item())
    }

    fn raw_outputs(&self, inputs: &[Vec<f64>]) -> Result<Tensor<f64>> {
        let x = self.standardize(inputs.iter())?;
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let xv = g.constant(x);
        let out = forward_stack(&mut g, &self.specs, &bound, xv)?;
        Ok(g.value(out).clone())
    }

    /// Predicted class index (as `f64`) or age in years for each input.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let out = self.raw_outputs(inputs)?;
        Ok(match self.task.classes() {
            Some(k) => out
                .data()
                .chunks(k)
                .map(|row| {
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    best as f64
                })
                .collect(),
            None => out
                .data()
                .iter()
                .map(|&v| (v * self.target_scale + self.target_mean).clamp(0.0, MAX_AGE as f64))
                .collect(),
        })
    }

    /// Accuracy (classification) or RMSE in years (age) on held-out data.
    pub fn score(&self, inputs: &[Vec<f64>], labels: &[f64]) -> Result<f64> {
        let pred = self.predict(inputs)?;
        Ok(if self.task.is_classification() {
            accuracy(&pred, labels)
        } else {
            rmse(&pred, labels)
        })
    }
}

pub fn accuracy(pred: &[f64], labels: &[f64]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

pub fn rmse(pred: &[f64], labels: &[f64]) -> f64 {
    let se: f64 = pred.iter().zip(labels).map(|(p, l)| (p - l) * (p - l)).sum();
    (se / labels.len().max(1) as f64).sqrt()
}

pub fn mae(pred: &[f64], labels: &[f64]) -> f64 {
    let ae: f64 = pred.iter().zip(labels).map(|(p, l)| (p - l).abs()).sum();
    ae / labels.len().max(1) as f64
}

/// Score of the label-blind predictor fitted on `train_labels`: the
/// majority class (ties to the lower index) or the mean age.
pub fn baseline_score(task: ProbeTask, train_labels: &[f64], test_labels: &[f64]) -> f64 {
    match task.classes() {
        Some(k) => {
            let mut counts = vec![0usize; k];
            for &l in train_labels {
                counts[l as usize] += 1;
            }
            let majority = (0..k).fold(0, |b, j| if counts[j] > counts[b] { j } else { b }) as f64;
            accuracy(&vec![majority; test_labels.len()], test_labels)
        }
        None => {
            let mean = train_labels.iter().sum::<f64>() / train_labels.len().max(1) as f64;
            rmse(&vec![mean; test_labels.len()], test_labels)
        }
    }
}

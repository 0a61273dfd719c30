use std::io::Write;
use std::path::Path;

use super::attributes::ATTR_LEN;
use super::cvae::{loss, CvaeModel, Variant};
use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::Pcg32;
use crate::tensor::{Graph, Real, Tensor};

/// Mean per-sample loss components over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// Stacks samples into `[N×3×S×S]` images and `[N×7]` attributes.
pub fn batch_tensors<T: Real>(items: &[&LabeledImage]) -> Result<(Tensor<T>, Tensor<T>)> {
    let pixels: Vec<&Tensor<f32>> = items.iter().map(|s| &s.pixels).collect();
    let images = Tensor::stack(&pixels)?.cast();
    let attrs: Vec<f64> = items.iter().flat_map(|s| s.attrs.to_array()).collect();
    Ok((images, Tensor::from_f64(vec![items.len(), ATTR_LEN], &attrs)?))
}

/// Minibatch Adam on the β-weighted objective, for `config.epochs` epochs.
///
/// Shuffling and latent noise come from generators seeded by `config.seed`,
/// so a run is a pure function of model, data and config. `progress` is
/// called once per finished epoch.
pub fn train<T: Real>(
    model: &mut CvaeModel<T>,
    data: &[LabeledImage],
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    model.config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let expected = model.config.image_shape();
    if let Some(bad) = data.iter().find(|s| s.pixels.shape() != expected) {
        return Err(Error::Config(format!(
            "sample {} has shape {:?}, model expects {expected:?}",
            bad.source_id,
            bad.pixels.shape()
        )));
    }

    let cfg = model.config.clone();
    let opt = Adam::with_lr(cfg.lr);
    let mut order_rng = Pcg32::with_stream(cfg.seed, 0x4f52_4452);
    let mut noise_rng = Pcg32::with_stream(cfg.seed, 0x4e4f_4953);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order_rng.shuffle(&mut order);
        let (mut recon_sum, mut kl_sum) = (0.0f64, 0.0f64);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            };
            let items: Vec<&LabeledImage> = chunk.iter().map(|&i| &data[i]).collect();
            let (images, attrs) = batch_tensors::<T>(&items)?;

            let mut g = Graph::new();
            let params = model.params.bind(&mut g);
            let x = g.constant(images);
            let a = match model.variant {
                Variant::Conditional => Some(g.constant(attrs)),
                Variant::Plain => None,
            };
            let fwd = model
                .forward_graph(&mut g, &params, x, a, &mut noise_rng)
                .map_err(diverged)?;
            let terms = loss(&mut g, fwd.recon, x, fwd.mu, fwd.logvar, cfg.beta).map_err(diverged)?;
            let (recon, kl) = (g.value(terms.recon).item().as_f64(), g.value(terms.kl).item().as_f64());
            if !(recon.is_finite() && kl.is_finite()) {
                return Err(diverged(Error::NonFinite { op: "loss" }));
            }
            let mut grads = g.backward(terms.total).map_err(diverged)?;
            let named = params.collect(&mut grads);
            model.params.adam_step(&named, &opt)?;
            if let Some((name, _)) = model.params.iter().find(|(_, e)| !e.value.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    detail: format!("parameter `{name}` became non-finite"),
                });
            }

            recon_sum += recon * chunk.len() as f64;
            kl_sum += kl * chunk.len() as f64;
        }
        let n = data.len() as f64;
        let stats = EpochStats {
            epoch,
            recon: recon_sum / n,
            kl: kl_sum / n,
            total: (recon_sum + cfg.beta * kl_sum) / n,
        };
        log::info!(
            "epoch {epoch}: recon {:.4} kl {:.4} total {:.4}",
            stats.recon,
            stats.kl,
            stats.total
        );
        progress(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Writes `epoch,recon,kl,total` rows.
pub fn write_loss_csv(history: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,recon,kl,total\n");
    for s in history {
        out.push_str(&format!("{},{},{},{}\n", s.epoch, s.recon, s.kl, s.total));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

use serde::{Deserialize, Serialize};

use super::attributes::{AttributeVector, ATTR_LEN};
use crate::error::{Error, Result};
use crate::nn::{self, forward_stack, Activation, BoundParams, LayerKind, LayerSpec, ParamStore};
use crate::rng::GaussianSource;
use crate::tensor::{Graph, NumericMode, Real, Tensor, Var};

pub const FORMAT_VERSION: u32 = 1;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const SUPPORTED_SIDES: [usize; 2] = [28, 56];

/// Training and architecture settings that travel with a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub latent_dim: usize,
    pub image_side: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    pub numeric_mode: NumericMode,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 48,
            image_side: 56,
            batch_size: 32,
            epochs: 20,
            lr: 1e-3,
            beta: 1.0,
            seed: 0,
            numeric_mode: NumericMode::F32,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_SIDES.contains(&self.image_side) {
            return Err(Error::Config(format!(
                "image_side must be one of {SUPPORTED_SIDES:?}, got {}",
                self.image_side
            )));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config(format!("latent_dim must be at least 2, got {}", self.latent_dim)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [3, self.image_side, self.image_side]
    }
}

/// Whether the decoder receives the attribute vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// The blind model: attributes are appended to the sampled latent.
    Conditional,
    /// Same architecture with no attribute input; the leakage baseline.
    Plain,
}

impl Variant {
    pub fn attr_len(self) -> usize {
        match self {
            Variant::Conditional => ATTR_LEN,
            Variant::Plain => 0,
        }
    }
}

/// Encoder/decoder layer lists for a configuration.
///
/// Each encoder stage is a 4×4 stride-2 convolution with leaky ReLU; 56-pixel
/// inputs get three stages (32, 64, 128 channels), 28-pixel inputs two (32,
/// 64). Both end at 7×7 before a linear head that emits `2·latent_dim`
/// values. The decoder mirrors this with transposed convolutions and ends in
/// a sigmoid.
pub fn architecture(config: &CvaeConfig, variant: Variant) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    config.validate()?;
    let channels: &[usize] = if config.image_side == 56 { &[3, 32, 64, 128] } else { &[3, 32, 64] };
    let leaky = Activation::LeakyRelu(LEAKY_SLOPE);
    let last = *channels.last().expect("non-empty");
    let flat = last * 7 * 7;

    let mut encoder: Vec<LayerSpec> = channels
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            LayerSpec::new(
                format!("enc.{i}"),
                LayerKind::Conv { in_channels: w[0], out_channels: w[1], kernel: 4, stride: 2, padding: 1 },
                leaky,
            )
        })
        .collect();
    encoder.push(LayerSpec::new(
        format!("enc.{}", encoder.len()),
        LayerKind::Dense { in_features: flat, out_features: 2 * config.latent_dim },
        Activation::Linear,
    ));

    let mut decoder = vec![
        LayerSpec::new(
            "dec.0",
            LayerKind::Dense { in_features: config.latent_dim + variant.attr_len(), out_features: flat },
            leaky,
        ),
        LayerSpec::new("dec.1", LayerKind::Unflatten { channels: last, height: 7, width: 7 }, Activation::Linear),
    ];
    let stages = channels.len() - 1;
    for (i, w) in channels.windows(2).rev().enumerate() {
        let act = if i + 1 == stages { Activation::Sigmoid } else { leaky };
        decoder.push(LayerSpec::new(
            format!("dec.{}", i + 2),
            LayerKind::ConvTranspose { in_channels: w[1], out_channels: w[0], kernel: 4, stride: 2, padding: 1 },
            act,
        ));
    }
    Ok((encoder, decoder))
}

/// Graph handles for one encode → sample → decode pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    pub recon: Var,
}

/// Scalar loss components, as graph handles.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Encoder, decoder and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel<T: Real> {
    pub config: CvaeConfig,
    pub variant: Variant,
    pub encoder_specs: Vec<LayerSpec>,
    pub decoder_specs: Vec<LayerSpec>,
    pub params: ParamStore<T>,
    pub format_version: u32,
}

impl<T: Real> CvaeModel<T> {
    /// Freshly initialized model; parameters are drawn from `config.seed`.
    pub fn new(config: CvaeConfig, variant: Variant) -> Result<Self> {
        let (encoder_specs, decoder_specs) = architecture(&config, variant)?;
        let model = Self::from_parts(config, variant, encoder_specs, decoder_specs, ParamStore::new())?;
        let mut params = ParamStore::new();
        let mut all = model.encoder_specs.clone();
        all.extend(model.decoder_specs.iter().cloned());
        nn::init_params_into(&mut params, &all, model.config.seed)?;
        Ok(Self { params, ..model })
    }

    /// Assembles a model from stored pieces, checking every structural
    /// invariant. `params` may be empty (filled later) or complete.
    pub fn from_parts(
        config: CvaeConfig,
        variant: Variant,
        encoder_specs: Vec<LayerSpec>,
        decoder_specs: Vec<LayerSpec>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let enc_shapes = nn::propagate_shapes(&encoder_specs, &config.image_shape())?;
        if enc_shapes.last() != Some(&vec![2 * d]) {
            return Err(Error::Config(format!(
                "encoder must end in {} features, ends in {:?}",
                2 * d,
                enc_shapes.last()
            )));
        }
        let dec_in = d + variant.attr_len();
        let dec_shapes = nn::propagate_shapes(&decoder_specs, &[dec_in])?;
        if dec_shapes.last().map(Vec::as_slice) != Some(&config.image_shape()[..]) {
            return Err(Error::Config(format!(
                "decoder must end in {:?}, ends in {:?}",
                config.image_shape(),
                dec_shapes.last()
            )));
        }
        let model = Self {
            config,
            variant,
            encoder_specs,
            decoder_specs,
            params,
            format_version: FORMAT_VERSION,
        };
        if !model.params.is_empty() {
            model.check_params()?;
        }
        Ok(model)
    }

    /// Verifies that the parameter store holds exactly the tensors the layer
    /// lists require, with matching shapes.
    pub fn check_params(&self) -> Result<()> {
        let mut all = self.encoder_specs.clone();
        all.extend(self.decoder_specs.iter().cloned());
        let mut reference = ParamStore::<T>::new();
        nn::init_params_into(&mut reference, &all, 0)?;
        let want: Vec<_> = reference.iter().map(|(n, e)| (n, e.value.shape())).collect();
        let have: Vec<_> = self.params.iter().map(|(n, e)| (n, e.value.shape())).collect();
        if want != have {
            return Err(Error::Config("parameter names or shapes do not match the layer specs".into()));
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn image_side(&self) -> usize {
        self.config.image_side
    }

    fn check_images(&self, shape: &[usize]) -> Result<usize> {
        let s = self.config.image_side;
        match shape {
            &[n, 3, h, w] if h == s && w == s => Ok(n),
            _ => Err(Error::dim("encode", format!("expected N×3×{s}×{s} images, got {shape:?}"))),
        }
    }

    /// Records the encoder on `g`: images `[N×3×S×S]` → `(mu, logvar)`,
    /// each `[N×d]`. Attributes are not an input.
    pub fn encode_graph(&self, g: &mut Graph<T>, params: &BoundParams, images: Var) -> Result<(Var, Var)> {
        let n = self.check_images(g.shape(images))?;
        let head = forward_stack(g, &self.encoder_specs, params, images)?;
        debug_assert_eq!(g.shape(head), &[n, 2 * self.latent_dim()]);
        let d = self.latent_dim();
        let mu = g.narrow(head, 1, 0, d)?;
        let logvar = g.narrow(head, 1, d, d)?;
        Ok((mu, logvar))
    }

    /// Records the decoder on `g`: `z[N×d]` (and `attrs[N×7]` for the
    /// conditional variant) → images `[N×3×S×S]`.
    pub fn decode_graph(&self, g: &mut Graph<T>, params: &BoundParams, z: Var, attrs: Option<Var>) -> Result<Var> {
        let d = self.latent_dim();
        let zs = g.shape(z).to_vec();
        let [n, zd] = zs[..] else {
            return Err(Error::Contract(format!("latent batch must be N×{d}, got {zs:?}")));
        };
        if zd != d {
            return Err(Error::Contract(format!("latent has {zd} entries, model expects {d}")));
        }
        let input = match (self.variant, attrs) {
            (Variant::Conditional, Some(a)) => {
                if g.shape(a) != [n, ATTR_LEN] {
                    return Err(Error::Contract(format!(
                        "attributes must be {n}×{ATTR_LEN}, got {:?}",
                        g.shape(a)
                    )));
                }
                g.concat(&[z, a], 1)?
            }
            (Variant::Conditional, None) => {
                return Err(Error::Contract("conditional decoder needs an attribute vector".into()));
            }
            (Variant::Plain, _) => z,
        };
        forward_stack(g, &self.decoder_specs, params, input)
    }

    /// Full pass used in training: encode, sample, append attributes, decode.
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        params: &BoundParams,
        images: Var,
        attrs: Option<Var>,
        noise: &mut dyn GaussianSource,
    ) -> Result<ForwardVars> {
        let (mu, logvar) = self.encode_graph(g, params, images)?;
        let z = reparameterize(g, mu, logvar, noise)?;
        let recon = self.decode_graph(g, params, z, attrs)?;
        Ok(ForwardVars { mu, logvar, z, recon })
    }

    /// Encodes one image `[1×3×S×S]` (or `[3×S×S]`) to `(mu, logvar)`.
    pub fn encode(&self, image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let image = as_batch_of_one(image)?;
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let x = g.constant(image);
        let (mu, logvar) = self.encode_graph(&mut g, &params, x)?;
        let d = self.latent_dim();
        Ok((g.value(mu).reshape(vec![d])?, g.value(logvar).reshape(vec![d])?))
    }

    /// Encodes a batch `[N×3×S×S]` to `(mu, logvar)`, each `[N×d]`.
    pub fn encode_batch(&self, images: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let x = g.constant(images.clone());
        let (mu, logvar) = self.encode_graph(&mut g, &params, x)?;
        Ok((g.value(mu).clone(), g.value(logvar).clone()))
    }

    /// Decodes `z[N×d]` under `attrs[N×7]` into `[N×3×S×S]` images.
    pub fn decode_batch(&self, z: &Tensor<T>, attrs: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let zv = g.constant(z.clone());
        let a = g.constant(attrs.clone());
        let out = self.decode_graph(&mut g, &params, zv, Some(a))?;
        Ok(g.value(out).clone())
    }

    /// Decodes a latent `z[d]` under `attrs` into a `[3×S×S]` image. The
    /// plain variant ignores `attrs`.
    pub fn decode(&self, z: &Tensor<T>, attrs: &AttributeVector) -> Result<Tensor<T>> {
        attrs.validate()?;
        let d = self.latent_dim();
        if z.len() != d {
            return Err(Error::Contract(format!("latent has {} entries, model expects {d}", z.len())));
        }
        let mut g = Graph::new();
        let params = self.params.bind_frozen(&mut g);
        let zv = g.constant(z.reshape(vec![1, d])?);
        let a = g.constant(Tensor::from_f64(vec![1, ATTR_LEN], &attrs.to_array())?);
        let out = self.decode_graph(&mut g, &params, zv, Some(a))?;
        let s = self.image_side();
        g.value(out).reshape(vec![3, s, s])
    }
}

fn as_batch_of_one<T: Real>(image: &Tensor<T>) -> Result<Tensor<T>> {
    match *image.shape() {
        [3, h, w] => image.reshape(vec![1, 3, h, w]),
        [1, 3, _, _] => Ok(image.clone()),
        _ => Err(Error::dim("encode", format!("expected one 3×S×S image, got {:?}", image.shape()))),
    }
}

/// `z = mu + exp(logvar / 2) ⊙ ε` with `ε` drawn from `noise`. Gradients
/// reach `mu` and `logvar`; `ε` is a constant on the tape.
pub fn reparameterize<T: Real>(
    g: &mut Graph<T>,
    mu: Var,
    logvar: Var,
    noise: &mut dyn GaussianSource,
) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::dim("reparameterize", format!("{:?} vs {:?}", g.shape(mu), g.shape(logvar))));
    }
    let shape = g.shape(mu).to_vec();
    let n: usize = shape.iter().product();
    let eps: Vec<T> = (0..n).map(|_| T::from_f64(noise.standard_normal())).collect();
    let eps = g.constant(Tensor::new(shape, eps)?);
    let half = g.scale(logvar, 0.5)?;
    let std = g.exp(half)?;
    let spread = g.mul(std, eps)?;
    g.add(mu, spread)
}

/// β-weighted VAE objective over a batch of `N` samples.
///
/// * `recon` = Σ over pixels of squared error, averaged over the batch
/// * `kl` = −½ Σ_j (1 + logvar_j − mu_j² − exp(logvar_j)), averaged over the batch
/// * `total` = `recon + beta · kl`
pub fn loss<T: Real>(g: &mut Graph<T>, recon: Var, target: Var, mu: Var, logvar: Var, beta: f64) -> Result<LossVars> {
    if g.shape(recon) != g.shape(target) {
        return Err(Error::Contract(format!(
            "reconstruction {:?} and target {:?} differ in shape",
            g.shape(recon),
            g.shape(target)
        )));
    }
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::Contract(format!("mu {:?} and logvar {:?} differ", g.shape(mu), g.shape(logvar))));
    }
    let batch = g.shape(recon).first().copied().unwrap_or(1) as f64;

    let diff = g.sub(recon, target)?;
    let sq = g.mul(diff, diff)?;
    let sse = g.sum(sq)?;
    let recon_term = g.scale(sse, 1.0 / batch)?;

    let lv_plus_one = g.add_scalar(logvar, 1.0)?;
    let var = g.exp(logvar)?;
    let mu_sq = g.mul(mu, mu)?;
    let t = g.sub(lv_plus_one, var)?;
    let t = g.sub(t, mu_sq)?;
    let s = g.sum(t)?;
    let kl_term = g.scale(s, -0.5 / batch)?;

    let weighted = g.scale(kl_term, beta)?;
    let total = g.add(recon_term, weighted)?;
    Ok(LossVars { total, recon: recon_term, kl: kl_term })
}

/// Closed-form KL of `N(mu, diag(exp(logvar)))` from `N(0, I)` for a single
/// latent vector, evaluated in `f64` off the tape.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| (1.0 + lv) - lv.exp() - m * m)
        .sum::<f64>()
}

//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! "BAFO"                      magic
//! u32                         format version (1)
//! config block                u32 latent_dim, u32 image_side, u32 batch_size,
//!                             u32 epochs, f64 lr, f64 beta, u64 seed,
//!                             u8 numeric mode (0 = f32, 1 = f64),
//!                             u8 variant (0 = conditional, 1 = plain)
//! u32 count, layer specs      encoder
//! u32 count, layer specs      decoder
//! u32 count, parameters       in canonical (sorted) name order
//! ```
//!
//! A layer spec is `str name, u8 kind, u32 fields…, u8 activation [, f64 slope]`.
//! A parameter is `str name, u32 ndim, u32 dims…, u32 n, n × f32`.
//! Strings are a u32 byte length followed by UTF-8.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::cvae::{CvaeConfig, CvaeModel, Variant, FORMAT_VERSION};
use crate::binio::{ByteReader, ByteWriter, FormatError, FormatResult};
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerKind, LayerSpec, ParamStore};
use crate::tensor::{NumericMode, Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BAFO";

fn write_spec(w: &mut ByteWriter, spec: &LayerSpec) {
    w.str(&spec.name);
    match spec.kind {
        LayerKind::Conv { in_channels, out_channels, kernel, stride, padding } => {
            w.u8(0);
            for v in [in_channels, out_channels, kernel, stride, padding] {
                w.usize32(v);
            }
        }
        LayerKind::ConvTranspose { in_channels, out_channels, kernel, stride, padding } => {
            w.u8(1);
            for v in [in_channels, out_channels, kernel, stride, padding] {
                w.usize32(v);
            }
        }
        LayerKind::Dense { in_features, out_features } => {
            w.u8(2);
            w.usize32(in_features);
            w.usize32(out_features);
        }
        LayerKind::Unflatten { channels, height, width } => {
            w.u8(3);
            for v in [channels, height, width] {
                w.usize32(v);
            }
        }
    }
    match spec.activation {
        Activation::Linear => w.u8(0),
        Activation::Relu => w.u8(1),
        Activation::LeakyRelu(slope) => {
            w.u8(2);
            w.f64(slope);
        }
        Activation::Sigmoid => w.u8(3),
    }
}

fn read_spec(r: &mut ByteReader<'_>) -> FormatResult<LayerSpec> {
    let name = r.str("layer name")?;
    let fields = |n: usize, r: &mut ByteReader<'_>| -> FormatResult<Vec<usize>> {
        (0..n).map(|_| r.usize32("layer field")).collect()
    };
    let kind = match r.u8("layer kind")? {
        0 => {
            let f = fields(5, r)?;
            LayerKind::Conv { in_channels: f[0], out_channels: f[1], kernel: f[2], stride: f[3], padding: f[4] }
        }
        1 => {
            let f = fields(5, r)?;
            LayerKind::ConvTranspose { in_channels: f[0], out_channels: f[1], kernel: f[2], stride: f[3], padding: f[4] }
        }
        2 => {
            let f = fields(2, r)?;
            LayerKind::Dense { in_features: f[0], out_features: f[1] }
        }
        3 => {
            let f = fields(3, r)?;
            LayerKind::Unflatten { channels: f[0], height: f[1], width: f[2] }
        }
        other => return r.fail(format!("unknown layer kind {other}")),
    };
    let activation = match r.u8("activation")? {
        0 => Activation::Linear,
        1 => Activation::Relu,
        2 => Activation::LeakyRelu(r.f64("leaky slope")?),
        3 => Activation::Sigmoid,
        other => return r.fail(format!("unknown activation {other}")),
    };
    Ok(LayerSpec { name, kind, activation })
}

/// Canonical serialization. Parameters are written as 32-bit floats.
pub fn checkpoint_bytes<T: Real>(model: &CvaeModel<T>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(model.format_version);
    let c = &model.config;
    w.usize32(c.latent_dim);
    w.usize32(c.image_side);
    w.usize32(c.batch_size);
    w.usize32(c.epochs);
    w.f64(c.lr);
    w.f64(c.beta);
    w.u64(c.seed);
    w.u8(match c.numeric_mode {
        NumericMode::F32 => 0,
        NumericMode::F64 => 1,
    });
    w.u8(match model.variant {
        Variant::Conditional => 0,
        Variant::Plain => 1,
    });
    for specs in [&model.encoder_specs, &model.decoder_specs] {
        w.usize32(specs.len());
        for s in specs {
            write_spec(&mut w, s);
        }
    }
    w.usize32(model.params.len());
    for (name, entry) in model.params.iter() {
        w.str(name);
        let shape = entry.value.shape();
        w.usize32(shape.len());
        for &d in shape {
            w.usize32(d);
        }
        w.usize32(entry.value.len());
        for &v in entry.value.data() {
            w.f32(v.as_f64() as f32);
        }
    }
    w.finish()
}

/// SHA-256 of the canonical checkpoint bytes.
pub fn fingerprint<T: Real>(model: &CvaeModel<T>) -> [u8; 32] {
    Sha256::digest(checkpoint_bytes(model)).into()
}

fn fmt_err(e: FormatError) -> Error {
    Error::CheckpointFormat {
        offset: e.offset,
        detail: e.detail,
    }
}

/// Parses checkpoint bytes. Nothing is returned unless the whole buffer is
/// valid.
pub fn model_from_bytes<T: Real>(bytes: &[u8]) -> Result<CvaeModel<T>> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic").map_err(fmt_err)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointFormat { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let version_at = r.offset();
    let version = r.u32("version").map_err(fmt_err)?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat {
            offset: version_at,
            detail: format!("unsupported version {version}"),
        });
    }
    let parsed = (|| -> FormatResult<_> {
        let config = CvaeConfig {
            latent_dim: r.usize32("latent_dim")?,
            image_side: r.usize32("image_side")?,
            batch_size: r.usize32("batch_size")?,
            epochs: r.usize32("epochs")?,
            lr: r.f64("lr")?,
            beta: r.f64("beta")?,
            seed: r.u64("seed")?,
            numeric_mode: match r.u8("numeric mode")? {
                0 => NumericMode::F32,
                1 => NumericMode::F64,
                other => return r.fail(format!("unknown numeric mode {other}")),
            },
        };
        let variant = match r.u8("variant")? {
            0 => Variant::Conditional,
            1 => Variant::Plain,
            other => return r.fail(format!("unknown variant {other}")),
        };
        let mut stacks = Vec::with_capacity(2);
        for _ in 0..2 {
            let n = r.usize32("layer count")?;
            let specs = (0..n).map(|_| read_spec(&mut r)).collect::<FormatResult<Vec<_>>>()?;
            stacks.push(specs);
        }
        let n_params = r.usize32("parameter count")?;
        let mut params = ParamStore::<T>::new();
        let mut last_name: Option<String> = None;
        for _ in 0..n_params {
            let name_at = r.offset();
            let name = r.str("parameter name")?;
            if last_name.as_ref().is_some_and(|prev| prev >= &name) {
                return Err(FormatError { offset: name_at, detail: format!("parameter `{name}` out of canonical order") });
            }
            let ndim = r.usize32("ndim")?;
            let shape = (0..ndim).map(|_| r.usize32("dimension")).collect::<FormatResult<Vec<_>>>()?;
            let count_at = r.offset();
            let count = r.usize32("value count")?;
            if shape.iter().product::<usize>() != count || shape.contains(&0) {
                return Err(FormatError { offset: count_at, detail: format!("{count} values for shape {shape:?}") });
            }
            let raw = r.take(count * 4, "parameter data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::from_f64(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| FormatError { offset: count_at, detail: e.to_string() })?;
            params
                .insert(name.clone(), tensor)
                .map_err(|e| FormatError { offset: name_at, detail: e.to_string() })?;
            last_name = Some(name);
        }
        r.expect_end()?;
        let decoder = stacks.pop().expect("two stacks");
        let encoder = stacks.pop().expect("two stacks");
        Ok((config, variant, encoder, decoder, params))
    })();
    let (config, variant, encoder, decoder, params) = parsed.map_err(fmt_err)?;
    if params.is_empty() {
        return Err(Error::CheckpointFormat { offset: bytes.len(), detail: "no parameters".into() });
    }
    CvaeModel::from_parts(config, variant, encoder, decoder, params).map_err(|e| Error::CheckpointFormat {
        offset: bytes.len(),
        detail: format!("inconsistent model: {e}"),
    })
}

pub fn save_checkpoint<T: Real>(model: &CvaeModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<CvaeModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

/// Loads and checks the latent size against a caller override.
pub fn load_checkpoint_expecting<T: Real>(path: impl AsRef<Path>, latent_dim: Option<usize>) -> Result<CvaeModel<T>> {
    let model = load_checkpoint(path)?;
    match latent_dim {
        Some(d) if d != model.latent_dim() => Err(Error::Config(format!(
            "checkpoint has latent_dim {}, but {d} was requested",
            model.latent_dim()
        ))),
        _ => Ok(model),
    }
}

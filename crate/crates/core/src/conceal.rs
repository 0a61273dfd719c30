//! Concealed records: attribute-free latent codes that can be revealed
//! under any requested attributes.
//!
//! Record file layout (little-endian):
//!
//! ```text
//! "BFR1"        magic
//! [u8; 32]      model fingerprint (SHA-256 of the checkpoint bytes)
//! u32 d         latent size
//! d × f32       latent code
//! u32 len       metadata block length, then:
//!   str         source id (u32 length + UTF-8)
//!   i64         creation time, seconds since the Unix epoch
//! ```

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::binio::{ByteReader, ByteWriter, FormatError};
use crate::data::image_write;
use crate::error::{Error, Result};
use crate::model::{fingerprint, AttributeVector, CvaeModel, Origin};
use crate::rng::Pcg32;
use crate::tensor::{Graph, Real, Tensor};

pub const RECORD_MAGIC: &[u8; 4] = b"BFR1";

/// A latent code with provenance. It has no attribute fields.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcealedRecord {
    pub z: Vec<f32>,
    pub model_fingerprint: [u8; 32],
    pub source_id: String,
    pub created_at: i64,
}

/// How the latent code is taken from the encoder's Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcealMode {
    /// The posterior mean; deterministic.
    #[default]
    Mean,
    /// One reparameterized draw with the given seed.
    Sample(u64),
}

/// Provenance attached to a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub source_id: String,
    pub created_at: i64,
}

impl RecordMeta {
    pub fn new(source_id: impl Into<String>, created_at: i64) -> Self {
        Self {
            source_id: source_id.into(),
            created_at,
        }
    }

    /// Stamped with the current wall-clock time.
    pub fn now(source_id: impl Into<String>) -> Self {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0);
        Self::new(source_id, secs)
    }
}

impl ConcealedRecord {
    pub fn latent_dim(&self) -> usize {
        self.z.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(RECORD_MAGIC);
        w.bytes(&self.model_fingerprint);
        w.usize32(self.z.len());
        for &v in &self.z {
            w.f32(v);
        }
        let mut meta = ByteWriter::new();
        meta.str(&self.source_id);
        meta.i64(self.created_at);
        let meta = meta.finish();
        w.usize32(meta.len());
        w.bytes(&meta);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |e: FormatError| Error::RecordFormat {
            offset: e.offset,
            detail: e.detail,
        };
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic").map_err(fmt)? != RECORD_MAGIC {
            return Err(Error::RecordFormat { offset: 0, detail: "bad magic".into() });
        }
        let model_fingerprint: [u8; 32] = r.take(32, "fingerprint").map_err(fmt)?.try_into().expect("32 bytes");
        let d = r.usize32("latent size").map_err(fmt)?;
        let z = (0..d).map(|_| r.f32("latent code")).collect::<Result<Vec<_>, _>>().map_err(fmt)?;
        let meta_len = r.usize32("metadata length").map_err(fmt)?;
        let meta_start = r.offset();
        let source_id = r.str("source id").map_err(fmt)?;
        let created_at = r.i64("creation time").map_err(fmt)?;
        if r.offset() - meta_start != meta_len {
            return Err(Error::RecordFormat { offset: meta_start, detail: "metadata length mismatch".into() });
        }
        r.expect_end().map_err(fmt)?;
        Ok(Self { z, model_fingerprint, source_id, created_at })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Noise generator behind `ConcealMode::Sample(seed)`.
pub fn sample_noise(seed: u64) -> Pcg32 {
    Pcg32::with_stream(seed, 0x5a53)
}

/// A model paired with its fingerprint, for concealing or revealing many
/// images without re-hashing the checkpoint each time.
#[derive(Debug, Clone)]
pub struct Concealer<'m, T: Real> {
    model: &'m CvaeModel<T>,
    fingerprint: [u8; 32],
}

impl<'m, T: Real> Concealer<'m, T> {
    pub fn new(model: &'m CvaeModel<T>) -> Self {
        Self {
            model,
            fingerprint: fingerprint(model),
        }
    }

    pub fn model(&self) -> &CvaeModel<T> {
        self.model
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    /// Encodes `image` (`[3×S×S]` or `[1×3×S×S]`) to a record.
    pub fn conceal(&self, image: &Tensor<T>, mode: ConcealMode, meta: RecordMeta) -> Result<ConcealedRecord> {
        let (mu, logvar) = self.model.encode(image).map_err(|e| match e {
            Error::Dimension { detail, .. } => Error::Contract(format!("image does not fit the model: {detail}")),
            other => other,
        })?;
        let z = match mode {
            ConcealMode::Mean => mu,
            ConcealMode::Sample(seed) => {
                let mut g = Graph::new();
                let (m, lv) = (g.constant(mu), g.constant(logvar));
                let mut rng = sample_noise(seed);
                let z = crate::model::reparameterize(&mut g, m, lv, &mut rng)?;
                g.value(z).clone()
            }
        };
        Ok(ConcealedRecord {
            z: z.data().iter().map(|v| v.as_f64() as f32).collect(),
            model_fingerprint: self.fingerprint,
            source_id: meta.source_id,
            created_at: meta.created_at,
        })
    }

    /// Decodes a record under `target`. Fails if the record came from a
    /// different model.
    pub fn reveal(&self, record: &ConcealedRecord, target: &AttributeVector) -> Result<Tensor<T>> {
        if record.model_fingerprint != self.fingerprint {
            return Err(Error::WrongModel);
        }
        let z = Tensor::new(vec![record.z.len()], record.z.iter().map(|&v| T::from_f64(f64::from(v))).collect())?;
        self.model.decode(&z, target)
    }
}

pub fn conceal<T: Real>(
    model: &CvaeModel<T>,
    image: &Tensor<T>,
    mode: ConcealMode,
    meta: RecordMeta,
) -> Result<ConcealedRecord> {
    Concealer::new(model).conceal(image, mode, meta)
}

pub fn reveal<T: Real>(model: &CvaeModel<T>, record: &ConcealedRecord, target: &AttributeVector) -> Result<Tensor<T>> {
    Concealer::new(model).reveal(record, target)
}

/// A tiled attribute sweep: one row per gender, the original image in the
/// first column of the first row, then one tile per age.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// `[3 × rows·S × cols·S]` pixels.
    pub image: Tensor<f32>,
    pub rows: usize,
    pub cols: usize,
    /// Non-blank tiles: the original plus one per (age, gender).
    pub tiles: usize,
}

impl Grid {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        image_write(path, &self.image)
    }
}

/// Conceals `image` (mean mode) and reveals it at every `ages × genders`
/// combination with the given origin.
pub fn render_grid<T: Real>(
    model: &CvaeModel<T>,
    image: &Tensor<T>,
    ages: &[f64],
    genders: &[f64],
    origin: Origin,
) -> Result<Grid> {
    if ages.is_empty() || genders.is_empty() {
        return Err(Error::Config("grid needs at least one age and one gender".into()));
    }
    let concealer = Concealer::new(model);
    let record = concealer.conceal(image, ConcealMode::Mean, RecordMeta::new("grid", 0))?;
    let s = model.image_side();
    let (rows, cols) = (genders.len(), ages.len() + 1);
    let (h, w) = (rows * s, cols * s);
    let mut canvas = vec![1.0f32; 3 * h * w];
    let mut blit = |tile: &[T], row: usize, col: usize| {
        for c in 0..3 {
            for y in 0..s {
                for x in 0..s {
                    canvas[(c * h + row * s + y) * w + col * s + x] = tile[(c * s + y) * s + x].as_f64() as f32;
                }
            }
        }
    };
    blit(image.data(), 0, 0);
    for (row, &gender) in genders.iter().enumerate() {
        for (i, &age) in ages.iter().enumerate() {
            let target = AttributeVector::target(age, gender, origin)?;
            let tile = concealer.reveal(&record, &target)?;
            blit(tile.data(), row, i + 1);
        }
    }
    Ok(Grid {
        image: Tensor::new(vec![3, h, w], canvas)?,
        rows,
        cols,
        tiles: 1 + ages.len() * genders.len(),
    })
}

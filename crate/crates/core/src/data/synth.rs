//! Deterministic synthetic attribute images.
//!
//! Each image is a centered glyph on a gray textured background:
//!
//! * gender picks the glyph class: male → filled circle, female → filled square
//! * age sets the glyph radius, linearly from 20% (age 0) to 45% (age 116)
//!   of the image side
//! * origin picks one of five saturated hues ([`PALETTE`])
//! * the background is mid-gray with a per-image brightness offset, a linear
//!   shading ramp and faint per-pixel grain, all drawn from the image's own
//!   noise seed and never from its attributes
//!
//! Rendering is a pure function of `(attributes, noise seed, side)`, and
//! [`oracle_classify`] inverts it analytically.

use std::path::Path;

use super::codec::image_write;
use super::dataset::{DatasetSplit, LabeledImage};
use super::labels::label_filename;
use crate::error::{Error, Result};
use crate::model::{AttributeVector, Gender, ORIGIN_CLASSES};
use crate::rng::Pcg32;
use crate::tensor::Tensor;

/// Glyph colors, one per origin class. Every entry has a channel spread of
/// 0.8, far above anything the gray background can produce.
pub const PALETTE: [[f64; 3]; ORIGIN_CLASSES] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.9, 0.1],
    [0.1, 0.1, 0.9],
    [0.9, 0.9, 0.1],
    [0.1, 0.9, 0.9],
];

pub const MIN_RADIUS_FRAC: f64 = 0.20;
pub const MAX_RADIUS_FRAC: f64 = 0.45;
const BRIGHTNESS_RANGE: f64 = 0.12;
const RAMP_MAX: f64 = 0.08;
const GRAIN: f64 = 0.03;
// Channel spread that separates glyph pixels from background.
const GLYPH_SPREAD: f64 = 0.4;

/// Glyph radius in pixels for a normalized age.
pub fn glyph_radius(age_norm: f64, side: usize) -> f64 {
    side as f64 * (MIN_RADIUS_FRAC + (MAX_RADIUS_FRAC - MIN_RADIUS_FRAC) * age_norm)
}

/// Whether pixel `(x, y)` is covered by the glyph for these attributes.
pub fn in_glyph(gender: Gender, radius: f64, side: usize, x: usize, y: usize) -> bool {
    let c = (side as f64 - 1.0) / 2.0;
    let (dx, dy) = (x as f64 - c, y as f64 - c);
    match gender {
        Gender::Male => dx * dx + dy * dy <= radius * radius,
        Gender::Female => dx.abs().max(dy.abs()) <= radius,
    }
}

/// Background only: what the image looks like where no glyph is drawn.
pub fn render_background(noise_seed: u64, side: usize) -> Vec<f64> {
    let mut rng = Pcg32::with_stream(noise_seed, 0x4247);
    let brightness = rng.uniform(-BRIGHTNESS_RANGE, BRIGHTNESS_RANGE);
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let ramp = rng.uniform(0.0, RAMP_MAX);
    let c = (side as f64 - 1.0) / 2.0;
    let half_diag = c * std::f64::consts::SQRT_2;
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut out = vec![0.0; 3 * side * side];
    for y in 0..side {
        for x in 0..side {
            let proj = ((x as f64 - c) * ca + (y as f64 - c) * sa) / half_diag;
            let base = 0.5 + brightness + ramp * proj;
            for ch in 0..3 {
                out[(ch * side + y) * side + x] = base + rng.uniform(-GRAIN, GRAIN);
            }
        }
    }
    out
}

/// Renders one image. `attrs` must carry hard gender and origin labels.
pub fn render(attrs: &AttributeVector, noise_seed: u64, side: usize) -> Result<Tensor<f32>> {
    let (Some(gender), Some(origin)) = (attrs.gender_label(), attrs.origin_label()) else {
        return Err(Error::Contract("rendering needs hard gender and origin labels".into()));
    };
    let radius = glyph_radius(attrs.age_norm, side);
    let color = PALETTE[origin];
    let mut pixels = render_background(noise_seed, side);
    for y in 0..side {
        for x in 0..side {
            if in_glyph(gender, radius, side, x, y) {
                for (ch, &v) in color.iter().enumerate() {
                    pixels[(ch * side + y) * side + x] = v;
                }
            }
        }
    }
    Tensor::new(vec![3, side, side], pixels.into_iter().map(|v| v as f32).collect())
}

/// Attributes recovered from pixels by [`oracle_classify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReading {
    pub gender: Gender,
    pub origin: usize,
    pub age_norm: f64,
    pub radius: f64,
}

/// Analytic inverse of [`render`]: glyph pixels are those with a large
/// channel spread; the glyph class is read off the bounding-box corners
/// (a square fills them, a circle leaves them empty), the radius from the
/// glyph area, and the hue from the nearest palette color.
pub fn oracle_classify(pixels: &Tensor<f32>) -> Result<OracleReading> {
    let &[3, side, w] = pixels.shape() else {
        return Err(Error::dim("oracle_classify", format!("expected 3×S×S, got {:?}", pixels.shape())));
    };
    if side != w {
        return Err(Error::dim("oracle_classify", "image is not square"));
    }
    let px = |ch: usize, y: usize, x: usize| f64::from(pixels.data()[(ch * side + y) * side + x]);
    let mut mask = vec![false; side * side];
    let (mut area, mut sum) = (0usize, [0.0f64; 3]);
    let (mut x0, mut x1, mut y0, mut y1) = (side, 0, side, 0);
    for y in 0..side {
        for x in 0..side {
            let v = [px(0, y, x), px(1, y, x), px(2, y, x)];
            let spread = v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min);
            if spread > GLYPH_SPREAD {
                mask[y * side + x] = true;
                area += 1;
                for ch in 0..3 {
                    sum[ch] += v[ch];
                }
                (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
            }
        }
    }
    if area == 0 {
        return Err(Error::Contract("no glyph found".into()));
    }
    let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)];
    let filled = corners.iter().filter(|&&(x, y)| mask[y * side + x]).count();
    let gender = if filled >= 3 { Gender::Female } else { Gender::Male };

    let mean = sum.map(|s| s / area as f64);
    let origin = (0..ORIGIN_CLASSES)
        .min_by(|&a, &b| {
            let d = |i: usize| PALETTE[i].iter().zip(&mean).map(|(p, m)| (p - m).powi(2)).sum::<f64>();
            d(a).total_cmp(&d(b))
        })
        .expect("non-empty palette");

    let area = area as f64;
    let radius = match gender {
        Gender::Female => area.sqrt() / 2.0,
        Gender::Male => (area / std::f64::consts::PI).sqrt(),
    };
    let frac = radius / side as f64;
    let age_norm = ((frac - MIN_RADIUS_FRAC) / (MAX_RADIUS_FRAC - MIN_RADIUS_FRAC)).clamp(0.0, 1.0);
    Ok(OracleReading {
        gender,
        origin,
        age_norm,
        radius,
    })
}

/// Largest age error (normalized) the area-based radius estimate can make:
/// one pixel of radius.
pub fn oracle_age_tolerance(side: usize) -> f64 {
    1.0 / ((MAX_RADIUS_FRAC - MIN_RADIUS_FRAC) * side as f64)
}

/// Samples `n` labeled images and splits them 85/15.
pub fn synth_generate(n: usize, image_side: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 20 {
        return Err(Error::Config(format!("synthetic datasets need at least 20 images, got {n}")));
    }
    let mut rng = Pcg32::with_stream(seed, 0x5359_4e54);
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let age = f64::from(rng.below(117));
        let gender = if rng.below(2) == 0 { Gender::Male } else { Gender::Female };
        let origin = rng.below(ORIGIN_CLASSES as u32) as usize;
        let noise_seed = (u64::from(rng.next_u32()) << 32) | u64::from(rng.next_u32());
        let attrs = AttributeVector::from_labels(age, gender, origin)?;
        items.push(LabeledImage {
            pixels: render(&attrs, noise_seed, image_side)?,
            attrs,
            source_id: format!("synth{i:06}"),
        });
    }
    DatasetSplit::from_items(items, seed)
}

/// Writes every sample as `<age>_<gender>_<race>_<source_id>.png`.
pub fn write_dataset_dir(split: &DatasetSplit, dir: impl AsRef<Path>) -> Result<usize> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = 0;
    for s in split.train.iter().chain(&split.test) {
        let name = label_filename(&s.attrs, &format!("{}.png", s.source_id))?;
        image_write(dir.join(name), &s.pixels)?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximal_square_in_hue_three() {
        let attrs = AttributeVector::from_labels(116.0, Gender::Female, 3).unwrap();
        let img = render(&attrs, 77, 28).unwrap();
        let r = oracle_classify(&img).unwrap();
        assert_eq!(r.gender, Gender::Female);
        assert_eq!(r.origin, 3);
        assert!((r.age_norm - 1.0).abs() <= oracle_age_tolerance(28));
    }

    #[test]
    fn oracle_recovers_every_attribute_on_clean_renders() {
        for side in [28, 56] {
            let split = synth_generate(300, side, 5).unwrap();
            for s in split.train.iter().chain(&split.test) {
                let r = oracle_classify(&s.pixels).unwrap();
                assert_eq!(Some(r.gender), s.attrs.gender_label(), "{}", s.source_id);
                assert_eq!(Some(r.origin), s.attrs.origin_label(), "{}", s.source_id);
                assert!(
                    (r.age_norm - s.attrs.age_norm).abs() <= oracle_age_tolerance(side),
                    "{}: {} vs {}",
                    s.source_id,
                    r.age_norm,
                    s.attrs.age_norm
                );
            }
        }
    }

    #[test]
    fn attributes_never_touch_the_background() {
        let a = AttributeVector::from_labels(10.0, Gender::Male, 0).unwrap();
        let b = AttributeVector::from_labels(90.0, Gender::Female, 4).unwrap();
        let (ia, ib) = (render(&a, 123, 28).unwrap(), render(&b, 123, 28).unwrap());
        let (ra, rb) = (glyph_radius(a.age_norm, 28), glyph_radius(b.age_norm, 28));
        for y in 0..28 {
            for x in 0..28 {
                if in_glyph(Gender::Male, ra, 28, x, y) || in_glyph(Gender::Female, rb, 28, x, y) {
                    continue;
                }
                for ch in 0..3 {
                    let i = (ch * 28 + y) * 28 + x;
                    assert_eq!(ia.data()[i], ib.data()[i]);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let a = synth_generate(40, 28, 9).unwrap();
        let b = synth_generate(40, 28, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.test.len()), (34, 6));
        for s in &a.train {
            assert!(s.pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(synth_generate(19, 28, 0).is_err());
    }
}

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageEncoder, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn codec_err(path: &Path, detail: impl ToString) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    }
}

/// Reads a PNG, JPEG or PPM file as a `[3×H×W]` tensor in `[0, 1]`.
pub fn image_read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format().is_none() {
        return Err(codec_err(path, "unrecognized image format"));
    }
    let rgb = reader.decode().map_err(|e| codec_err(path, e))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `[3×H×W]` (or `[1×3×H×W]`) tensor with values in `[0, 1]`.
/// The format follows the extension: `.png` (8-bit RGB) or `.ppm` (ASCII).
pub fn image_write<T: Real>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = match *image.shape() {
        [3, h, w] | [1, 3, h, w] => (h, w),
        _ => {
            return Err(codec_err(path, format!("expected 3×H×W pixels, got {:?}", image.shape())));
        }
    };
    let data = image.data();
    let mut rgb = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in rgb.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = data[(c * h + y as usize) * w + x as usize].as_f64();
            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => rgb.save_with_format(path, image::ImageFormat::Png).map_err(|e| codec_err(path, e)),
        "ppm" => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let out = std::io::BufWriter::new(file);
            PnmEncoder::new(out)
                .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Ascii))
                .write_image(rgb.as_raw(), w as u32, h as u32, image::ExtendedColorType::Rgb8)
                .map_err(|e| codec_err(path, e))
        }
        other => Err(codec_err(path, format!("unsupported output extension `{other}`"))),
    }
}

/// Center-crops to a square and resamples to `side×side` by area averaging:
/// every output pixel is the coverage-weighted mean of the source pixels
/// under its footprint.
pub fn resize_square(image: &Tensor<f32>, side: usize) -> Result<Tensor<f32>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::dim("resize_square", format!("expected 3×H×W, got {:?}", image.shape())));
    };
    let crop = h.min(w);
    let (y0, x0) = ((h - crop) / 2, (w - crop) / 2);
    let weights = box_weights(crop, side);
    let src = image.data();
    let mut out = vec![0.0f32; 3 * side * side];
    for c in 0..3 {
        for (oy, wy) in weights.iter().enumerate() {
            for (ox, wx) in weights.iter().enumerate() {
                let mut acc = 0.0f64;
                for &(sy, fy) in wy {
                    for &(sx, fx) in wx {
                        acc += fy * fx * f64::from(src[(c * h + y0 + sy) * w + x0 + sx]);
                    }
                }
                out[(c * side + oy) * side + ox] = acc as f32;
            }
        }
    }
    Tensor::new(vec![3, side, side], out)
}

// For each output index, the (source index, normalized weight) pairs of the
// source cells its interval overlaps.
fn box_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut cells = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    cells.push((s, overlap / scale));
                }
                s += 1;
            }
            cells
        })
        .collect()
}

//! Transformation galleries: column 0 holds originals, column j the
//! translation of each original to domain j-1.

use std::path::Path;

use ndarray::IxDyn;

use super::DiagnosticsError;
use crate::imgproc::{png_bytes, ImageU8};
use crate::scalar::Scalar;
use crate::translator::{translate, TranslationModel};
use crate::Arr;

const PAD: usize = 2;

/// Render a (samples x (1+K)) tile grid to a PNG file. Inputs are stored
/// dataset images; outputs are de-normalized back to 8-bit.
pub fn render_transformation_grid<S: Scalar>(
    model: &TranslationModel<S>,
    samples: &[ImageU8],
    out_path: &Path,
) -> Result<ImageU8, DiagnosticsError> {
    if samples.is_empty() {
        return Err(DiagnosticsError::Config("no samples for the grid".into()));
    }
    let k = model.num_domains();
    let (h, w) = (samples[0].h, samples[0].w);

    // batch the originals once per target domain
    let n = samples.len();
    let mut x = Arr::<S>::zeros(IxDyn(&[n, 3, h, w]));
    for (bi, img) in samples.iter().enumerate() {
        for ch in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    x[[bi, ch, y, xx]] = S::of(img.get(y, xx, ch) as f64 / 255.0 * 2.0 - 1.0);
                }
            }
        }
    }

    let cols = k + 1;
    let grid_w = cols * w + (cols + 1) * PAD;
    let grid_h = n * h + (n + 1) * PAD;
    let mut canvas = ImageU8 { h: grid_h, w: grid_w, c: 3, data: vec![255; grid_h * grid_w * 3] };

    let mut blit = |tile: &ImageU8, row: usize, col: usize| {
        let oy = PAD + row * (h + PAD);
        let ox = PAD + col * (w + PAD);
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..3 {
                    canvas.data[((oy + y) * grid_w + ox + xx) * 3 + ch] = tile.get(y, xx, ch);
                }
            }
        }
    };

    for (row, img) in samples.iter().enumerate() {
        blit(img, row, 0);
    }
    for domain in 0..k {
        let out = translate(model, &x, &vec![domain; n])?;
        for row in 0..n {
            let mut tile = ImageU8::new(h, w, 3);
            for ch in 0..3 {
                for y in 0..h {
                    for xx in 0..w {
                        let v = (out[[row, ch, y, xx]].as_f64() + 1.0) / 2.0;
                        tile.data[(y * w + xx) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
            blit(&tile, row, domain + 1);
        }
    }

    std::fs::write(out_path, png_bytes(&canvas)).map_err(|e| DiagnosticsError::Io(e.to_string()))?;
    Ok(canvas)
}

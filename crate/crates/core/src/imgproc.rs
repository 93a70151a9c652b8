//! Small image toolbox: HWC buffers in `u8` (storage) and `f32` ([0,1]
//! working domain), color-space helpers, resizing and smooth noise.

use rand::Rng;

/// 8-bit HWC image; the canonical storage form (PNG-exact).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<u8>,
}

/// Float HWC image with values nominally in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f32>,
}

impl ImageU8 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        ImageU8 { h, w, c, data: vec![0; h * w * c] }
    }

    pub fn to_f32(&self) -> ImageF32 {
        ImageF32 {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> u8 {
        self.data[(y * self.w + x) * self.c + ch]
    }
}

impl ImageF32 {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        ImageF32 { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut img = Self::new(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    img.data[(y * w + x) * c + ch] = f(y, x, ch);
                }
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: f32) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Quantize to 8-bit storage (round-to-nearest, clamped).
    pub fn to_u8(&self) -> ImageU8 {
        ImageU8 {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    /// Bilinear sample with edge clamping; coordinates in pixel space.
    pub fn sample_bilinear(&self, y: f32, x: f32, ch: usize) -> f32 {
        let yc = y.clamp(0.0, (self.h - 1) as f32);
        let xc = x.clamp(0.0, (self.w - 1) as f32);
        let y0 = yc.floor() as usize;
        let x0 = xc.floor() as usize;
        let y1 = (y0 + 1).min(self.h - 1);
        let x1 = (x0 + 1).min(self.w - 1);
        let fy = yc - y0 as f32;
        let fx = xc - x0 as f32;
        let a = self.get(y0, x0, ch);
        let b = self.get(y0, x1, ch);
        let c = self.get(y1, x0, ch);
        let d = self.get(y1, x1, ch);
        a * (1.0 - fy) * (1.0 - fx) + b * (1.0 - fy) * fx + c * fy * (1.0 - fx) + d * fy * fx
    }
}

/// Bilinear resize (align-corners-false convention).
pub fn resize_bilinear(src: &ImageF32, oh: usize, ow: usize) -> ImageF32 {
    let sy = src.h as f32 / oh as f32;
    let sx = src.w as f32 / ow as f32;
    ImageF32::from_fn(oh, ow, src.c, |y, x, ch| {
        let yy = (y as f32 + 0.5) * sy - 0.5;
        let xx = (x as f32 + 0.5) * sx - 0.5;
        src.sample_bilinear(yy, xx, ch)
    })
}

/// Nearest-neighbor resize.
pub fn resize_nearest(src: &ImageF32, oh: usize, ow: usize) -> ImageF32 {
    let sy = src.h as f32 / oh as f32;
    let sx = src.w as f32 / ow as f32;
    ImageF32::from_fn(oh, ow, src.c, |y, x, ch| {
        let yy = ((y as f32 + 0.5) * sy).floor().clamp(0.0, (src.h - 1) as f32) as usize;
        let xx = ((x as f32 + 0.5) * sx).floor().clamp(0.0, (src.w - 1) as f32) as usize;
        src.get(yy, xx, ch)
    })
}

/// Average-pool downscale.
pub fn box_downscale(src: &ImageF32, oh: usize, ow: usize) -> ImageF32 {
    ImageF32::from_fn(oh, ow, src.c, |y, x, ch| {
        let y0 = y * src.h / oh;
        let y1 = ((y + 1) * src.h).div_ceil(oh).clamp(y0 + 1, src.h);
        let x0 = x * src.w / ow;
        let x1 = ((x + 1) * src.w).div_ceil(ow).clamp(x0 + 1, src.w);
        let mut acc = 0.0;
        for yy in y0..y1 {
            for xx in x0..x1 {
                acc += src.get(yy, xx, ch);
            }
        }
        acc / ((y1 - y0) * (x1 - x0)) as f32
    })
}

pub fn crop(src: &ImageF32, top: usize, left: usize, h: usize, w: usize) -> ImageF32 {
    assert!(top + h <= src.h && left + w <= src.w, "crop out of bounds");
    ImageF32::from_fn(h, w, src.c, |y, x, ch| src.get(top + y, left + x, ch))
}

pub fn hflip(src: &ImageF32) -> ImageF32 {
    ImageF32::from_fn(src.h, src.w, src.c, |y, x, ch| src.get(y, src.w - 1 - x, ch))
}

/// (r,g,b) in [0,1] -> (h,s,v) with h in [0,1).
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let v = max;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / d).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    (h.rem_euclid(1.0), s, v)
}

/// (h,s,v) with h in [0,1) -> (r,g,b) in [0,1].
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Map all pixels of an RGB image through an HSV transform.
pub fn map_hsv(img: &ImageF32, f: impl Fn(f32, f32, f32) -> (f32, f32, f32)) -> ImageF32 {
    assert_eq!(img.c, 3, "map_hsv expects RGB");
    let mut out = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            let (h, s, v) = rgb_to_hsv(img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2));
            let (h2, s2, v2) = f(h, s, v);
            let (r, g, b) = hsv_to_rgb(h2, s2.clamp(0.0, 1.0), v2.clamp(0.0, 1.0));
            out.set(y, x, 0, r);
            out.set(y, x, 1, g);
            out.set(y, x, 2, b);
        }
    }
    out
}

/// ITU-R 601 luma.
pub fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Smooth value noise in [0,1]: random coarse grids, bilinearly upsampled
/// and octave-summed. Deterministic under the supplied RNG.
pub fn value_noise(rng: &mut impl Rng, h: usize, w: usize, base_cells: usize, octaves: usize) -> ImageF32 {
    let mut acc = ImageF32::new(h, w, 1);
    let mut amp = 1.0f32;
    let mut total = 0.0f32;
    let mut cells = base_cells.max(2);
    for _ in 0..octaves {
        let grid = ImageF32::from_fn(cells, cells, 1, |_, _, _| rng.gen_range(0.0..1.0));
        let up = resize_bilinear(&grid, h, w);
        for i in 0..acc.data.len() {
            acc.data[i] += amp * up.data[i];
        }
        total += amp;
        amp *= 0.5;
        cells *= 2;
    }
    for v in &mut acc.data {
        *v /= total;
    }
    acc
}

/// Separable box blur applied `passes` times (approximates a Gaussian).
pub fn box_blur(src: &ImageF32, radius: usize, passes: usize) -> ImageF32 {
    let mut img = src.clone();
    if radius == 0 {
        return img;
    }
    for _ in 0..passes {
        let horiz = ImageF32::from_fn(img.h, img.w, img.c, |y, x, ch| {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius).min(img.w - 1);
            let mut acc = 0.0;
            for xx in x0..=x1 {
                acc += img.get(y, xx, ch);
            }
            acc / (x1 - x0 + 1) as f32
        });
        img = ImageF32::from_fn(horiz.h, horiz.w, horiz.c, |y, x, ch| {
            let y0 = y.saturating_sub(radius);
            let y1 = (y + radius).min(horiz.h - 1);
            let mut acc = 0.0;
            for yy in y0..=y1 {
                acc += horiz.get(yy, x, ch);
            }
            acc / (y1 - y0 + 1) as f32
        });
    }
    img
}

/// Encode to PNG bytes (deterministic for fixed input).
pub fn png_bytes(img: &ImageU8) -> Vec<u8> {
    use image::codecs::png::PngEncoder;
    use image::ImageEncoder;
    let color = match img.c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        other => panic!("unsupported channel count {other}"),
    };
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&img.data, img.w as u32, img.h as u32, color)
        .expect("png encode");
    out
}

/// Decode PNG bytes into an [`ImageU8`] (greyscale stays 1-channel).
pub fn png_decode(bytes: &[u8]) -> Result<ImageU8, String> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(match dynimg {
        image::DynamicImage::ImageLuma8(g) => ImageU8 {
            h: g.height() as usize,
            w: g.width() as usize,
            c: 1,
            data: g.into_raw(),
        },
        other => {
            let rgb = other.to_rgb8();
            ImageU8 {
                h: rgb.height() as usize,
                w: rgb.width() as usize,
                c: 3,
                data: rgb.into_raw(),
            }
        }
    })
}

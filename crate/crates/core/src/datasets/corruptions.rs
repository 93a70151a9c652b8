//! The ten image corruptions used as bias modes for the corrupted CIFAR-10
//! benchmark. Each corruption is deterministic given (image, severity,
//! seed), preserves shape and clips to [0,1].

use rand::Rng;

use super::DatasetError;
use crate::imgproc::{box_blur, box_downscale, resize_nearest, value_noise, ImageF32};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Corruption {
    Snow,
    Frost,
    Fog,
    Brightness,
    Contrast,
    Spatter,
    ElasticTransform,
    Jpeg,
    Pixelate,
    Saturate,
}

/// Class-to-corruption assignment order: class k gets `CORRUPTION_ORDER[k]`.
pub const CORRUPTION_ORDER: [Corruption; 10] = [
    Corruption::Snow,
    Corruption::Frost,
    Corruption::Fog,
    Corruption::Brightness,
    Corruption::Contrast,
    Corruption::Spatter,
    Corruption::ElasticTransform,
    Corruption::Jpeg,
    Corruption::Pixelate,
    Corruption::Saturate,
];

impl std::fmt::Display for Corruption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Corruption::Snow => "snow",
            Corruption::Frost => "frost",
            Corruption::Fog => "fog",
            Corruption::Brightness => "brightness",
            Corruption::Contrast => "contrast",
            Corruption::Spatter => "spatter",
            Corruption::ElasticTransform => "elastic_transform",
            Corruption::Jpeg => "jpeg",
            Corruption::Pixelate => "pixelate",
            Corruption::Saturate => "saturate",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Corruption {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "snow" => Corruption::Snow,
            "frost" => Corruption::Frost,
            "fog" => Corruption::Fog,
            "brightness" => Corruption::Brightness,
            "contrast" => Corruption::Contrast,
            "spatter" => Corruption::Spatter,
            "elastic_transform" => Corruption::ElasticTransform,
            "jpeg" => Corruption::Jpeg,
            "pixelate" => Corruption::Pixelate,
            "saturate" => Corruption::Saturate,
            other => return Err(DatasetError::UnknownCorruption(other.to_string())),
        })
    }
}

fn sev_idx(severity: u8) -> usize {
    (severity.clamp(1, 5) - 1) as usize
}

/// Additive brightness offsets per severity (applied to HSV value).
pub const BRIGHTNESS_OFFSETS: [f32; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

/// Apply one corruption at the given severity. `seed` fixes the stochastic
/// pattern (snowflakes, noise fields, droplets) per sample.
pub fn apply_corruption(
    image: &ImageF32,
    corruption: Corruption,
    severity: u8,
    seed: u64,
) -> Result<ImageF32, DatasetError> {
    if !(1..=5).contains(&severity) {
        return Err(DatasetError::Config(format!("severity {severity} outside 1..=5")));
    }
    if image.c != 3 {
        return Err(DatasetError::Config("corruptions expect RGB input".into()));
    }
    let s = sev_idx(severity);
    let mut rng = stream(seed, &[crate::rng::tag::CORRUPTION, severity as u64]);
    let mut out = match corruption {
        Corruption::Snow => snow(image, s, &mut rng),
        Corruption::Frost => frost(image, s, &mut rng),
        Corruption::Fog => fog(image, s, &mut rng),
        Corruption::Brightness => {
            crate::imgproc::map_hsv(image, |h, sat, v| (h, sat, v + BRIGHTNESS_OFFSETS[s]))
        }
        Corruption::Contrast => contrast(image, s),
        Corruption::Spatter => spatter(image, s, &mut rng),
        Corruption::ElasticTransform => elastic(image, s, &mut rng),
        Corruption::Jpeg => jpeg(image, s),
        Corruption::Pixelate => pixelate(image, s),
        Corruption::Saturate => saturate(image, s),
    };
    out.clamp01();
    Ok(out)
}

fn snow(img: &ImageF32, s: usize, rng: &mut impl Rng) -> ImageF32 {
    let flake_count = [12, 18, 26, 36, 48][s];
    let opacity = [0.5, 0.6, 0.7, 0.8, 0.9][s];
    let angle = rng.gen_range(-0.9..0.9f32);
    let len = [3.0, 4.0, 5.0, 6.0, 7.0][s];
    let mut layer = ImageF32::new(img.h, img.w, 1);
    for _ in 0..flake_count {
        let fy = rng.gen_range(0.0..img.h as f32);
        let fx = rng.gen_range(0.0..img.w as f32);
        let steps = len as usize * 2;
        for t in 0..steps {
            let tt = t as f32 / 2.0;
            let y = fy + tt * angle.cos();
            let x = fx + tt * angle.sin();
            let (yi, xi) = (y.round() as isize, x.round() as isize);
            if yi >= 0 && (yi as usize) < img.h && xi >= 0 && (xi as usize) < img.w {
                let fade = 1.0 - tt / len;
                let v = layer.get(yi as usize, xi as usize, 0).max(fade.max(0.0));
                layer.set(yi as usize, xi as usize, 0, v);
            }
        }
    }
    let layer = box_blur(&layer, 1, 1);
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        let w = layer.get(y, x, 0) * opacity;
        img.get(y, x, ch).max(w)
    })
}

fn frost(img: &ImageF32, s: usize, rng: &mut impl Rng) -> ImageF32 {
    let keep = [0.85, 0.78, 0.7, 0.62, 0.55][s];
    let frost_w = [0.25, 0.35, 0.45, 0.55, 0.65][s];
    let noise = value_noise(rng, img.h, img.w, 4, 3);
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        // crystal pattern: sharpened noise ridges
        let n = noise.get(y, x, 0);
        let crystal = ((n - 0.45).abs() * 4.0).min(1.0);
        let ice = 1.0 - crystal; // bright along ridges
        img.get(y, x, ch) * keep + ice * frost_w
    })
}

fn fog(img: &ImageF32, s: usize, rng: &mut impl Rng) -> ImageF32 {
    let t = [0.3, 0.4, 0.5, 0.6, 0.75][s];
    let noise = value_noise(rng, img.h, img.w, 2, 4);
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        let f = noise.get(y, x, 0);
        img.get(y, x, ch) * (1.0 - t * f) + t * f
    })
}

fn contrast(img: &ImageF32, s: usize) -> ImageF32 {
    let c = [0.4, 0.3, 0.2, 0.1, 0.05][s];
    let mut means = [0.0f32; 3];
    for px in img.data.chunks_exact(3) {
        for ch in 0..3 {
            means[ch] += px[ch];
        }
    }
    let n = (img.h * img.w) as f32;
    for m in &mut means {
        *m /= n;
    }
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        (img.get(y, x, ch) - means[ch]) * c + means[ch]
    })
}

fn spatter(img: &ImageF32, s: usize, rng: &mut impl Rng) -> ImageF32 {
    let threshold = [0.78, 0.72, 0.66, 0.62, 0.58][s];
    let noise = value_noise(rng, img.h, img.w, 6, 2);
    let muddy = s >= 3;
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        let n = noise.get(y, x, 0);
        let v = img.get(y, x, ch);
        if n > threshold {
            if muddy {
                // mud blotches: dark brown occlusion
                [0.35, 0.25, 0.12][ch]
            } else {
                // water droplets: lighten with a blue cast
                (v + 0.25 + if ch == 2 { 0.1 } else { 0.0 }).min(1.0)
            }
        } else {
            v
        }
    })
}

fn elastic(img: &ImageF32, s: usize, rng: &mut impl Rng) -> ImageF32 {
    let alpha = [1.0, 1.6, 2.2, 2.8, 3.5][s];
    let mut dy = ImageF32::from_fn(img.h, img.w, 1, |_, _, _| rng.gen_range(-1.0..1.0f32));
    let mut dx = ImageF32::from_fn(img.h, img.w, 1, |_, _, _| rng.gen_range(-1.0..1.0f32));
    dy = box_blur(&dy, 2, 2);
    dx = box_blur(&dx, 2, 2);
    ImageF32::from_fn(img.h, img.w, 3, |y, x, ch| {
        let sy = y as f32 + alpha * dy.get(y, x, 0);
        let sx = x as f32 + alpha * dx.get(y, x, 0);
        img.sample_bilinear(sy, sx, ch)
    })
}

/// JPEG quality per severity.
pub const JPEG_QUALITY: [u8; 5] = [25, 18, 15, 10, 7];

fn jpeg(img: &ImageF32, s: usize) -> ImageF32 {
    jpeg_round_trip(img, JPEG_QUALITY[s])
}

/// Encode/decode through the JPEG codec at the given quality.
pub fn jpeg_round_trip(img: &ImageF32, quality: u8) -> ImageF32 {
    use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
    let u8img = img.to_u8();
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode(
            &u8img.data,
            u8img.w as u32,
            u8img.h as u32,
            image::ExtendedColorType::Rgb8,
        )
        .expect("jpeg encode");
    let decoder = JpegDecoder::new(std::io::Cursor::new(&bytes)).expect("jpeg decode");
    let dynimg = image::DynamicImage::from_decoder(decoder).expect("jpeg decode");
    let rgb = dynimg.to_rgb8();
    crate::imgproc::ImageU8 {
        h: rgb.height() as usize,
        w: rgb.width() as usize,
        c: 3,
        data: rgb.into_raw(),
    }
    .to_f32()
}

fn pixelate(img: &ImageF32, s: usize) -> ImageF32 {
    let factor = [0.6, 0.5, 0.4, 0.3, 0.25][s];
    let dh = ((img.h as f32 * factor).round() as usize).max(1);
    let dw = ((img.w as f32 * factor).round() as usize).max(1);
    let small = box_downscale(img, dh, dw);
    resize_nearest(&small, img.h, img.w)
}

fn saturate(img: &ImageF32, s: usize) -> ImageF32 {
    let (mul, add) = [(0.3, 0.0), (0.1, 0.0), (2.0, 0.0), (5.0, 0.1), (20.0, 0.2)][s];
    crate::imgproc::map_hsv(img, |h, sat, v| (h, sat * mul + add, v))
}

//! Dependency-free PNG line chart for probe curves: two labeled series,
//! axes with tick labels in an embedded 5x7 pixel font.

use super::probe::ProbeCurve;
use crate::imgproc::{png_bytes, ImageU8};

const W: usize = 720;
const H: usize = 480;
const ML: usize = 70; // left margin
const MR: usize = 20;
const MT: usize = 30;
const MB: usize = 60;

const BIAS_COLOR: [u8; 3] = [31, 119, 180];
const SIGNAL_COLOR: [u8; 3] = [214, 39, 40];
const AXIS_COLOR: [u8; 3] = [40, 40, 40];
const GRID_COLOR: [u8; 3] = [225, 225, 225];

/// 5x7 glyphs, one byte per row, low 5 bits used (MSB = leftmost pixel).
fn glyph(c: char) -> Option<[u8; 7]> {
    Some(match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        'a' => [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F],
        'b' => [0x10, 0x10, 0x1E, 0x11, 0x11, 0x11, 0x1E],
        'e' => [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E],
        'g' => [0x00, 0x0F, 0x11, 0x0F, 0x01, 0x11, 0x0E],
        'i' => [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E],
        'l' => [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'n' => [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11],
        'o' => [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E],
        'r' => [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10],
        's' => [0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E],
        't' => [0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06],
        ' ' => [0; 7],
        _ => return None,
    })
}

fn draw_text(img: &mut ImageU8, x: usize, y: usize, text: &str, color: [u8; 3]) {
    let mut cx = x;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (ry, bits) in rows.iter().enumerate() {
                for rx in 0..5 {
                    if bits & (0x10 >> rx) != 0 {
                        put(img, cx + rx, y + ry, color);
                    }
                }
            }
        }
        cx += 6;
    }
}

fn put(img: &mut ImageU8, x: usize, y: usize, color: [u8; 3]) {
    if x < img.w && y < img.h {
        let idx = (y * img.w + x) * 3;
        img.data[idx..idx + 3].copy_from_slice(&color);
    }
}

fn draw_line(img: &mut ImageU8, x0: f64, y0: f64, x1: f64, y1: f64, color: [u8; 3]) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        // 2px thick
        for (dx, dy) in [(0i64, 0i64), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 {
                put(img, px as usize, py as usize, color);
            }
        }
    }
}

/// Render the probe curve as a PNG: bias and signal loss vs iteration.
pub fn render_probe_chart(curve: &ProbeCurve) -> Vec<u8> {
    let mut img = ImageU8 { h: H, w: W, c: 3, data: vec![255; H * W * 3] };
    let plot_w = (W - ML - MR) as f64;
    let plot_h = (H - MT - MB) as f64;

    let (x_min, x_max) = match (curve.points.first(), curve.points.last()) {
        (Some(a), Some(b)) if b.iteration > a.iteration => (a.iteration as f64, b.iteration as f64),
        (Some(a), _) => (a.iteration as f64, a.iteration as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let mut y_max = curve
        .points
        .iter()
        .map(|p| p.bias_loss.max(p.signal_loss))
        .fold(1e-9f64, f64::max);
    y_max *= 1.1;

    let to_px = |it: f64, loss: f64| -> (f64, f64) {
        let x = ML as f64 + (it - x_min) / (x_max - x_min).max(1e-9) * plot_w;
        let y = MT as f64 + (1.0 - loss / y_max) * plot_h;
        (x, y)
    };

    // horizontal gridlines + y tick labels
    for tick in 0..=4 {
        let loss = y_max * tick as f64 / 4.0;
        let (_, y) = to_px(x_min, loss);
        for x in ML..W - MR {
            put(&mut img, x, y.round() as usize, GRID_COLOR);
        }
        draw_text(&mut img, 8, y.round() as usize - 3, &format!("{loss:>5.2}"), AXIS_COLOR);
    }
    // x tick labels
    for tick in 0..=4 {
        let it = x_min + (x_max - x_min) * tick as f64 / 4.0;
        let (x, _) = to_px(it, 0.0);
        draw_text(
            &mut img,
            (x.round() as usize).saturating_sub(12),
            H - MB + 10,
            &format!("{}", it.round() as usize),
            AXIS_COLOR,
        );
    }
    // axes
    for x in ML..W - MR {
        put(&mut img, x, H - MB, AXIS_COLOR);
    }
    for y in MT..=H - MB {
        put(&mut img, ML, y, AXIS_COLOR);
    }

    for (series, color) in [(0usize, BIAS_COLOR), (1, SIGNAL_COLOR)] {
        let pts: Vec<(f64, f64)> = curve
            .points
            .iter()
            .map(|p| to_px(p.iteration as f64, if series == 0 { p.bias_loss } else { p.signal_loss }))
            .collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0].0, w[0].1, w[1].0, w[1].1, color);
        }
    }

    // legend + axis labels
    for x in 0..18 {
        put(&mut img, ML + 10 + x, MT + 6, BIAS_COLOR);
        put(&mut img, ML + 10 + x, MT + 7, BIAS_COLOR);
        put(&mut img, ML + 10 + x, MT + 20, SIGNAL_COLOR);
        put(&mut img, ML + 10 + x, MT + 21, SIGNAL_COLOR);
    }
    draw_text(&mut img, ML + 34, MT + 3, "bias loss", AXIS_COLOR);
    draw_text(&mut img, ML + 34, MT + 17, "signal loss", AXIS_COLOR);
    draw_text(&mut img, W / 2 - 25, H - 22, "iteration", AXIS_COLOR);

    png_bytes(&img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::probe::ProbePoint;

    #[test]
    fn chart_rendering_is_pure() {
        let curve = ProbeCurve {
            points: (0..10)
                .map(|i| ProbePoint {
                    iteration: i * 250,
                    bias_loss: 2.3 * (-(i as f64) / 4.0).exp(),
                    signal_loss: 2.2 + 0.05 * i as f64,
                })
                .collect(),
        };
        let a = render_probe_chart(&curve);
        let b = render_probe_chart(&curve);
        assert_eq!(a, b);
        assert!(a.len() > 1000, "png should not be trivially small");
    }

    #[test]
    fn empty_curve_still_renders() {
        let png = render_probe_chart(&ProbeCurve::default());
        assert!(crate::imgproc::png_decode(&png).is_ok());
    }
}

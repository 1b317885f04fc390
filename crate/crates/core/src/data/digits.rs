//! Procedural handwritten-style digits.
//!
//! Each class is a fixed set of strokes in the unit square. A sample applies a
//! random scale, rotation, shear, translation, per-vertex jitter and stroke
//! width, rasterizes the strokes with a one-pixel soft edge, adds pixel noise
//! and quantizes to bytes (so values are exact multiples of 1/255 and survive
//! an IDX round trip unchanged).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f64 / steps as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn glyph(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.28, 0.4, 0.0, 2.0 * PI, 16)],
        1 => vec![vec![(0.32, 0.28), (0.55, 0.1), (0.55, 0.9)]],
        2 => {
            let mut s = arc(0.5, 0.32, 0.28, 0.22, PI, 2.0 * PI + 0.3, 8);
            s.extend([(0.2, 0.9), (0.82, 0.9)]);
            vec![s]
        }
        3 => vec![
            arc(0.48, 0.3, 0.27, 0.2, -PI * 0.9, PI * 0.5, 8),
            arc(0.48, 0.7, 0.3, 0.2, -PI * 0.5, PI * 0.9, 8),
        ],
        4 => vec![
            vec![(0.62, 0.9), (0.62, 0.1), (0.15, 0.64), (0.85, 0.64)],
        ],
        5 => {
            let mut s = vec![(0.8, 0.1), (0.27, 0.1), (0.24, 0.46)];
            s.extend(arc(0.48, 0.66, 0.3, 0.24, -PI * 0.75, PI * 0.8, 8));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.72, 0.1), (0.4, 0.3)];
            s.extend(arc(0.5, 0.66, 0.26, 0.24, PI * 1.05, 3.0 * PI, 12));
            vec![s]
        }
        7 => vec![vec![(0.15, 0.1), (0.85, 0.1), (0.42, 0.9)], vec![(0.35, 0.5), (0.7, 0.5)]],
        8 => vec![
            arc(0.5, 0.28, 0.2, 0.18, 0.0, 2.0 * PI, 12),
            arc(0.5, 0.69, 0.25, 0.21, 0.0, 2.0 * PI, 12),
        ],
        9 => {
            let mut s = arc(0.5, 0.33, 0.24, 0.22, 0.0, 2.0 * PI, 12);
            s.extend([(0.7, 0.5), (0.62, 0.9)]);
            vec![s]
        }
        _ => unreachable!("digit classes are 0..10"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn render_one(digit: usize, side: usize, rng: &mut impl Rng) -> Vec<u8> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let scale = rng.gen_range(0.7..1.0) * (side as f64 - 3.0);
    let angle = rng.gen_range(-0.25..0.25);
    let shear = rng.gen_range(-0.3..0.3);
    let shift = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let width = rng.gen_range(0.5..1.1);
    let jitter = 0.04;
    let (c, s) = (f64::cos(angle), f64::sin(angle));
    let half = side as f64 / 2.0;

    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|(x, y)| {
                    let x = x - 0.5 + jitter * unit.sample(rng);
                    let y = y - 0.5 + jitter * unit.sample(rng);
                    let x = x + shear * y;
                    let (rx, ry) = (c * x - s * y, s * x + c * y);
                    (half + scale * rx + shift.0, half + scale * ry + shift.1)
                })
                .collect()
        })
        .collect();

    let noise = 0.12;
    let mut out = Vec::with_capacity(side * side);
    for py in 0..side {
        for px in 0..side {
            let p = (px as f64 + 0.5, py as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|st| st.windows(2).map(|w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let ink = (width + 0.5 - d).clamp(0.0, 1.0);
            let v = (ink + noise * unit.sample(rng)).clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// `n` digit images of `side × side` pixels, labels cycling 0..9, shape
/// `n × 1 × side × side`. Fully determined by `seed`.
pub fn render_digits(n: usize, side: usize, seed: u64, split: Split) -> Result<Dataset> {
    if n == 0 || side < 8 {
        return Err(Error::Config(
            "digit rendering needs n ≥ 1 and side ≥ 8".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[0xd161]);
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        data.extend(render_one(digit, side, &mut rng).into_iter().map(|b| f64::from(b) / 255.0));
        labels.push(digit);
    }
    Dataset::new(
        Tensor::from_parts(vec![n, 1, side, side], data),
        labels,
        10,
        split,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_quantized() {
        let a = render_digits(20, 16, 3, Split::Train).unwrap();
        let b = render_digits(20, 16, 3, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.inputs().shape(), &[20, 1, 16, 16]);
        assert_eq!(a.label_histogram(), vec![2; 10]);
        for v in a.inputs().data() {
            let q = v * 255.0;
            assert_eq!(q, q.round());
        }
    }

    #[test]
    fn glyphs_leave_ink() {
        let a = render_digits(10, 16, 0, Split::Train).unwrap();
        for i in 0..10 {
            let img = &a.inputs().data()[i * 256..(i + 1) * 256];
            let bright = img.iter().filter(|&&v| v > 0.6).count();
            assert!(bright >= 12, "digit {i} has only {bright} bright pixels");
        }
    }
}

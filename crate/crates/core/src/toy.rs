//! Procedural data for desk-scale experiments: textured source images for
//! the distortion corpus, a small shape-classification set for the
//! auxiliary stream, and proxy quality scores derived from the distortion
//! level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::forge::{synthesize_records, SynthConfig, SynthSource};
use crate::hash::mix64;
use crate::image::RgbImage;
use crate::model::{ClassifierSample, QualitySample, StreamConfig};
use crate::Result;

fn clamp_u8(v: f64) -> u8 {
    crate::image::quantize_sample(v)
}

/// Oriented gratings per source.
const GRATINGS: usize = 8;

/// A `side x side` image with a color gradient, oriented gratings and
/// hard-edged shapes; fully determined by `seed`. No pixel noise, so the
/// mildest noise classes stay distinguishable from the source.
pub fn toy_source(seed: u64, side: usize) -> Result<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x736f_7572_6365));
    let s = side as f64;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.random_range(40.0..200.0));
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let gratings: Vec<(f64, f64, f64, [f64; 3], f64)> = (0..GRATINGS)
        .map(|_| {
            // log-uniform frequency in cycles per pixel, amplitude falling with it
            let cycles = (rng.random_range(0.03f64.ln()..0.45f64.ln())).exp();
            let f = cycles * std::f64::consts::TAU;
            let a: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let amp = rng.random_range(3.0..12.0) / (cycles / 0.03).powf(0.25);
            let w: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..1.0));
            (f * a.cos(), f * a.sin(), amp, w, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    #[derive(Clone, Copy)]
    enum Shape {
        Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
        Disk { cx: f64, cy: f64, r: f64 },
    }
    let shapes: Vec<(Shape, [f64; 3])> = (0..rng.random_range(3..=6))
        .map(|_| {
            let color = std::array::from_fn(|_| rng.random_range(0.0..255.0));
            let shape = if rng.random_bool(0.5) {
                let (x0, y0) = (rng.random_range(0.0..s * 0.8), rng.random_range(0.0..s * 0.8));
                let (w, h) = (rng.random_range(s * 0.1..s * 0.5), rng.random_range(s * 0.1..s * 0.5));
                Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h }
            } else {
                Shape::Disk { cx: rng.random_range(0.0..s), cy: rng.random_range(0.0..s), r: rng.random_range(s * 0.06..s * 0.25) }
            };
            (shape, color)
        })
        .collect();
    RgbImage::from_fn(side, side, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let t = ((xf - s / 2.0) * theta.cos() + (yf - s / 2.0) * theta.sin()) / s + 0.5;
        let mut px: [f64; 3] = std::array::from_fn(|c| c0[c] + (c1[c] - c0[c]) * t);
        for &(fx, fy, amp, w, phase) in &gratings {
            let v = amp * (fx * xf + fy * yf + phase).sin();
            px.iter_mut().zip(w).for_each(|(p, w)| *p += v * w);
        }
        for &(shape, color) in &shapes {
            let inside = match shape {
                Shape::Rect { x0, y0, x1, y1 } => xf >= x0 && xf < x1 && yf >= y0 && yf < y1,
                Shape::Disk { cx, cy, r } => (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r,
            };
            if inside {
                px = color;
            }
        }
        std::array::from_fn(|c| clamp_u8(px[c]))
    })
}

/// `count` sources with ids `{prefix}{index:04}`.
pub fn toy_sources(prefix: &str, count: usize, side: usize, seed: u64) -> Result<Vec<SynthSource>> {
    (0..count)
        .map(|i| {
            let image = toy_source(mix64(seed.wrapping_add(i as u64)), side)?;
            Ok(SynthSource { id: format!("{prefix}{i:04}"), image })
        })
        .collect()
}

/// Number of classes in [`shape_set`].
pub const SHAPE_CLASSES: usize = 4;

/// Object-classification images: a disk, a square, horizontal bars or
/// vertical bars over a random smooth background. Labels cycle through the
/// classes so every class is equally represented.
pub fn shape_set(count: usize, side: usize, seed: u64) -> Result<Vec<(RgbImage, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x7368_6170_6573));
    let s = side as f64;
    (0..count)
        .map(|i| {
            let label = i % SHAPE_CLASSES;
            let bg0: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..220.0));
            let bg1: [f64; 3] = std::array::from_fn(|_| rng.random_range(30.0..220.0));
            let fg: [f64; 3] = std::array::from_fn(|c| (bg0[c] + 128.0 + rng.random_range(-40.0..40.0)) % 256.0);
            let (cx, cy) = (rng.random_range(s * 0.3..s * 0.7), rng.random_range(s * 0.3..s * 0.7));
            let r = rng.random_range(s * 0.15..s * 0.3);
            let period = rng.random_range(4.0..10.0);
            let img = RgbImage::from_fn(side, side, |x, y| {
                let (xf, yf) = (x as f64, y as f64);
                let inside = match label {
                    0 => (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r,
                    1 => (xf - cx).abs() <= r && (yf - cy).abs() <= r,
                    2 => (yf / period).floor() as i64 % 2 == 0,
                    _ => (xf / period).floor() as i64 % 2 == 0,
                };
                let t = (xf + yf) / (2.0 * s);
                std::array::from_fn(|c| clamp_u8(if inside { fg[c] } else { bg0[c] + (bg1[c] - bg0[c]) * t }))
            })?;
            Ok((img, label))
        })
        .collect()
}

/// Proxy quality for a distortion level: `(5 - level) / 4`, so level 1 maps
/// to 1 and level 5 to 0; a pristine image (level 0) maps to 1.25.
pub fn proxy_score(level: u8) -> f64 {
    (5.0 - f64::from(level)) / 4.0
}

/// Distorts every source into all classes and preprocesses the results for
/// classification with `stream`.
pub fn classification_samples(
    sources: &[SynthSource],
    synth: &SynthConfig,
    stream: &StreamConfig,
    seed: u64,
) -> Result<Vec<ClassifierSample>> {
    synthesize_records(sources, synth, seed)
        .iter()
        .map(|(rec, img)| ClassifierSample::from_image(img, rec.class_index, stream))
        .collect()
}

/// Distorts every source into all classes and labels each whole image
/// with its proxy score.
pub fn quality_samples(sources: &[SynthSource], synth: &SynthConfig, seed: u64) -> Vec<(QualitySample, u8)> {
    synthesize_records(sources, synth, seed)
        .iter()
        .map(|(rec, img)| (QualitySample::from_image(img, proxy_score(rec.level)), rec.level))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_deterministic_and_distinct() {
        let a = toy_source(1, 32).unwrap();
        assert_eq!(a, toy_source(1, 32).unwrap());
        assert_ne!(a, toy_source(2, 32).unwrap());
        let ids: Vec<String> = toy_sources("s", 3, 32, 0).unwrap().into_iter().map(|s| s.id).collect();
        assert_eq!(ids, ["s0000", "s0001", "s0002"]);
    }

    #[test]
    fn shape_labels_balanced() {
        let set = shape_set(8, 32, 3).unwrap();
        let labels: Vec<usize> = set.iter().map(|(_, l)| *l).collect();
        assert_eq!(labels, [0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn proxy_scores() {
        assert_eq!(proxy_score(1), 1.0);
        assert_eq!(proxy_score(5), 0.0);
        assert_eq!(proxy_score(0), 1.25);
        assert!(proxy_score(2) > proxy_score(3));
    }
}

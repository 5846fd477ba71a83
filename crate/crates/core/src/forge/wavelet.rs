//! Separable lifting wavelets with dead-zone quantization, approximating
//! JPEG2000-style coding artifacts.

use serde::{Deserialize, Serialize};

use super::jpeg::{rgb_to_ycbcr, ycbcr_to_rgb};
use crate::image::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletKind {
    /// CDF 9/7 biorthogonal (lifting form).
    Cdf97,
    Haar,
}

const CDF_A: f64 = -1.586_134_342_059_924;
const CDF_B: f64 = -0.052_980_118_572_961;
const CDF_C: f64 = 0.882_911_075_530_934;
const CDF_D: f64 = 0.443_506_852_043_971;
const CDF_K: f64 = 1.149_604_398_860_241;

#[inline]
fn mirror(i: isize, n: usize) -> usize {
    super::blur::reflect(i, n)
}

/// `x[i] += coef * (x[i-1] + x[i+1])` for every `i` of the given parity.
fn lift(x: &mut [f64], parity: usize, coef: f64) {
    let n = x.len();
    let mut i = parity;
    while i < n {
        let l = x[mirror(i as isize - 1, n)];
        let r = x[mirror(i as isize + 1, n)];
        x[i] += coef * (l + r);
        i += 2;
    }
}

fn forward_1d(x: &mut [f64], kind: WaveletKind, scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    match kind {
        WaveletKind::Cdf97 => {
            lift(x, 1, CDF_A);
            lift(x, 0, CDF_B);
            lift(x, 1, CDF_C);
            lift(x, 0, CDF_D);
            for (i, v) in x.iter_mut().enumerate() {
                *v *= if i % 2 == 0 { CDF_K } else { 1.0 / CDF_K };
            }
        }
        WaveletKind::Haar => {
            haar_lift(x, false);
        }
    }
    deinterleave(x, scratch);
}

fn inverse_1d(x: &mut [f64], kind: WaveletKind, scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    interleave(x, scratch);
    match kind {
        WaveletKind::Cdf97 => {
            for (i, v) in x.iter_mut().enumerate() {
                *v *= if i % 2 == 0 { 1.0 / CDF_K } else { CDF_K };
            }
            lift(x, 0, -CDF_D);
            lift(x, 1, -CDF_C);
            lift(x, 0, -CDF_B);
            lift(x, 1, -CDF_A);
        }
        WaveletKind::Haar => haar_lift(x, true),
    }
}

/// Orthonormal Haar in lifting form; an unpaired trailing even sample is
/// scaled like a lowpass coefficient.
fn haar_lift(x: &mut [f64], inverse: bool) {
    let n = x.len();
    let s2 = std::f64::consts::SQRT_2;
    let mut i = 0;
    while i + 1 < n {
        // the 2x2 butterfly is its own inverse
        let (a, b) = (x[i], x[i + 1]);
        x[i] = (a + b) / s2;
        x[i + 1] = (a - b) / s2;
        i += 2;
    }
    if n % 2 == 1 {
        x[n - 1] = if inverse { x[n - 1] / s2 } else { x[n - 1] * s2 };
    }
}

/// Evens first (lowpass), then odds (highpass).
fn deinterleave(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    let lows = n.div_ceil(2);
    scratch.clear();
    scratch.resize(n, 0.0);
    for i in 0..n {
        let dst = if i % 2 == 0 { i / 2 } else { lows + i / 2 };
        scratch[dst] = x[i];
    }
    x.copy_from_slice(scratch);
}

fn interleave(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    let lows = n.div_ceil(2);
    scratch.clear();
    scratch.resize(n, 0.0);
    for i in 0..n {
        let src = if i % 2 == 0 { i / 2 } else { lows + i / 2 };
        scratch[i] = x[src];
    }
    x.copy_from_slice(scratch);
}

/// Multi-level 2D forward transform in Mallat layout: each level transforms
/// the current top-left lowpass block.
pub fn dwt2_forward(plane: &mut [f64], w: usize, h: usize, levels: usize, kind: WaveletKind) {
    let (mut cw, mut ch) = (w, h);
    let mut scratch = Vec::new();
    let mut line = Vec::new();
    for _ in 0..levels {
        if cw < 2 && ch < 2 {
            break;
        }
        for y in 0..ch {
            forward_1d(&mut plane[y * w..y * w + cw], kind, &mut scratch);
        }
        for x in 0..cw {
            line.clear();
            line.extend((0..ch).map(|y| plane[y * w + x]));
            forward_1d(&mut line, kind, &mut scratch);
            for (y, v) in line.iter().enumerate() {
                plane[y * w + x] = *v;
            }
        }
        cw = cw.div_ceil(2);
        ch = ch.div_ceil(2);
    }
}

pub fn dwt2_inverse(plane: &mut [f64], w: usize, h: usize, levels: usize, kind: WaveletKind) {
    let mut sizes = Vec::new();
    let (mut cw, mut ch) = (w, h);
    for _ in 0..levels {
        if cw < 2 && ch < 2 {
            break;
        }
        sizes.push((cw, ch));
        cw = cw.div_ceil(2);
        ch = ch.div_ceil(2);
    }
    let mut scratch = Vec::new();
    let mut line = Vec::new();
    for &(cw, ch) in sizes.iter().rev() {
        for x in 0..cw {
            line.clear();
            line.extend((0..ch).map(|y| plane[y * w + x]));
            inverse_1d(&mut line, kind, &mut scratch);
            for (y, v) in line.iter().enumerate() {
                plane[y * w + x] = *v;
            }
        }
        for y in 0..ch {
            inverse_1d(&mut plane[y * w..y * w + cw], kind, &mut scratch);
        }
    }
}

/// Dead-zone uniform quantizer: `|c| < step` maps to zero, other bins
/// reconstruct at their midpoint.
pub(crate) fn dead_zone(c: f64, step: f64) -> f64 {
    let q = (c.abs() / step).floor();
    if q == 0.0 {
        0.0
    } else {
        c.signum() * (q + 0.5) * step
    }
}

pub(crate) fn jp2k_like(img: &RgbImage, step: f64, kind: WaveletKind, levels: usize) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut ycc = rgb_to_ycbcr(img);
    for plane in ycc.iter_mut() {
        plane.iter_mut().for_each(|v| *v -= 128.0);
        dwt2_forward(plane, w, h, levels, kind);
        plane.iter_mut().for_each(|v| *v = dead_zone(*v, step));
        dwt2_inverse(plane, w, h, levels, kind);
        plane.iter_mut().for_each(|v| *v += 128.0);
    }
    ycbcr_to_rgb(w, h, &ycc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 97) as f64 - 40.0 + (i as f64 * 0.3).sin() * 9.0).collect()
    }

    #[test]
    fn perfect_reconstruction_any_size() {
        for kind in [WaveletKind::Cdf97, WaveletKind::Haar] {
            for (w, h) in [(8, 8), (13, 9), (17, 31), (2, 3)] {
                let orig = signal(w * h);
                let mut p = orig.clone();
                dwt2_forward(&mut p, w, h, 3, kind);
                dwt2_inverse(&mut p, w, h, 3, kind);
                for (a, b) in orig.iter().zip(&p) {
                    assert!((a - b).abs() < 1e-9, "{kind:?} {w}x{h}");
                }
            }
        }
    }

    #[test]
    fn cdf97_lowpass_has_sqrt2_dc_gain() {
        let mut x = vec![1.0; 16];
        let mut s = Vec::new();
        forward_1d(&mut x, WaveletKind::Cdf97, &mut s);
        for v in &x[..8] {
            assert!((v - std::f64::consts::SQRT_2).abs() < 1e-6, "{v}");
        }
        for v in &x[8..] {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn dead_zone_behaviour() {
        assert_eq!(dead_zone(3.9, 4.0), 0.0);
        assert_eq!(dead_zone(-3.9, 4.0), 0.0);
        assert_eq!(dead_zone(4.0, 4.0), 6.0);
        assert_eq!(dead_zone(-9.0, 4.0), -10.0);
    }
}

//! Severity statistics used to check that distortion strength grows with
//! level.

use std::collections::BTreeSet;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::noise::{fft2, signed_freq};
use crate::image::RgbImage;

/// Hann-windowed spectral energy above half the Nyquist frequency
/// (`max(|fx|, |fy|) > 0.25` cycles/pixel), summed over channels.
pub fn high_freq_energy(img: &RgbImage) -> f64 {
    let (w, h) = (img.width(), img.height());
    let hann = |i: usize, n: usize| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    for plane in img.to_planes() {
        let mean = plane.iter().sum::<f64>() / plane.len() as f64;
        let mut buf: Vec<Complex<f64>> = plane
            .iter()
            .enumerate()
            .map(|(i, v)| Complex::new((v - mean) * hann(i % w, w) * hann(i / w, h), 0.0))
            .collect();
        fft2(&mut planner, &mut buf, w, h, false);
        for y in 0..h {
            let fy = signed_freq(y, h).abs();
            for x in 0..w {
                let fx = signed_freq(x, w).abs();
                if fx.max(fy) > 0.25 {
                    total += buf[y * w + x].norm_sqr();
                }
            }
        }
    }
    total / (w * h) as f64
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    assert_eq!(a.pixels().len(), b.pixels().len(), "images must share dimensions");
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    sum / a.pixels().len() as f64
}

/// Per-channel sample variance of `out - input`.
pub fn diff_variance(out: &RgbImage, input: &RgbImage) -> [f64; 3] {
    let n = (out.width() * out.height()) as f64;
    let mut res = [0.0; 3];
    for (c, r) in res.iter_mut().enumerate() {
        let diffs: Vec<f64> = out
            .pixels()
            .iter()
            .zip(input.pixels())
            .skip(c)
            .step_by(3)
            .map(|(&o, &i)| f64::from(o) - f64::from(i))
            .collect();
        let mean = diffs.iter().sum::<f64>() / n;
        *r = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    }
    res
}

/// Largest per-channel count of distinct sample values.
pub fn distinct_levels(img: &RgbImage) -> usize {
    (0..3)
        .map(|c| img.pixels().iter().skip(c).step_by(3).copied().collect::<BTreeSet<u8>>().len())
        .max()
        .unwrap_or(0)
}

/// Fits `P(f) ~ f^-alpha` to the radially averaged power spectrum of a
/// `w x h` field over `f_lo <= f <= f_hi` (cycles/pixel); returns `alpha`.
pub fn spectral_slope(field: &[f64], w: usize, h: usize, f_lo: f64, f_hi: f64) -> f64 {
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex<f64>> = field.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut planner, &mut buf, w, h, false);
    let nbins = 32;
    let mut sums = vec![0.0; nbins];
    let mut counts = vec![0usize; nbins];
    for y in 0..h {
        let fy = signed_freq(y, h);
        for x in 0..w {
            let fx = signed_freq(x, w);
            let f = (fx * fx + fy * fy).sqrt();
            if f < f_lo || f > f_hi {
                continue;
            }
            // log-spaced annuli
            let t = (f / f_lo).ln() / (f_hi / f_lo).ln();
            let b = ((t * nbins as f64) as usize).min(nbins - 1);
            sums[b] += buf[y * w + x].norm_sqr();
            counts[b] += 1;
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for b in 0..nbins {
        if counts[b] > 0 {
            let fc = f_lo * (f_hi / f_lo).powf((b as f64 + 0.5) / nbins as f64);
            xs.push(fc.ln());
            ys.push((sums[b] / counts[b] as f64).ln());
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    -sxy / sxx
}

/// Per-channel `out - input` as a planar field.
pub fn diff_plane(out: &RgbImage, input: &RgbImage, channel: usize) -> Vec<f64> {
    out.pixels()
        .iter()
        .zip(input.pixels())
        .skip(channel)
        .step_by(3)
        .map(|(&o, &i)| f64::from(o) - f64::from(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::super::noise::pink_field;
    use super::*;

    #[test]
    fn slope_of_pink_field_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = pink_field(128, 128, &mut rng);
        let a = spectral_slope(&f, 128, 128, 0.02, 0.35);
        assert!((0.8..=1.2).contains(&a), "alpha {a}");
    }

    #[test]
    fn slope_of_white_field_near_zero() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f: Vec<f64> = (0..128 * 128).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = spectral_slope(&f, 128, 128, 0.02, 0.35);
        assert!(a.abs() < 0.2, "alpha {a}");
    }

    #[test]
    fn flat_image_has_no_high_frequency() {
        let img = RgbImage::filled(32, 32, [40, 50, 60]).unwrap();
        assert!(high_freq_energy(&img) < 1e-18);
        assert_eq!(distinct_levels(&img), 1);
    }
}

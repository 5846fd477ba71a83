use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::image::RgbImage;

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every sample.
pub(crate) fn white_noise<R: Rng>(img: &RgbImage, sigma: f64, rng: &mut R) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut planes = img.to_planes();
    for plane in planes.iter_mut() {
        for v in plane.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    RgbImage::from_planes(w, h, &planes).expect("dimensions preserved")
}

/// Zero-mean noise field with power spectrum proportional to `1/f`,
/// rescaled to unit sample standard deviation.
pub fn pink_field<R: Rng>(w: usize, h: usize, rng: &mut R) -> Vec<f64> {
    let n = w * h;
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    fft2(&mut planner, &mut buf, w, h, false);
    for y in 0..h {
        let fy = signed_freq(y, h);
        for x in 0..w {
            let fx = signed_freq(x, w);
            let f = (fx * fx + fy * fy).sqrt();
            let gain = if f == 0.0 { 0.0 } else { f.powf(-0.5) };
            buf[y * w + x] *= gain;
        }
    }
    fft2(&mut planner, &mut buf, w, h, true);
    let mut field: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = field.iter().sum::<f64>() / n as f64;
    let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    field.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    field
}

pub(crate) fn pink_noise<R: Rng>(img: &RgbImage, sigma: f64, rng: &mut R) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut planes = img.to_planes();
    for plane in planes.iter_mut() {
        let field = pink_field(w, h, rng);
        for (v, n) in plane.iter_mut().zip(&field) {
            *v += sigma * n;
        }
    }
    RgbImage::from_planes(w, h, &planes).expect("dimensions preserved")
}

/// Frequency in cycles per sample for DFT bin `k` of an `n`-point transform.
pub(crate) fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// In-place 2D DFT over a row-major `w x h` buffer. The inverse is scaled
/// by `1 / (w h)`.
pub(crate) fn fft2(planner: &mut FftPlanner<f64>, buf: &mut [Complex<f64>], w: usize, h: usize, inverse: bool) {
    let row_fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    if inverse {
        let s = 1.0 / (w * h) as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn pink_field_unit_variance_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = pink_field(40, 24, &mut rng);
        let mean = f.iter().sum::<f64>() / f.len() as f64;
        let var = f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fft_round_trip() {
        let mut planner = FftPlanner::new();
        let orig: Vec<Complex<f64>> = (0..35).map(|i| Complex::new(i as f64 * 0.3 - 2.0, 0.0)).collect();
        let mut buf = orig.clone();
        fft2(&mut planner, &mut buf, 7, 5, false);
        fft2(&mut planner, &mut buf, 7, 5, true);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

use crate::image::RgbImage;

/// Mirror index into `0..n` without repeating the edge sample
/// (`d c b | a b c d | c b a`), valid for any offset.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable convolution of one plane with a symmetric kernel, reflect-padded.
pub(crate) fn convolve_separable(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                acc += wt * row[reflect(x as isize + k as isize - r, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, &wt) in kernel.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - r, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    out
}

pub(crate) fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let kernel = gaussian_kernel(sigma);
    let planes = img.to_planes().map(|p| convolve_separable(&p, w, h, &kernel));
    RgbImage::from_planes(w, h, &planes).expect("dimensions preserved")
}

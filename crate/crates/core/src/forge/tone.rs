use crate::image::{quantize_sample, RgbImage};

/// Sigmoid contrast remap `1 / (1 + exp(-g (x - 0.5)))` on `[0, 1]`
/// intensities, rescaled so that black and white stay fixed.
pub(crate) fn contrast_stretch(img: &RgbImage, gain: f64) -> RgbImage {
    let sig = |x: f64| 1.0 / (1.0 + (-gain * (x - 0.5)).exp());
    let lo = sig(0.0);
    let hi = sig(1.0);
    let lut: Vec<u8> = (0..=255u32)
        .map(|v| {
            let y = (sig(f64::from(v) / 255.0) - lo) / (hi - lo);
            quantize_sample(y * 255.0)
        })
        .collect();
    map_samples(img, |v| lut[v as usize])
}

/// Multiplicative exposure change with clipping.
pub(crate) fn exposure(img: &RgbImage, gain: f64) -> RgbImage {
    map_samples(img, |v| quantize_sample(f64::from(v) * gain))
}

fn map_samples(img: &RgbImage, f: impl Fn(u8) -> u8) -> RgbImage {
    let pixels = img.pixels().iter().map(|&v| f(v)).collect();
    RgbImage::new(img.width(), img.height(), pixels).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn over_exposure_saturates_white() {
        let img = RgbImage::filled(8, 8, [255, 255, 255]).unwrap();
        for g in [1.5, 2.5] {
            assert!(exposure(&img, g).pixels().iter().all(|&v| v == 255));
        }
    }

    #[test]
    fn under_exposure_scales() {
        let img = RgbImage::filled(8, 8, [100, 200, 0]).unwrap();
        let out = exposure(&img, 0.4);
        assert_eq!(&out.pixels()[..3], &[40, 80, 0]);
    }

    #[test]
    fn contrast_fixes_endpoints_and_midpoint() {
        let img = RgbImage::from_fn(8, 8, |x, _| [0, 255, if x < 4 { 127 } else { 128 }]).unwrap();
        let out = contrast_stretch(&img, 8.0);
        assert_eq!(out.get(0, 0, 0), 0);
        assert_eq!(out.get(0, 0, 1), 255);
        assert!((i16::from(out.get(0, 0, 2)) - 127).abs() <= 1);
    }

    #[test]
    fn contrast_steepens_with_gain() {
        let img = RgbImage::filled(8, 8, [160, 96, 128]).unwrap();
        let a = contrast_stretch(&img, 3.0);
        let b = contrast_stretch(&img, 18.0);
        assert!(b.get(0, 0, 0) > a.get(0, 0, 0));
        assert!(b.get(0, 0, 1) < a.get(0, 0, 1));
    }
}

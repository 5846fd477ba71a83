use crate::image::RgbImage;

/// Quantizes each channel to `levels` evenly spaced values with
/// Floyd-Steinberg error diffusion (raster order).
pub(crate) fn quantize_dither(img: &RgbImage, levels: u32) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let step = 255.0 / f64::from(levels - 1);
    let mut planes = img.to_planes();
    for plane in planes.iter_mut() {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let old = plane[i];
                let new = ((old / step).round() * step).clamp(0.0, 255.0);
                plane[i] = new;
                let err = old - new;
                if x + 1 < w {
                    plane[i + 1] += err * 7.0 / 16.0;
                }
                if y + 1 < h {
                    if x > 0 {
                        plane[i + w - 1] += err * 3.0 / 16.0;
                    }
                    plane[i + w] += err * 5.0 / 16.0;
                    if x + 1 < w {
                        plane[i + w + 1] += err * 1.0 / 16.0;
                    }
                }
            }
        }
    }
    RgbImage::from_planes(w, h, &planes).expect("dimensions preserved")
}

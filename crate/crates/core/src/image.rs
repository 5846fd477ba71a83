//! 8-bit RGB images: validation, PPM/PNG I/O, resampling and tensor
//! conversion.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::Tensor;
use crate::Scalar;

/// Smallest side accepted anywhere in the pipeline.
pub const MIN_SIDE: usize = 8;

/// Decoded 3-channel 8-bit image, row-major interleaved RGB.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::domain(format!(
                "image {width}x{height} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "pixel buffer has {} samples, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, pixels)
    }

    /// Builds an image by evaluating `f(x, y) -> [r, g, b]` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Splits into three planar `f64` channels.
    pub fn to_planes(&self) -> [Vec<f64>; 3] {
        let n = self.width * self.height;
        let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planes[c][i] = f64::from(px[c]);
            }
        }
        planes
    }

    /// Inverse of [`RgbImage::to_planes`]: rounds to nearest and clips to
    /// `[0, 255]`.
    pub fn from_planes(width: usize, height: usize, planes: &[Vec<f64>; 3]) -> Result<Self> {
        let n = width * height;
        let mut pixels = Vec::with_capacity(n * 3);
        for i in 0..n {
            for plane in planes {
                pixels.push(quantize_sample(plane[i]));
            }
        }
        Self::new(width, height, pixels)
    }

    /// Decodes a binary PPM (P6). PNG is accepted only when `allow_png` is set.
    pub fn load(path: &Path, allow_png: bool) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, allow_png).map_err(|detail| Error::Decode { path: path.to_path_buf(), detail })
    }

    pub fn decode(bytes: &[u8], allow_png: bool) -> std::result::Result<Self, String> {
        let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
        match format {
            image::ImageFormat::Pnm => {}
            image::ImageFormat::Png if allow_png => {}
            other => return Err(format!("unsupported image format {other:?}")),
        }
        let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| e.to_string())?;
        let rgb = decoded.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Self::new(w, h, rgb.into_raw()).map_err(|e| e.to_string())
    }

    /// Binary PPM encoding with a fixed `P6\n<w> <h>\n255\n` header.
    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::shape("pixel buffer does not match dimensions"))?;
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Numeric(format!("png encode: {e}")))?;
        Ok(out.into_inner())
    }

    /// Writes PPM atomically.
    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode_ppm())
    }

    /// Bilinear resampling (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<Self> {
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                for c in 0..3 {
                    let top = f64::from(self.get(x0, y0, c)) * (1.0 - wx) + f64::from(self.get(x1, y0, c)) * wx;
                    let bot = f64::from(self.get(x0, y1, c)) * (1.0 - wx) + f64::from(self.get(x1, y1, c)) * wx;
                    pixels.push(quantize_sample(top * (1.0 - wy) + bot * wy));
                }
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn center_crop(&self, width: usize, height: usize) -> Result<Self> {
        if width > self.width || height > self.height {
            return Err(Error::domain(format!(
                "crop {width}x{height} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - width) / 2;
        let y0 = (self.height - height) / 2;
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + width * 3]);
        }
        Self::new(width, height, pixels)
    }

    /// Resize so the image becomes `scale`x`scale`, then center-crop to
    /// `crop`x`crop`.
    pub fn scale_and_crop(&self, scale: usize, crop: usize) -> Result<Self> {
        self.resize(scale, scale)?.center_crop(crop, crop)
    }

    /// Converts into a `[3, H, W]` tensor with samples mapped to `[-0.5, 0.5]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![T::zero(); 3 * w * h];
        let scale = T::lit(1.0 / 255.0);
        let half = T::lit(0.5);
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = T::from_u8(px[c]).unwrap_or_default() * scale - half;
            }
        }
        Tensor::from_vec(vec![3, h, w], data).expect("shape matches")
    }
}

#[inline]
pub(crate) fn quantize_sample(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_mismatched() {
        assert!(RgbImage::new(7, 8, vec![0; 7 * 8 * 3]).is_err());
        assert!(RgbImage::new(8, 8, vec![0; 10]).is_err());
        assert!(RgbImage::new(8, 8, vec![0; 192]).is_ok());
    }

    #[test]
    fn ppm_round_trip() {
        let img = RgbImage::from_fn(9, 11, |x, y| [x as u8, y as u8, (x * y) as u8]).unwrap();
        let bytes = img.encode_ppm();
        let back = RgbImage::decode(&bytes, false).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn png_gated_by_flag() {
        let img = RgbImage::filled(8, 8, [1, 2, 3]).unwrap();
        let png = img.encode_png().unwrap();
        assert!(RgbImage::decode(&png, false).is_err());
        assert_eq!(RgbImage::decode(&png, true).unwrap(), img);
    }

    #[test]
    fn crop_takes_center() {
        let img = RgbImage::from_fn(10, 10, |x, y| [x as u8, y as u8, 0]).unwrap();
        let c = img.center_crop(8, 8).unwrap();
        assert_eq!(c.get(0, 0, 0), 1);
        assert_eq!(c.get(0, 0, 1), 1);
        assert_eq!(c.get(7, 7, 0), 8);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = RgbImage::filled(20, 12, [10, 200, 77]).unwrap();
        let r = img.resize(13, 9).unwrap();
        assert!(r.pixels().chunks(3).all(|p| p == [10, 200, 77]));
    }
}

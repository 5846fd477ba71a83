//! Block-DCT quantize/dequantize round trip with JPEG's color transform and
//! quantization tables. No entropy coding.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::image::RgbImage;

const LUMA_TABLE: [f64; 64] = [
    16., 11., 10., 16., 24., 40., 51., 61., //
    12., 12., 14., 19., 26., 58., 60., 55., //
    14., 13., 16., 24., 40., 57., 69., 56., //
    14., 17., 22., 29., 51., 87., 80., 62., //
    18., 22., 37., 56., 68., 109., 103., 77., //
    24., 35., 55., 64., 81., 104., 113., 92., //
    49., 64., 78., 87., 103., 121., 120., 101., //
    72., 92., 95., 98., 112., 100., 103., 99.,
];

const CHROMA_TABLE: [f64; 64] = [
    17., 18., 24., 47., 99., 99., 99., 99., //
    18., 21., 26., 66., 99., 99., 99., 99., //
    24., 26., 56., 99., 99., 99., 99., 99., //
    47., 66., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99., //
    99., 99., 99., 99., 99., 99., 99., 99.,
];

/// JFIF full-range RGB to YCbCr, planar.
pub(crate) fn rgb_to_ycbcr(img: &RgbImage) -> [Vec<f64>; 3] {
    let [r, g, b] = img.to_planes();
    let n = r.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        out[0][i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
        out[1][i] = -0.168_736 * r[i] - 0.331_264 * g[i] + 0.5 * b[i] + 128.0;
        out[2][i] = 0.5 * r[i] - 0.418_688 * g[i] - 0.081_312 * b[i] + 128.0;
    }
    out
}

pub(crate) fn ycbcr_to_rgb(w: usize, h: usize, ycc: &[Vec<f64>; 3]) -> RgbImage {
    let n = w * h;
    let mut rgb = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (y, cb, cr) = (ycc[0][i], ycc[1][i] - 128.0, ycc[2][i] - 128.0);
        rgb[0][i] = y + 1.402 * cr;
        rgb[1][i] = y - 0.344_136 * cb - 0.714_136 * cr;
        rgb[2][i] = y + 1.772 * cb;
    }
    RgbImage::from_planes(w, h, &rgb).expect("dimensions preserved")
}

/// Orthonormal 8-point DCT-II basis, `basis[k][n]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * ((2 * n + 1) as f64 * k as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

fn dct8x8(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    let mut out = [0.0; 64];
    // rows
    for y in 0..8 {
        for k in 0..8 {
            let mut acc = 0.0;
            for n in 0..8 {
                acc += if inverse { b[n][k] * block[y * 8 + n] } else { b[k][n] * block[y * 8 + n] };
            }
            tmp[y * 8 + k] = acc;
        }
    }
    // columns
    for x in 0..8 {
        for k in 0..8 {
            let mut acc = 0.0;
            for n in 0..8 {
                acc += if inverse { b[n][k] * tmp[n * 8 + x] } else { b[k][n] * tmp[n * 8 + x] };
            }
            out[k * 8 + x] = acc;
        }
    }
    out
}

fn quantize_plane(plane: &mut [f64], w: usize, h: usize, table: &[f64; 64], multiplier: f64) {
    let q: Vec<f64> = table.iter().map(|t| (t * multiplier).max(1.0)).collect();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    // edge replication for partial blocks
                    let sy = (by + y).min(h - 1);
                    let sx = (bx + x).min(w - 1);
                    block[y * 8 + x] = plane[sy * w + sx] - 128.0;
                }
            }
            let mut coef = dct8x8(&block, false);
            for (c, step) in coef.iter_mut().zip(&q) {
                *c = (*c / step).round() * step;
            }
            let rec = dct8x8(&coef, true);
            for y in 0..8.min(h - by) {
                for x in 0..8.min(w - bx) {
                    plane[(by + y) * w + bx + x] = rec[y * 8 + x] + 128.0;
                }
            }
        }
    }
}

pub(crate) fn jpeg_round_trip(img: &RgbImage, multiplier: f64) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let mut ycc = rgb_to_ycbcr(img);
    quantize_plane(&mut ycc[0], w, h, &LUMA_TABLE, multiplier);
    quantize_plane(&mut ycc[1], w, h, &CHROMA_TABLE, multiplier);
    quantize_plane(&mut ycc[2], w, h, &CHROMA_TABLE, multiplier);
    ycbcr_to_rgb(w, h, &ycc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_is_orthonormal() {
        let mut block = [0.0; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 37) % 23) as f64 - 11.0;
        }
        let c = dct8x8(&block, false);
        let back = dct8x8(&c, true);
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let e0: f64 = block.iter().map(|v| v * v).sum();
        let e1: f64 = c.iter().map(|v| v * v).sum();
        assert!((e0 - e1).abs() < 1e-8);
    }

    #[test]
    fn color_round_trip_close() {
        let img = RgbImage::from_fn(8, 8, |x, y| [(x * 30) as u8, (y * 30) as u8, 128]).unwrap();
        let back = ycbcr_to_rgb(8, 8, &rgb_to_ycbcr(&img));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((i16::from(*a) - i16::from(*b)).abs() <= 1);
        }
    }

    #[test]
    fn flat_image_survives_quantization() {
        let img = RgbImage::filled(13, 9, [90, 90, 90]).unwrap();
        let out = jpeg_round_trip(&img, 16.0);
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((i16::from(*a) - i16::from(*b)).abs() <= 16);
        }
        assert_eq!(out.width(), 13);
        assert_eq!(out.height(), 9);
    }
}

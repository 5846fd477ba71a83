//! Bilinear pooling of two activation maps over shared spatial locations,
//! followed by signed square-root and L2 normalization, with the exact
//! backward pass through all three steps.

use crate::error::{Error, Result};
use crate::nn::gemm::{gemm_nn, gemm_nt, gemm_tn};
use crate::nn::Tensor;
use crate::Scalar;

/// Floor applied to `|b|` inside the signed square-root derivative
/// `1 / (2 sqrt|b|)`.
pub const SQRT_GRAD_EPS: f64 = 1e-8;

/// Activations at `locations` spatial positions with `channels` features
/// each, stored row-major as `locations x channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMap<T> {
    locations: usize,
    channels: usize,
    values: Vec<T>,
}

impl<T: Scalar> ActivationMap<T> {
    pub fn new(locations: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if locations == 0 || channels == 0 {
            return Err(Error::domain("activation map needs at least one location and one channel"));
        }
        if values.len() != locations * channels {
            return Err(Error::shape(format!(
                "activation map {locations}x{channels} given {} values",
                values.len()
            )));
        }
        Ok(Self { locations, channels, values })
    }

    /// From one `[C, H, W]` feature map (or a `[C, H, W]` slice of a batch).
    pub fn from_chw(channels: usize, h: usize, w: usize, chw: &[T]) -> Result<Self> {
        let l = h * w;
        if chw.len() != channels * l {
            return Err(Error::shape(format!("expected {channels}x{h}x{w} values, got {}", chw.len())));
        }
        let mut values = vec![T::zero(); l * channels];
        for c in 0..channels {
            for (i, &v) in chw[c * l..(c + 1) * l].iter().enumerate() {
                values[i * channels + c] = v;
            }
        }
        Self::new(l, channels, values)
    }

    /// Back to channel-major `[C, L]` order.
    pub fn to_chw(&self) -> Vec<T> {
        let (l, d) = (self.locations, self.channels);
        let mut out = vec![T::zero(); l * d];
        for i in 0..l {
            for c in 0..d {
                out[c * l + i] = self.values[i * d + c];
            }
        }
        out
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Raw bilinear matrix and its normalized, flattened form.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearFeature<T> {
    /// `d1 x d2`.
    pub raw: Tensor<T>,
    /// `d1 * d2` values, unit L2 norm unless `degenerate`.
    pub normalized: Vec<T>,
    /// L2 norm of the signed square-root vector.
    pub norm: T,
    /// Set when `raw` is all zeros; `normalized` is then all zeros.
    pub degenerate: bool,
}

/// `B = Y1^T Y2`, shape `d1 x d2`.
pub fn bilinear_pool<T: Scalar>(y1: &ActivationMap<T>, y2: &ActivationMap<T>) -> Result<Tensor<T>> {
    if y1.locations != y2.locations {
        return Err(Error::domain(format!(
            "bilinear pooling needs equal location counts, got {} and {}",
            y1.locations, y2.locations
        )));
    }
    let (l, d1, d2) = (y1.locations, y1.channels, y2.channels);
    let mut b = vec![T::zero(); d1 * d2];
    gemm_tn(d1, l, d2, &y1.values, &y2.values, &mut b);
    Tensor::from_vec(vec![d1, d2], b)
}

/// Elementwise `sign(b) sqrt|b|`, then division by the L2 norm.
pub fn signed_sqrt_l2<T: Scalar>(raw: Tensor<T>) -> Result<BilinearFeature<T>> {
    if !raw.all_finite() {
        return Err(Error::Numeric("bilinear matrix has non-finite entries".into()));
    }
    let z: Vec<T> = raw.data().iter().map(|&b| b.signum() * b.abs().sqrt()).collect();
    // signum(0) is 1 for floats; sqrt(0) keeps the entry at zero anyway
    let norm = z.iter().map(|&v| v * v).sum::<T>().sqrt();
    if norm == T::zero() {
        let n = z.len();
        return Ok(BilinearFeature { raw, normalized: vec![T::zero(); n], norm, degenerate: true });
    }
    let normalized = z.into_iter().map(|v| v / norm).collect();
    Ok(BilinearFeature { raw, normalized, norm, degenerate: false })
}

/// Pool and normalize in one call.
pub fn bilinear_feature<T: Scalar>(y1: &ActivationMap<T>, y2: &ActivationMap<T>) -> Result<BilinearFeature<T>> {
    signed_sqrt_l2(bilinear_pool(y1, y2)?)
}

/// Gradient of the loss with respect to the raw matrix `B`, given the
/// gradient with respect to the normalized vector.
pub fn normalize_backward<T: Scalar>(feature: &BilinearFeature<T>, upstream: &[T]) -> Result<Vec<T>> {
    if upstream.len() != feature.normalized.len() {
        return Err(Error::shape(format!(
            "upstream gradient has {} entries, feature has {}",
            upstream.len(),
            feature.normalized.len()
        )));
    }
    if feature.degenerate {
        return Ok(vec![T::zero(); upstream.len()]);
    }
    let bt = &feature.normalized;
    let proj: T = bt.iter().zip(upstream).map(|(&a, &g)| a * g).sum();
    let inv_norm = T::one() / feature.norm;
    let eps = T::lit(SQRT_GRAD_EPS);
    let two = T::lit(2.0);
    Ok(feature
        .raw
        .data()
        .iter()
        .zip(bt)
        .zip(upstream)
        .map(|((&b, &btv), &g)| {
            // (I - bt bt^T) / ||z|| projects, then d sqrt|b| / db
            let dz = (g - btv * proj) * inv_norm;
            dz / (two * b.abs().max(eps).sqrt())
        })
        .collect())
}

/// Backward through normalization and pooling:
/// `dY1 = Y2 (dB)^T`, `dY2 = Y1 dB`.
///
/// Returns zero gradients when the forward feature was degenerate.
pub fn bilinear_backward<T: Scalar>(
    y1: &ActivationMap<T>,
    y2: &ActivationMap<T>,
    feature: &BilinearFeature<T>,
    upstream: &[T],
) -> Result<(ActivationMap<T>, ActivationMap<T>)> {
    let (l, d1, d2) = (y1.locations, y1.channels, y2.channels);
    if y2.locations != l || feature.raw.shape() != [d1, d2] {
        return Err(Error::shape("bilinear backward inputs do not match the forward call"));
    }
    let db = normalize_backward(feature, upstream)?;
    let mut g1 = vec![T::zero(); l * d1];
    gemm_nt(l, d2, d1, &y2.values, &db, &mut g1);
    let mut g2 = vec![T::zero(); l * d2];
    gemm_nn(l, d1, d2, &y1.values, &db, &mut g2);
    Ok((ActivationMap::new(l, d1, g1)?, ActivationMap::new(l, d2, g2)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(l: usize, d: usize, v: &[f64]) -> ActivationMap<f64> {
        ActivationMap::new(l, d, v.to_vec()).unwrap()
    }

    #[test]
    fn single_location_outer_product() {
        let v = [1.0, -2.0, 3.0];
        let b = bilinear_pool(&map(1, 3, &v), &map(1, 3, &v)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(b.data()[i * 3 + j], v[i] * v[j]);
            }
        }
    }

    #[test]
    fn hand_product() {
        let y1 = map(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let y2 = map(2, 2, &[2.0, 3.0, 4.0, 5.0]);
        let b = bilinear_pool(&y1, &y2).unwrap();
        assert_eq!(b.data(), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn output_dims_and_mismatch() {
        let y1 = map(6, 4, &[0.5; 24]);
        let y2 = map(6, 5, &[0.25; 30]);
        assert_eq!(bilinear_pool(&y1, &y2).unwrap().shape(), &[4, 5]);
        assert!(bilinear_pool(&y1, &map(5, 5, &[0.0; 25])).is_err());
    }

    #[test]
    fn normalization_cases() {
        let f = signed_sqrt_l2(Tensor::from_vec(vec![4], vec![1.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(f.normalized, vec![1.0, 0.0, 0.0, 0.0]);
        let f = signed_sqrt_l2(Tensor::from_vec(vec![2], vec![4.0, -9.0]).unwrap()).unwrap();
        let r13 = 13f64.sqrt();
        assert!((f.normalized[0] - 2.0 / r13).abs() < 1e-15);
        assert!((f.normalized[1] + 3.0 / r13).abs() < 1e-15);
        assert!((f.normalized[0] - 0.5547).abs() < 1e-4 && (f.normalized[1] + 0.8321).abs() < 1e-4);
        let f = signed_sqrt_l2(Tensor::<f64>::zeros(vec![3])).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.normalized, vec![0.0; 3]);
    }

    #[test]
    fn chw_round_trip() {
        let chw: Vec<f64> = (0..24).map(f64::from).collect();
        let m = ActivationMap::from_chw(4, 2, 3, &chw).unwrap();
        assert_eq!(m.locations(), 6);
        assert_eq!(m.values()[1], 6.0);
        assert_eq!(m.to_chw(), chw);
    }

    #[test]
    fn zero_upstream_zero_grads_and_shapes() {
        let y1 = map(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.3, 0.9]);
        let y2 = map(3, 4, &[0.2, 0.1, 0.4, -0.3, 1.0, 0.7, 0.2, 0.6, -0.5, 0.9, 0.8, 0.1]);
        let f = bilinear_feature(&y1, &y2).unwrap();
        let (g1, g2) = bilinear_backward(&y1, &y2, &f, &[0.0; 8]).unwrap();
        assert!(g1.values().iter().chain(g2.values()).all(|&v| v == 0.0));
        assert_eq!((g1.locations(), g1.channels()), (3, 2));
        assert_eq!((g2.locations(), g2.channels()), (3, 4));
    }

    #[test]
    fn degenerate_backward_is_zero() {
        let y1 = map(2, 2, &[0.0; 4]);
        let y2 = map(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let f = bilinear_feature(&y1, &y2).unwrap();
        assert!(f.degenerate);
        let (g1, g2) = bilinear_backward(&y1, &y2, &f, &[1.0; 4]).unwrap();
        assert!(g1.values().iter().chain(g2.values()).all(|&v| v == 0.0));
    }
}

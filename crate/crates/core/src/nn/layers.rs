//! Layer definitions with hand-written forward and backward passes.
//!
//! Batched activations are `[N, C, H, W]` for spatial layers and `[N, F]`
//! for dense ones.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    BatchNorm { channels: usize },
    GlobalAvgPool,
    FullyConnected { in_features: usize, out_features: usize },
    Softmax,
}

impl LayerSpec {
    /// 3x3 convolution with symmetric zero padding of one.
    pub fn conv3x3(in_channels: usize, out_channels: usize, stride: usize) -> Self {
        LayerSpec::Conv2d { in_channels, out_channels, kernel: 3, stride, padding: 1 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return Err(Error::domain("conv2d needs nonzero channels and kernel"));
                }
                if !(1..=2).contains(&stride) {
                    return Err(Error::domain(format!("conv2d stride {stride} unsupported (1 or 2)")));
                }
                if padding >= kernel {
                    return Err(Error::domain("conv2d padding must be smaller than the kernel"));
                }
            }
            LayerSpec::BatchNorm { channels } if channels == 0 => {
                return Err(Error::domain("batch_norm needs channels > 0"));
            }
            LayerSpec::FullyConnected { in_features, out_features } if in_features == 0 || out_features == 0 => {
                return Err(Error::domain("fully_connected needs nonzero features"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a batched input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |want: &str| {
            Err(Error::shape(format!("{} expects {want}, got input shape {input:?}", self.name())))
        };
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let [n, c, h, w] = input else { return bad("[N, C, H, W]") };
                if *c != in_channels {
                    return bad(&format!("{in_channels} input channels"));
                }
                if h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return bad("spatial extent at least the kernel size after padding");
                }
                Ok(vec![*n, out_channels, (h + 2 * padding - kernel) / stride + 1, (w + 2 * padding - kernel) / stride + 1])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::BatchNorm { channels } => {
                if input.len() < 2 || input.len() == 3 || input.len() > 4 || input[1] != channels {
                    return bad(&format!("[N, {channels}] or [N, {channels}, H, W]"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::GlobalAvgPool => {
                let [n, c, _, _] = input else { return bad("[N, C, H, W]") };
                Ok(vec![*n, *c])
            }
            LayerSpec::FullyConnected { in_features, out_features } => {
                let [n, f] = input else { return bad("[N, F]") };
                if *f != in_features {
                    return bad(&format!("{in_features} input features"));
                }
                Ok(vec![*n, out_features])
            }
            LayerSpec::Softmax => {
                let [_, m] = input else { return bad("[N, M]") };
                if *m < 2 {
                    return bad("at least two logits");
                }
                Ok(input.to_vec())
            }
        }
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]]
            }
            LayerSpec::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            LayerSpec::FullyConnected { in_features, out_features } => {
                vec![vec![out_features, in_features], vec![out_features]]
            }
            _ => Vec::new(),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. } => &["weight", "bias"],
            LayerSpec::BatchNorm { .. } => &["gamma", "beta"],
            _ => &[],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_channels, kernel, .. } => in_channels * kernel * kernel,
            LayerSpec::FullyConnected { in_features, .. } => in_features,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Saved state from a forward call, consumed by the matching backward call.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    kind: CacheKind<T>,
}

#[derive(Clone, Debug)]
enum CacheKind<T> {
    Conv { cols: Vec<T> },
    Relu { mask: Vec<bool> },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T>, mode: Mode, mean: Vec<T>, var: Vec<T>, count: usize },
    Gap,
    Fc { input: Vec<T> },
    Softmax { output: Vec<T> },
}

impl<T: Scalar> Cache<T> {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }
}

/// A layer with its trainable parameters and non-trainable buffers
/// (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    spec: LayerSpec,
    pub(crate) params: Vec<Tensor<T>>,
    pub(crate) buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// He fan-in normal weights scaled by `gain` (2 ahead of a rectifier,
    /// 1 otherwise), zero biases, unit batch-norm scale.
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, gain: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let std = (gain / spec.fan_in() as f64).sqrt();
        let params = match spec {
            LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. } => {
                let shapes = spec.param_shapes();
                let n: usize = shapes[0].iter().product();
                let w: Vec<T> = (0..n).map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal))).collect();
                vec![Tensor::from_vec(shapes[0].clone(), w)?, Tensor::zeros(shapes[1].clone())]
            }
            LayerSpec::BatchNorm { channels } => {
                vec![Tensor::filled(vec![channels], T::one()), Tensor::zeros(vec![channels])]
            }
            _ => Vec::new(),
        };
        let buffers = match spec {
            LayerSpec::BatchNorm { channels } => {
                vec![Tensor::zeros(vec![channels]), Tensor::filled(vec![channels], T::one())]
            }
            _ => Vec::new(),
        };
        Ok(Self { spec, params, buffers })
    }

    pub fn from_parts(spec: LayerSpec, params: Vec<Tensor<T>>, buffers: Vec<Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, s)| p.shape() != s.as_slice()) {
            return Err(Error::shape(format!("parameters do not match {}", spec.name())));
        }
        let want_buffers = matches!(spec, LayerSpec::BatchNorm { .. }) as usize * 2;
        if buffers.len() != want_buffers || buffers.iter().zip(&shapes).any(|(b, s)| b.shape() != s.as_slice()) {
            return Err(Error::shape(format!("buffers do not match {}", spec.name())));
        }
        Ok(Self { spec, params, buffers })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Tensor<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.buffers
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Cache<T>)> {
        let out_shape = self.spec.output_shape(input.shape())?;
        let (out, kind) = match self.spec {
            LayerSpec::Conv2d { .. } => self.conv_forward(input, &out_shape),
            LayerSpec::Relu => {
                let mask: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
                let out = input.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
                (out, CacheKind::Relu { mask })
            }
            LayerSpec::BatchNorm { .. } => self.bn_forward(input, mode)?,
            LayerSpec::GlobalAvgPool => {
                let [n, c, h, w] = *input.shape() else { unreachable!() };
                let hw = h * w;
                let inv = T::one() / T::from_usize_lossy(hw);
                let out = (0..n * c).map(|i| input.data()[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv).collect();
                (out, CacheKind::Gap)
            }
            LayerSpec::FullyConnected { in_features, out_features } => {
                let n = input.shape()[0];
                let (w, b) = (self.params[0].data(), self.params[1].data());
                let mut out: Vec<T> = b.iter().copied().cycle().take(n * out_features).collect();
                gemm_nt(n, in_features, out_features, input.data(), w, &mut out);
                (out, CacheKind::Fc { input: input.data().to_vec() })
            }
            LayerSpec::Softmax => {
                let m = input.shape()[1];
                let mut out = Vec::with_capacity(input.len());
                for row in input.data().chunks(m) {
                    out.extend(softmax(row)?);
                }
                (out.clone(), CacheKind::Softmax { output: out })
            }
        };
        let cache = Cache { spec: self.spec.clone(), input_shape: input.shape().to_vec(), output_shape: out_shape.clone(), kind };
        Ok((Tensor::from_vec(out_shape, out)?, cache))
    }

    /// Returns `(input_grad, param_grads)`; `param_grads` follows
    /// [`Layer::params`] order.
    pub fn backward(&self, cache: &Cache<T>, upstream: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if cache.spec != self.spec {
            return Err(Error::domain(format!(
                "cache from {} passed to {} backward",
                cache.spec.name(),
                self.spec.name()
            )));
        }
        if upstream.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "{} backward: upstream {:?} does not match forward output {:?}",
                self.spec.name(),
                upstream.shape(),
                cache.output_shape
            )));
        }
        let dy = upstream.data();
        let in_shape = cache.input_shape.clone();
        let (dx, grads) = match (&self.spec, &cache.kind) {
            (LayerSpec::Conv2d { .. }, CacheKind::Conv { cols }) => self.conv_backward(cache, cols, dy),
            (LayerSpec::Relu, CacheKind::Relu { mask }) => {
                let dx = dy.iter().zip(mask).map(|(&g, &m)| if m { g } else { T::zero() }).collect();
                (dx, Vec::new())
            }
            (LayerSpec::BatchNorm { .. }, CacheKind::BatchNorm { xhat, inv_std, mode, .. }) => {
                self.bn_backward(&in_shape, xhat, inv_std, *mode, dy)
            }
            (LayerSpec::GlobalAvgPool, CacheKind::Gap) => {
                let hw = in_shape[2] * in_shape[3];
                let inv = T::one() / T::from_usize_lossy(hw);
                let dx = dy.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect();
                (dx, Vec::new())
            }
            (LayerSpec::FullyConnected { in_features, out_features }, CacheKind::Fc { input }) => {
                let (i, o) = (*in_features, *out_features);
                let n = in_shape[0];
                let mut dw = vec![T::zero(); o * i];
                gemm_tn(o, n, i, dy, input, &mut dw);
                let mut db = vec![T::zero(); o];
                for row in dy.chunks(o) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                let mut dx = vec![T::zero(); n * i];
                gemm_nn(n, o, i, dy, self.params[0].data(), &mut dx);
                (dx, vec![Tensor::from_vec(vec![o, i], dw)?, Tensor::from_vec(vec![o], db)?])
            }
            (LayerSpec::Softmax, CacheKind::Softmax { output }) => {
                let m = in_shape[1];
                let mut dx = Vec::with_capacity(dy.len());
                for (g, y) in dy.chunks(m).zip(output.chunks(m)) {
                    let s: T = g.iter().zip(y).map(|(&a, &b)| a * b).sum();
                    dx.extend(g.iter().zip(y).map(|(&a, &b)| b * (a - s)));
                }
                (dx, Vec::new())
            }
            _ => return Err(Error::domain("cache kind does not match layer")),
        };
        Ok((Tensor::from_vec(in_shape, dx)?, grads))
    }

    /// Folds the batch statistics recorded in a train-mode batch-norm cache
    /// into the running estimates.
    pub fn update_running_stats(&mut self, cache: &Cache<T>) {
        if let CacheKind::BatchNorm { mode: Mode::Train, mean, var, count, .. } = &cache.kind {
            let mom = T::lit(BN_MOMENTUM);
            let one = T::one();
            let unbias = if *count > 1 {
                T::from_usize_lossy(*count) / T::from_usize_lossy(count - 1)
            } else {
                one
            };
            let [rmean, rvar] = &mut self.buffers[..] else { return };
            for (r, &m) in rmean.data_mut().iter_mut().zip(mean) {
                *r = mom * *r + (one - mom) * m;
            }
            for (r, &v) in rvar.data_mut().iter_mut().zip(var) {
                *r = mom * *r + (one - mom) * v * unbias;
            }
        }
    }

    fn conv_geometry(&self, input_shape: &[usize], out_shape: &[usize]) -> ConvGeom {
        let LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } = self.spec else {
            unreachable!()
        };
        ConvGeom {
            cin: in_channels,
            cout: out_channels,
            k: kernel,
            stride,
            pad: padding,
            h: input_shape[2],
            w: input_shape[3],
            ho: out_shape[2],
            wo: out_shape[3],
        }
    }

    fn conv_forward(&self, input: &Tensor<T>, out_shape: &[usize]) -> (Vec<T>, CacheKind<T>) {
        let g = self.conv_geometry(input.shape(), out_shape);
        let n = input.shape()[0];
        let (kdim, p) = (g.cin * g.k * g.k, g.ho * g.wo);
        let in_sz = g.cin * g.h * g.w;
        let mut cols = vec![T::zero(); n * kdim * p];
        let mut out = vec![T::zero(); n * g.cout * p];
        let (w, b) = (self.params[0].data(), self.params[1].data());
        for s in 0..n {
            let col = &mut cols[s * kdim * p..(s + 1) * kdim * p];
            im2col(&g, &input.data()[s * in_sz..(s + 1) * in_sz], col);
            let o = &mut out[s * g.cout * p..(s + 1) * g.cout * p];
            for (co, row) in o.chunks_mut(p).enumerate() {
                row.fill(b[co]);
            }
            gemm_nn(g.cout, kdim, p, w, col, o);
        }
        (out, CacheKind::Conv { cols })
    }

    fn conv_backward(&self, cache: &Cache<T>, cols: &[T], dy: &[T]) -> (Vec<T>, Vec<Tensor<T>>) {
        let g = self.conv_geometry(&cache.input_shape, &cache.output_shape);
        let n = cache.input_shape[0];
        let (kdim, p) = (g.cin * g.k * g.k, g.ho * g.wo);
        let in_sz = g.cin * g.h * g.w;
        let w = self.params[0].data();
        let mut dw = vec![T::zero(); g.cout * kdim];
        let mut db = vec![T::zero(); g.cout];
        let mut dx = vec![T::zero(); n * in_sz];
        let mut dcol = vec![T::zero(); kdim * p];
        for s in 0..n {
            let dys = &dy[s * g.cout * p..(s + 1) * g.cout * p];
            let col = &cols[s * kdim * p..(s + 1) * kdim * p];
            gemm_nt(g.cout, p, kdim, dys, col, &mut dw);
            for (d, row) in db.iter_mut().zip(dys.chunks(p)) {
                *d += row.iter().copied().sum::<T>();
            }
            dcol.fill(T::zero());
            gemm_tn(kdim, g.cout, p, w, dys, &mut dcol);
            col2im(&g, &dcol, &mut dx[s * in_sz..(s + 1) * in_sz]);
        }
        let shapes = self.spec.param_shapes();
        (
            dx,
            vec![
                Tensor::from_vec(shapes[0].clone(), dw).expect("shape"),
                Tensor::from_vec(shapes[1].clone(), db).expect("shape"),
            ],
        )
    }

    fn bn_forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, CacheKind<T>)> {
        let shape = input.shape();
        let (n, c) = (shape[0], shape[1]);
        let hw: usize = shape[2..].iter().product();
        let count = n * hw;
        let x = input.data();
        let eps = T::lit(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv = T::one() / T::from_usize_lossy(count);
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let m = s * inv;
                    let mut v = T::zero();
                    for b in 0..n {
                        for &xv in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                            v += (xv - m) * (xv - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = v * inv;
                }
                (mean, var)
            }
            Mode::Infer => (self.buffers[0].data().to_vec(), self.buffers[1].data().to_vec()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gamma, beta) = (self.params[0].data(), self.params[1].data());
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        Ok((out, CacheKind::BatchNorm { xhat, inv_std, mode, mean, var, count }))
    }

    fn bn_backward(&self, shape: &[usize], xhat: &[T], inv_std: &[T], mode: Mode, dy: &[T]) -> (Vec<T>, Vec<Tensor<T>>) {
        let (n, c) = (shape[0], shape[1]);
        let hw: usize = shape[2..].iter().product();
        let count = T::from_usize_lossy(n * hw);
        let gamma = self.params[0].data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    dgamma[ch] += dy[i] * xhat[i];
                    dbeta[ch] += dy[i];
                }
            }
        }
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                let scale = gamma[ch] * inv_std[ch];
                match mode {
                    Mode::Train => {
                        // dx = g/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
                        let mdy = dbeta[ch] / count;
                        let mdyx = dgamma[ch] / count;
                        for i in base..base + hw {
                            dx[i] = scale * (dy[i] - mdy - xhat[i] * mdyx);
                        }
                    }
                    Mode::Infer => {
                        for i in base..base + hw {
                            dx[i] = scale * dy[i];
                        }
                    }
                }
            }
        }
        (dx, vec![Tensor::from_vec(vec![c], dgamma).expect("shape"), Tensor::from_vec(vec![c], dbeta).expect("shape")])
    }
}

struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

/// `col[(c, ky, kx), (oy, ox)] = x[c, oy*s + ky - pad, ox*s + kx - pad]`,
/// zero outside the image.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters and accumulates columns back into `dx`.
fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.ho * g.wo;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max-shifted softmax of one logit vector.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Vec<T>> {
    if logits.len() < 2 {
        return Err(Error::domain("softmax needs at least two logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("softmax received a non-finite logit"));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn conv_stride_two_halves_224() {
        let spec = LayerSpec::conv3x3(3, 4, 2);
        assert_eq!(spec.output_shape(&[1, 3, 224, 224]).unwrap(), vec![1, 4, 112, 112]);
        for side in 8..40usize {
            let out = spec.output_shape(&[1, 3, side, side + 1]).unwrap();
            assert_eq!(out[2], side.div_ceil(2));
            assert_eq!(out[3], (side + 1).div_ceil(2));
        }
    }

    #[test]
    fn conv_zero_kernel_gives_zero() {
        let mut layer = Layer::<f64>::init(LayerSpec::conv3x3(2, 3, 2), 2.0, &mut rng()).unwrap();
        layer.params[0].data_mut().fill(0.0);
        let x = Tensor::from_vec(vec![1, 2, 9, 9], (0..162).map(|i| i as f64).collect()).unwrap();
        let (y, _) = layer.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let layer = Layer::<f64>::init(LayerSpec::conv3x3(2, 3, 2), 2.0, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![1, 2, 5, 6], (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect()).unwrap();
        let (y, _) = layer.forward(&x, Mode::Infer).unwrap();
        let w = layer.params[0].data();
        let (ho, wo) = (3, 3);
        for co in 0..3 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if (0..5).contains(&iy) && (0..6).contains(&ix) {
                                    acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx] * x.data()[(ci * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((y.data()[(co * ho + oy) * wo + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gap_of_plane_is_mean() {
        let layer = Layer::<f64>::init(LayerSpec::GlobalAvgPool, 1.0, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = layer.forward(&x, Mode::Infer).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn relu_backward_zero_at_nonpositive() {
        let layer = Layer::<f64>::init(LayerSpec::Relu, 1.0, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let (dx, _) = layer.backward(&cache, &Tensor::filled(vec![1, 3], 1.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let specs = [
            LayerSpec::conv3x3(2, 3, 1),
            LayerSpec::BatchNorm { channels: 2 },
            LayerSpec::FullyConnected { in_features: 4, out_features: 3 },
        ];
        let inputs = [vec![2, 2, 5, 5], vec![2, 2, 3, 3], vec![2, 4]];
        for (spec, shape) in specs.into_iter().zip(inputs) {
            let layer = Layer::<f64>::init(spec, 2.0, &mut rng()).unwrap();
            let n: usize = shape.iter().product();
            let x = Tensor::from_vec(shape, (0..n).map(|i| (i as f64).sin()).collect()).unwrap();
            let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
            let (dx, grads) = layer.backward(&cache, &Tensor::zeros(y.shape().to_vec())).unwrap();
            assert!(dx.data().iter().all(|&v| v == 0.0));
            assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn mismatched_cache_rejected() {
        let relu = Layer::<f64>::init(LayerSpec::Relu, 1.0, &mut rng()).unwrap();
        let gap = Layer::<f64>::init(LayerSpec::GlobalAvgPool, 1.0, &mut rng()).unwrap();
        let x = Tensor::filled(vec![1, 1, 2, 2], 1.0);
        let (_, cache) = relu.forward(&x, Mode::Train).unwrap();
        assert!(gap.backward(&cache, &Tensor::zeros(vec![1, 1])).is_err());
        assert!(relu.backward(&cache, &Tensor::zeros(vec![1, 1])).is_err());
    }

    #[test]
    fn batchnorm_running_stats_update() {
        let mut bn = Layer::<f64>::init(LayerSpec::BatchNorm { channels: 1 }, 1.0, &mut rng()).unwrap();
        let x = Tensor::from_vec(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, cache) = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().sum::<f64>().abs() < 1e-12);
        bn.update_running_stats(&cache);
        assert!((bn.buffers[0].data()[0] - 0.25).abs() < 1e-12);
        // unbiased batch variance 5/3
        assert!((bn.buffers[1].data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&vec![0.0f64; 39]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 39.0).abs() < 1e-15));
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let mut big = vec![0.0f64; 5];
        big[2] = 1e4;
        let p = softmax(&big).unwrap();
        assert!((p[2] - 1.0).abs() < 1e-6 && p.iter().all(|v| v.is_finite()));
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[1.0f64]).is_err());
    }
}

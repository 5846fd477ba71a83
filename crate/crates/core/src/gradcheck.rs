//! Central finite-difference checks of every analytic gradient, at `f64`.
//!
//! Each check draws random shapes, inputs and parameters per trial and
//! compares analytic and numeric gradients tensor by tensor with the
//! norm-wise relative error `|a - n| / max(|a|, |n|, floor)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bilinear::{bilinear_backward, bilinear_feature, bilinear_pool, ActivationMap};
use crate::error::Result;
use crate::model::{DbCnnConfig, DbCnnModel, QualityLoss};
use crate::nn::{softmax_cross_entropy, Layer, LayerSpec, Mode, Network, NetworkSpec, Tensor};

/// Tolerance for single layers and composed stages.
pub const LAYER_TOLERANCE: f64 = 1e-4;
/// Tolerance for the whole two-stream model.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Central-difference step.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

/// Denominator floor in [`relative_error`]. Gradients that are exactly zero
/// (a bias feeding batch norm) leave only round-off of order
/// `1e-15 / STEP` on the numeric side.
pub const NORM_FLOOR: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, NORM_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient lengths differ");
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(NORM_FLOOR);
    diff / scale
}

/// Numeric gradient of `f` at `x` by central differences.
pub fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut p = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = p[i];
        p[i] = orig + STEP;
        let up = f(&p)?;
        p[i] = orig - STEP;
        let down = f(&p)?;
        p[i] = orig;
        g.push((up - down) / (2.0 * STEP));
    }
    Ok(g)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, uniform(rng, n, -1.0, 1.0)).expect("shape matches length")
}

/// Values bounded away from zero so ReLU kinks are not straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

/// Loss `sum(r * layer(x))` with analytic gradients checked for the input
/// and every parameter.
fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, mode: Mode, rng: &mut ChaCha8Rng) -> Result<f64> {
    let (y, cache) = layer.forward(x, mode)?;
    let r = tensor(rng, y.shape().to_vec());
    let (dx, grads) = layer.backward(&cache, &r)?;
    let loss = |l: &Layer<f64>, input: &Tensor<f64>| -> Result<f64> { Ok(l.forward(input, mode)?.0.dot(&r)) };

    let num_dx = central_difference(x.data(), |v| loss(layer, &Tensor::from_vec(x.shape().to_vec(), v.to_vec())?))?;
    let mut worst = relative_error(dx.data(), &num_dx);
    for (k, g) in grads.iter().enumerate() {
        let p = layer.params()[k].clone();
        let num = central_difference(p.data(), |v| {
            let mut l = layer.clone();
            l.params_mut()[k].data_mut().copy_from_slice(v);
            loss(&l, x)
        })?;
        worst = worst.max(relative_error(g.data(), &num));
    }
    Ok(worst)
}

type Trial = fn(&mut ChaCha8Rng) -> Result<f64>;

fn conv_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (cin, cout) = (rng.random_range(1..=3), rng.random_range(1..=4));
    let stride = rng.random_range(1..=2);
    let (kernel, padding) = if rng.random_bool(0.75) { (3, 1) } else { (1, 0) };
    let spec = LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel, stride, padding };
    let layer = Layer::init(spec, 2.0, rng)?;
    let shape = vec![rng.random_range(1..=2), cin, rng.random_range(3..=7), rng.random_range(3..=7)];
    let x = tensor(rng, shape);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn relu_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let layer = Layer::init(LayerSpec::Relu, 1.0, rng)?;
    let shape = vec![rng.random_range(1..=3), rng.random_range(1..=3), 3, rng.random_range(2..=5)];
    let x = away_from_zero(rng, shape);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn random_bn(rng: &mut ChaCha8Rng, c: usize) -> Result<Layer<f64>> {
    let mut layer = Layer::init(LayerSpec::BatchNorm { channels: c }, 1.0, rng)?;
    for p in layer.params_mut() {
        *p = Tensor::from_vec(vec![c], uniform(rng, c, 0.5, 1.5))?;
    }
    let mean = Tensor::from_vec(vec![c], uniform(rng, c, -0.5, 0.5))?;
    let var = Tensor::from_vec(vec![c], uniform(rng, c, 0.5, 2.0))?;
    layer.buffers_mut().clone_from_slice(&[mean, var]);
    Ok(layer)
}

fn bn_shape(rng: &mut ChaCha8Rng, c: usize) -> Vec<usize> {
    if rng.random_bool(0.5) {
        vec![rng.random_range(2..=5), c]
    } else {
        vec![rng.random_range(1..=3), c, rng.random_range(2..=4), rng.random_range(2..=4)]
    }
}

fn bn_train_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = rng.random_range(1..=3);
    let layer = random_bn(rng, c)?;
    let shape = bn_shape(rng, c);
    let x = tensor(rng, shape);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn bn_infer_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = rng.random_range(1..=3);
    let layer = random_bn(rng, c)?;
    let shape = bn_shape(rng, c);
    let x = tensor(rng, shape);
    check_layer(&layer, &x, Mode::Infer, rng)
}

fn gap_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let layer = Layer::init(LayerSpec::GlobalAvgPool, 1.0, rng)?;
    let shape = vec![rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5)];
    let x = tensor(rng, shape);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn fc_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (i, o) = (rng.random_range(1..=6), rng.random_range(1..=5));
    let layer = Layer::init(LayerSpec::FullyConnected { in_features: i, out_features: o }, 1.0, rng)?;
    let shape = vec![rng.random_range(1..=4), i];
    let x = tensor(rng, shape);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn softmax_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let layer = Layer::init(LayerSpec::Softmax, 1.0, rng)?;
    let shape = vec![rng.random_range(1..=4), rng.random_range(2..=6)];
    let mut x = tensor(rng, shape);
    x.scale(3.0);
    check_layer(&layer, &x, Mode::Train, rng)
}

fn softmax_ce_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, m) = (rng.random_range(1..=5), rng.random_range(2..=8));
    let mut logits = tensor(rng, vec![n, m]);
    logits.scale(3.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let (_, analytic) = softmax_cross_entropy(&logits, &labels)?;
    let num = central_difference(logits.data(), |v| {
        Ok(softmax_cross_entropy(&Tensor::from_vec(vec![n, m], v.to_vec())?, &labels)?.0)
    })?;
    Ok(relative_error(analytic.data(), &num))
}

/// A small classifier trained with the fused softmax/cross-entropy loss,
/// checked through every layer at once.
fn classifier_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = rng.random_range(2..=3);
    let m = rng.random_range(2..=5);
    let spec = NetworkSpec {
        input_channels: 3,
        layers: vec![
            LayerSpec::conv3x3(3, c, 2),
            LayerSpec::BatchNorm { channels: c },
            LayerSpec::Relu,
            LayerSpec::GlobalAvgPool,
            LayerSpec::FullyConnected { in_features: c, out_features: 4 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { in_features: 4, out_features: m },
            LayerSpec::Softmax,
        ],
    };
    let net: Network<f64> = Network::init(spec, rng)?;
    let n = rng.random_range(2..=3);
    let x = tensor(rng, vec![n, 3, 6, 6]);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let end = net.len() - 1;
    let loss = |net: &Network<f64>| -> Result<f64> {
        let (logits, _) = net.forward_range(0..end, &x, Mode::Train)?;
        Ok(softmax_cross_entropy(&logits, &labels)?.0)
    };
    let (logits, caches) = net.forward_range(0..end, &x, Mode::Train)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    let (_, grads) = net.backward(&caches, &dlogits)?;
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        let num = central_difference(net.params()[k].data(), |v| {
            let mut probe = net.clone();
            probe.params_mut()[k].data_mut().copy_from_slice(v);
            loss(&probe)
        })?;
        worst = worst.max(relative_error(g.data(), &num));
    }
    Ok(worst)
}

/// Pooling, signed square root and L2 normalization, an affine map to a
/// scalar, and the absolute-error loss against a target, over a batch that
/// shares the affine weights.
fn bilinear_chain_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = rng.random_range(1..=3);
    let (l, d1, d2) = (rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(1..=4));
    let mut maps = Vec::with_capacity(n);
    while maps.len() < n {
        let y1 = ActivationMap::new(l, d1, uniform(rng, l * d1, -1.0, 1.0))?;
        let y2 = ActivationMap::new(l, d2, uniform(rng, l * d2, -1.0, 1.0))?;
        // keep entries of B clear of the square-root kink at zero
        if bilinear_pool(&y1, &y2)?.data().iter().all(|b| b.abs() > 0.05) {
            maps.push((y1, y2));
        }
    }
    let w = uniform(rng, d1 * d2, -1.0, 1.0);
    let bias = rng.random_range(-1.0..1.0);
    let predict = |y1: &ActivationMap<f64>, y2: &ActivationMap<f64>, w: &[f64], bias: f64| -> Result<f64> {
        let f = bilinear_feature(y1, y2)?;
        Ok(f.normalized.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + bias)
    };
    let mut targets = Vec::with_capacity(n);
    for (y1, y2) in &maps {
        let offset = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        targets.push(predict(y1, y2, &w, bias)? + offset);
    }
    let inv_n = 1.0 / n as f64;
    let loss = |maps: &[(ActivationMap<f64>, ActivationMap<f64>)], w: &[f64], bias: f64| -> Result<f64> {
        let mut total = 0.0;
        for ((y1, y2), s) in maps.iter().zip(&targets) {
            total += (s - predict(y1, y2, w, bias)?).abs();
        }
        Ok(total * inv_n)
    };

    let (mut gw, mut gb) = (vec![0.0; d1 * d2], 0.0);
    let mut gmaps = Vec::with_capacity(n);
    for ((y1, y2), s) in maps.iter().zip(&targets) {
        let f = bilinear_feature(y1, y2)?;
        let pred = f.normalized.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
        let dpred = (pred - s).signum() * inv_n;
        gw.iter_mut().zip(&f.normalized).for_each(|(g, a)| *g += dpred * a);
        gb += dpred;
        let up: Vec<f64> = w.iter().map(|x| x * dpred).collect();
        gmaps.push(bilinear_backward(y1, y2, &f, &up)?);
    }

    let mut worst = relative_error(&gw, &central_difference(&w, |v| loss(&maps, v, bias))?);
    worst = worst.max(relative_error(&[gb], &central_difference(&[bias], |v| loss(&maps, &w, v[0]))?));
    for (i, (g1, g2)) in gmaps.iter().enumerate() {
        let num1 = central_difference(maps[i].0.values(), |v| {
            let mut m = maps.clone();
            m[i].0 = ActivationMap::new(l, d1, v.to_vec())?;
            loss(&m, &w, bias)
        })?;
        let num2 = central_difference(maps[i].1.values(), |v| {
            let mut m = maps.clone();
            m[i].1 = ActivationMap::new(l, d2, v.to_vec())?;
            loss(&m, &w, bias)
        })?;
        worst = worst.max(relative_error(g1.values(), &num1)).max(relative_error(g2.values(), &num2));
    }
    Ok(worst)
}

/// Two-stage, four-channel streams on 16x16 inputs; the loss is the mean
/// absolute error of the predicted scores.
pub fn tiny_dbcnn(rng: &mut ChaCha8Rng) -> Result<DbCnnModel<f64>> {
    let stream = |rng: &mut ChaCha8Rng| -> Result<Network<f64>> {
        let spec = NetworkSpec {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv3x3(3, 4, 2),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::conv3x3(4, 4, 2),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
            ],
        };
        Network::init(spec, rng)
    };
    let scnn = stream(rng)?;
    let aux = stream(rng)?;
    let head = DbCnnModel::init_head(4, 4, rng.random())?;
    let config = DbCnnConfig { train_streams: true, loss: QualityLoss::Absolute, min_side: 8 };
    DbCnnModel::from_networks(scnn, aux, head, config)
}

/// Smallest distance of the network's non-smooth points from the current
/// operating point: `|v|` over every ReLU input, and `|b|` over the nonzero
/// entries of each raw bilinear matrix (the square root is steep there).
fn kink_margin(model: &DbCnnModel<f64>, x: &Tensor<f64>) -> Result<(f64, f64)> {
    let mut relu: f64 = f64::INFINITY;
    for net in [model.scnn(), model.aux()] {
        for (k, spec) in net.spec().layers.iter().enumerate() {
            if matches!(spec, LayerSpec::Relu) {
                let (v, _) = net.forward_range(0..k, x, Mode::Train)?;
                relu = v.data().iter().fold(relu, |m, a| m.min(a.abs()));
            }
        }
    }
    let (_, cache) = model.forward(x, Mode::Train)?;
    let bilinear = cache
        .features()
        .iter()
        .flat_map(|f| f.raw.data().iter().copied())
        .filter(|b| *b != 0.0)
        .fold(f64::INFINITY, |m, b| m.min(b.abs()));
    Ok((relu, bilinear))
}

/// Redraws until every kink is farther than a step can move it.
const RELU_MARGIN: f64 = 5e-4;
const BILINEAR_MARGIN: f64 = 1e-2;

fn dbcnn_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (model, x) = loop {
        let model = tiny_dbcnn(rng)?;
        let x = Tensor::from_vec(vec![2, 3, 16, 16], uniform(rng, 2 * 3 * 16 * 16, -0.5, 0.5))?;
        let (relu, bilinear) = kink_margin(&model, &x)?;
        if relu > RELU_MARGIN && bilinear > BILINEAR_MARGIN {
            break (model, x);
        }
    };
    let (preds, _) = model.forward(&x, Mode::Train)?;
    let scores: Vec<f64> = preds.iter().map(|p| p + if rng.random_bool(0.5) { 0.5 } else { -0.5 }).collect();
    let (_, grads, _) = model.loss_and_grads(&x, &scores, Mode::Train)?;
    let mut worst: f64 = 0.0;
    for (k, g) in grads.iter().enumerate() {
        let num = central_difference(model.params()[k].data(), |v| {
            let mut probe = model.clone();
            probe.params_mut()[k].data_mut().copy_from_slice(v);
            Ok(probe.loss_and_grads(&x, &scores, Mode::Train)?.0)
        })?;
        worst = worst.max(relative_error(g.data(), &num));
    }
    Ok(worst)
}

const CHECKS: [(&str, Trial, f64); 11] = [
    ("conv2d", conv_trial, LAYER_TOLERANCE),
    ("relu", relu_trial, LAYER_TOLERANCE),
    ("batch_norm_train", bn_train_trial, LAYER_TOLERANCE),
    ("batch_norm_infer", bn_infer_trial, LAYER_TOLERANCE),
    ("global_avg_pool", gap_trial, LAYER_TOLERANCE),
    ("fully_connected", fc_trial, LAYER_TOLERANCE),
    ("softmax", softmax_trial, LAYER_TOLERANCE),
    ("softmax_cross_entropy", softmax_ce_trial, LAYER_TOLERANCE),
    ("classifier_network", classifier_trial, LAYER_TOLERANCE),
    ("bilinear_chain", bilinear_chain_trial, LAYER_TOLERANCE),
    ("dbcnn_end_to_end", dbcnn_trial, MODEL_TOLERANCE),
];

/// Names of all checks in [`run_suite`] order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Runs every check for `trials` randomized trials each.
pub fn run_suite(trials: usize, seed: u64) -> Result<Vec<GradCheck>> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, trial, tolerance))| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::hash::mix64(seed ^ i as u64));
            let mut max_rel_error: f64 = 0.0;
            for _ in 0..trials {
                let e = trial(&mut rng)?;
                max_rel_error = if e.is_nan() { f64::NAN } else { max_rel_error.max(e) };
            }
            log::info!("gradcheck {name}: max relative error {max_rel_error:.3e} over {trials} trials");
            Ok(GradCheck { name: name.to_string(), trials, max_rel_error, tolerance })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!(relative_error(&[0.0], &[1e-11]) < 1e-3);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[-1.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(&[1.0, -2.0], |v| Ok(v[0] * v[0] + 3.0 * v[1])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn short_suite_passes() {
        for check in run_suite(3, 7).unwrap() {
            assert!(check.passed(), "{check:?}");
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Layer::init(LayerSpec::FullyConnected { in_features: 3, out_features: 2 }, 1.0, &mut rng).unwrap();
        let x = tensor(&mut rng, vec![2, 3]);
        let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
        let r = tensor(&mut rng, y.shape().to_vec());
        let (mut dx, _) = layer.backward(&cache, &r).unwrap();
        dx.scale(1.01);
        let num = central_difference(x.data(), |v| {
            Ok(layer.forward(&Tensor::from_vec(vec![2, 3], v.to_vec())?, Mode::Train)?.0.dot(&r))
        })
        .unwrap();
        assert!(relative_error(dx.data(), &num) > LAYER_TOLERANCE);
    }
}

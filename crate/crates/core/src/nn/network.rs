use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Cache, Layer, LayerSpec, Mode};
use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Declarative layer list plus the input channel count. A network whose
/// first layer is fully connected takes flat `[N, input_channels]` input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feat {
    Spatial(usize),
    Flat(usize),
}

impl NetworkSpec {
    /// Checks that adjacent layers agree on channel/feature counts and that
    /// a softmax, if present, is the single final layer.
    pub fn validate(&self) -> Result<()> {
        let mut feat = match self.layers.first() {
            Some(LayerSpec::FullyConnected { .. }) => Feat::Flat(self.input_channels),
            _ => Feat::Spatial(self.input_channels),
        };
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            let err = |want: String| {
                Err(Error::shape(format!("layer {i} ({}) expects {want}, previous layer yields {feat:?}", layer.name())))
            };
            feat = match (*layer, feat) {
                (LayerSpec::Conv2d { in_channels, out_channels, .. }, Feat::Spatial(c)) if c == in_channels => {
                    Feat::Spatial(out_channels)
                }
                (LayerSpec::Conv2d { in_channels, .. }, _) => return err(format!("spatial input with {in_channels} channels")),
                (LayerSpec::Relu, f) => f,
                (LayerSpec::BatchNorm { channels }, Feat::Spatial(c) | Feat::Flat(c)) if c == channels => feat,
                (LayerSpec::BatchNorm { channels }, _) => return err(format!("{channels} channels")),
                (LayerSpec::GlobalAvgPool, Feat::Spatial(c)) => Feat::Flat(c),
                (LayerSpec::GlobalAvgPool, _) => return err("spatial input".into()),
                (LayerSpec::FullyConnected { in_features, out_features }, Feat::Flat(f)) if f == in_features => {
                    Feat::Flat(out_features)
                }
                (LayerSpec::FullyConnected { in_features, .. }, _) => return err(format!("{in_features} flat features")),
                (LayerSpec::Softmax, Feat::Flat(m)) if m >= 2 && i + 1 == n => feat,
                (LayerSpec::Softmax, _) => return err("at least two flat logits, as the final layer".into()),
            };
        }
        Ok(())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers.iter().try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }
}

/// A hand-wired feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
}

/// Per-layer parameter gradients, aligned with [`Network::params`].
pub type Gradients<T> = Vec<Tensor<T>>;

impl<T: Scalar> Network<T> {
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let rectified = matches!(spec.layers.get(i + 1), Some(LayerSpec::Relu | LayerSpec::BatchNorm { .. }));
            layers.push(Layer::init(l.clone(), if rectified { 2.0 } else { 1.0 }, rng)?);
        }
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.layers.len() || layers.iter().zip(&spec.layers).any(|(l, s)| l.spec() != s) {
            return Err(Error::shape("layers do not match network spec"));
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network { spec: self.spec.clone(), layers: self.layers.iter().map(Layer::cast).collect() }
    }

    /// Keeps layers `0..n`.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.layers.len() {
            return Err(Error::domain(format!("cannot truncate {} layers to {n}", self.layers.len())));
        }
        let spec = NetworkSpec { input_channels: self.spec.input_channels, layers: self.spec.layers[..n].to_vec() };
        Self::from_layers(spec, self.layers[..n].to_vec())
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.forward_range(0..self.layers.len(), input, mode)
    }

    pub fn forward_range(&self, range: Range<usize>, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(range.len());
        let mut x = input.clone();
        for layer in &self.layers[range] {
            let (y, c) = layer.forward(&x, mode)?;
            caches.push(c);
            x = y;
        }
        Ok((x, caches))
    }

    /// Inference-mode forward without caches.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(input, Mode::Infer).map(|(y, _)| y)
    }

    /// Backpropagates through the layers that produced `caches` (the first
    /// `caches.len()` layers). Returns the input gradient and gradients for
    /// every parameter of the whole network, zero for layers not covered.
    pub fn backward(&self, caches: &[Cache<T>], upstream: &Tensor<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        if caches.len() > self.layers.len() {
            return Err(Error::domain("more caches than layers"));
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = self
            .layers
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect())
            .collect();
        let mut g = upstream.clone();
        for (i, cache) in caches.iter().enumerate().rev() {
            let (dx, grads) = self.layers[i].backward(cache, &g)?;
            if !grads.is_empty() {
                per_layer[i] = grads;
            }
            g = dx;
        }
        Ok((g, per_layer.into_iter().flatten().collect()))
    }

    pub fn update_running_stats(&mut self, caches: &[Cache<T>]) {
        for (layer, cache) in self.layers.iter_mut().zip(caches) {
            layer.update_running_stats(cache);
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params().iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut()).collect()
    }

    /// `layer{i}.{name}` for every parameter, in [`Network::params`] order.
    pub fn param_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.spec().param_names().iter().map(move |n| format!("layer{i}.{n}")))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> NetworkSpec {
        NetworkSpec {
            input_channels: 3,
            layers: vec![
                LayerSpec::conv3x3(3, 4, 2),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::FullyConnected { in_features: 4, out_features: 5 },
                LayerSpec::Softmax,
            ],
        }
    }

    #[test]
    fn validate_catches_mismatch() {
        tiny().validate().unwrap();
        let mut s = tiny();
        s.layers[4] = LayerSpec::FullyConnected { in_features: 3, out_features: 5 };
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.layers.insert(3, LayerSpec::Softmax);
        assert!(s.validate().is_err());
        let mut s = tiny();
        s.layers.swap(3, 4);
        assert!(s.validate().is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::<f32>::init(tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let net2 = Network::<f32>::init(tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(net, net2);
        let x = Tensor::from_vec(vec![2, 3, 9, 9], (0..486).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let a = net.forward(&x, Mode::Train).unwrap().0;
        let b = net.forward(&x, Mode::Train).unwrap().0;
        assert_eq!(a.data(), b.data());
        assert!(a.data().chunks(5).all(|r| (r.iter().sum::<f32>() - 1.0).abs() < 1e-6));
    }

    #[test]
    fn names_align_with_params() {
        let net = Network::<f32>::init(tiny(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(net.param_names().len(), net.params().len());
        assert_eq!(net.param_names()[0], "layer0.weight");
        assert_eq!(net.param_names()[2], "layer1.gamma");
        assert_eq!(net.truncate(3).unwrap().len(), 3);
        assert_eq!(net.spec().last_conv(), Some(0));
    }
}

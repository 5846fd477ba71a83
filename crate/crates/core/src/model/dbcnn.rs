//! Two-stream bilinear quality model.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::truncation_len;
use crate::bilinear::{bilinear_backward, bilinear_feature, ActivationMap, BilinearFeature};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::{AdamConfig, AdamState, Cache, Checkpoint, Gradients, LayerSpec, Mode, Network, NetworkSpec, Tensor};
use crate::Scalar;

/// Per-sample quality loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLoss {
    /// `mean |s - s_hat|`.
    #[default]
    Absolute,
    /// `mean (s - s_hat)^2`.
    Squared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbCnnConfig {
    /// When false both streams are frozen (inference-mode batch norm) and
    /// only the head is trained.
    pub train_streams: bool,
    pub loss: QualityLoss,
    /// Smallest accepted image side.
    pub min_side: usize,
}

impl Default for DbCnnConfig {
    fn default() -> Self {
        Self { train_streams: true, loss: QualityLoss::Absolute, min_side: 16 }
    }
}

/// Default fine-tuning optimizer: batch 8.
pub fn finetune_adam_default() -> AdamConfig {
    AdamConfig { lr_start: 1e-3, lr_end: 1e-4, epochs: 20, batch_size: 8, ..AdamConfig::default() }
}

/// Mean absolute or squared error between scores and predictions.
pub fn quality_loss<T: Scalar>(scores: &[T], preds: &[T], kind: QualityLoss) -> Result<T> {
    if scores.len() != preds.len() {
        return Err(Error::shape(format!("{} scores but {} predictions", scores.len(), preds.len())));
    }
    if scores.is_empty() {
        return Ok(T::zero());
    }
    let total: T = scores
        .iter()
        .zip(preds)
        .map(|(&s, &p)| match kind {
            QualityLoss::Absolute => (s - p).abs(),
            QualityLoss::Squared => (s - p) * (s - p),
        })
        .sum();
    Ok(total / T::from_usize_lossy(scores.len()))
}

/// Derivative of [`quality_loss`] with respect to each prediction.
pub fn quality_loss_grad<T: Scalar>(scores: &[T], preds: &[T], kind: QualityLoss) -> Vec<T> {
    let n = T::from_usize_lossy(scores.len().max(1));
    scores
        .iter()
        .zip(preds)
        .map(|(&s, &p)| {
            let d = p - s;
            match kind {
                QualityLoss::Absolute if d == T::zero() => T::zero(),
                QualityLoss::Absolute => d.signum() / n,
                QualityLoss::Squared => T::lit(2.0) * d / n,
            }
        })
        .collect()
}

/// Intermediate values of one batch forward pass.
pub struct DbCnnCache<T> {
    mode: Mode,
    s_caches: Vec<Cache<T>>,
    a_caches: Vec<Cache<T>>,
    y1: Vec<ActivationMap<T>>,
    y2: Vec<ActivationMap<T>>,
    features: Vec<BilinearFeature<T>>,
    h_caches: Vec<Cache<T>>,
    grid: [usize; 2],
}

impl<T> DbCnnCache<T> {
    pub fn features(&self) -> &[BilinearFeature<T>] {
        &self.features
    }
}

#[derive(Clone, Debug)]
pub struct DbCnnModel<T> {
    scnn: Network<T>,
    aux: Network<T>,
    head: Network<T>,
    config: DbCnnConfig,
}

/// Spatial output `[h, w]` of a truncated stream for a square probe input.
fn grid_of(spec: &NetworkSpec, side: usize) -> Result<Vec<usize>> {
    let shape = spec.output_shape(&[1, spec.input_channels, side, side])?;
    Ok(shape[2..].to_vec())
}

fn channels_of(spec: &NetworkSpec) -> Result<usize> {
    Ok(spec.output_shape(&[1, spec.input_channels, 16, 16])?[1])
}

impl<T: Scalar> DbCnnModel<T> {
    /// Joins two already-truncated streams with a head `FC(d1*d2 -> 1)`.
    pub fn from_networks(scnn: Network<T>, aux: Network<T>, head: Network<T>, config: DbCnnConfig) -> Result<Self> {
        for (name, net) in [("distortion", &scnn), ("auxiliary", &aux)] {
            if !matches!(net.spec().layers.first(), Some(LayerSpec::Conv2d { .. })) {
                return Err(Error::domain(format!("{name} stream must start with a convolution")));
            }
            if net.spec().layers.iter().any(|l| !matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::BatchNorm { .. } | LayerSpec::Relu)) {
                return Err(Error::domain(format!("{name} stream must be truncated after its last convolution block")));
            }
        }
        for side in [config.min_side, config.min_side * 2 + 1, config.min_side * 4 + 3] {
            let g1 = grid_of(scnn.spec(), side)?;
            let g2 = grid_of(aux.spec(), side)?;
            if g1 != g2 {
                return Err(Error::domain(format!(
                    "stream spatial grids differ for a {side}x{side} input: distortion stream {g1:?}, auxiliary stream {g2:?}"
                )));
            }
        }
        let (d1, d2) = (channels_of(scnn.spec())?, channels_of(aux.spec())?);
        let expect = NetworkSpec {
            input_channels: d1 * d2,
            layers: vec![LayerSpec::FullyConnected { in_features: d1 * d2, out_features: 1 }],
        };
        if head.spec() != &expect {
            return Err(Error::domain(format!("head must be a single FC layer {}x1", d1 * d2)));
        }
        Ok(Self { scnn, aux, head, config })
    }

    /// Fresh head for the given streams.
    pub fn init_head(d1: usize, d2: usize, seed: u64) -> Result<Network<T>> {
        let spec = NetworkSpec {
            input_channels: d1 * d2,
            layers: vec![LayerSpec::FullyConnected { in_features: d1 * d2, out_features: 1 }],
        };
        Network::init(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn scnn(&self) -> &Network<T> {
        &self.scnn
    }

    pub fn aux(&self) -> &Network<T> {
        &self.aux
    }

    pub fn head(&self) -> &Network<T> {
        &self.head
    }

    pub fn config(&self) -> &DbCnnConfig {
        &self.config
    }

    /// `(d1, d2)`: channel counts of the two streams.
    pub fn feature_dims(&self) -> (usize, usize) {
        let d1 = channels_of(self.scnn.spec()).unwrap_or(0);
        let d2 = channels_of(self.aux.spec()).unwrap_or(0);
        (d1, d2)
    }

    pub fn cast<U: Scalar>(&self) -> DbCnnModel<U> {
        DbCnnModel { scnn: self.scnn.cast(), aux: self.aux.cast(), head: self.head.cast(), config: self.config.clone() }
    }

    /// Trainable parameters in order: distortion stream, auxiliary stream,
    /// head. Streams are omitted when frozen.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut p = Vec::new();
        if self.config.train_streams {
            p.extend(self.scnn.params());
            p.extend(self.aux.params());
        }
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut p = Vec::new();
        if self.config.train_streams {
            p.extend(self.scnn.params_mut());
            p.extend(self.aux.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }

    fn stream_mode(&self, mode: Mode) -> Mode {
        if self.config.train_streams {
            mode
        } else {
            Mode::Infer
        }
    }

    /// Predicted scores for a batch `[N, 3, H, W]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, DbCnnCache<T>)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::shape(format!("expected [N, 3, H, W] input, got {shape:?}")));
        }
        let side = shape[2].min(shape[3]);
        if side < self.config.min_side {
            return Err(Error::domain(format!(
                "image {}x{} is below the minimum side {}",
                shape[3], shape[2], self.config.min_side
            )));
        }
        let smode = self.stream_mode(mode);
        let (o1, s_caches) = self.scnn.forward(x, smode)?;
        let (o2, a_caches) = self.aux.forward(x, smode)?;
        let (n, d1, h, w) = (o1.shape()[0], o1.shape()[1], o1.shape()[2], o1.shape()[3]);
        let d2 = o2.shape()[1];
        if o2.shape()[2..] != o1.shape()[2..] {
            return Err(Error::shape(format!("stream outputs {:?} and {:?} differ spatially", o1.shape(), o2.shape())));
        }
        let (mut y1, mut y2, mut features) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut flat = Vec::with_capacity(n * d1 * d2);
        for i in 0..n {
            let a = ActivationMap::from_chw(d1, h, w, &o1.data()[i * d1 * h * w..(i + 1) * d1 * h * w])?;
            let b = ActivationMap::from_chw(d2, h, w, &o2.data()[i * d2 * h * w..(i + 1) * d2 * h * w])?;
            let f = bilinear_feature(&a, &b)?;
            flat.extend_from_slice(&f.normalized);
            y1.push(a);
            y2.push(b);
            features.push(f);
        }
        let z = Tensor::from_vec(vec![n, d1 * d2], flat)?;
        let (out, h_caches) = self.head.forward(&z, mode)?;
        let preds = out.into_data();
        if preds.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite quality prediction".into()));
        }
        Ok((preds, DbCnnCache { mode: smode, s_caches, a_caches, y1, y2, features, h_caches, grid: [h, w] }))
    }

    /// Gradients of a loss with per-prediction derivatives `dpred`, aligned
    /// with [`DbCnnModel::params`].
    pub fn backward(&self, cache: &DbCnnCache<T>, dpred: &[T]) -> Result<Gradients<T>> {
        let n = cache.features.len();
        if dpred.len() != n {
            return Err(Error::shape(format!("{} prediction gradients for a batch of {n}", dpred.len())));
        }
        let (d1, d2) = (cache.y1[0].channels(), cache.y2[0].channels());
        let (dz, head_grads) = self.head.backward(&cache.h_caches, &Tensor::from_vec(vec![n, 1], dpred.to_vec())?)?;
        let mut grads = Vec::new();
        if self.config.train_streams {
            if cache.mode != Mode::Train && !cache.s_caches.is_empty() {
                log::debug!("stream backward from an inference-mode forward pass");
            }
            let [h, w] = cache.grid;
            let (mut g1, mut g2) = (Vec::with_capacity(n * d1 * h * w), Vec::with_capacity(n * d2 * h * w));
            for i in 0..n {
                let up = &dz.data()[i * d1 * d2..(i + 1) * d1 * d2];
                let (a, b) = bilinear_backward(&cache.y1[i], &cache.y2[i], &cache.features[i], up)?;
                g1.extend(a.to_chw());
                g2.extend(b.to_chw());
            }
            let (_, gs) = self.scnn.backward(&cache.s_caches, &Tensor::from_vec(vec![n, d1, h, w], g1)?)?;
            let (_, ga) = self.aux.backward(&cache.a_caches, &Tensor::from_vec(vec![n, d2, h, w], g2)?)?;
            grads.extend(gs);
            grads.extend(ga);
        }
        grads.extend(head_grads);
        Ok(grads)
    }

    /// Loss and parameter gradients for one same-size batch.
    pub fn loss_and_grads(&self, x: &Tensor<T>, scores: &[T], mode: Mode) -> Result<(T, Gradients<T>, DbCnnCache<T>)> {
        let (preds, cache) = self.forward(x, mode)?;
        let loss = quality_loss(scores, &preds, self.config.loss)?;
        let dpred = quality_loss_grad(scores, &preds, self.config.loss);
        let grads = self.backward(&cache, &dpred)?;
        Ok((loss, grads, cache))
    }

    /// Folds train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, cache: &DbCnnCache<T>) {
        if cache.mode == Mode::Train {
            self.scnn.update_running_stats(&cache.s_caches);
            self.aux.update_running_stats(&cache.a_caches);
        }
    }

    /// Inference-mode score for one image; higher means better quality.
    pub fn predict_quality(&self, image: &RgbImage) -> Result<T> {
        let x = Tensor::stack(&[image.to_tensor::<T>()])?;
        Ok(self.forward(&x, Mode::Infer)?.0[0])
    }

    /// Inference-mode bilinear feature length for one image.
    pub fn feature_len(&self, image: &RgbImage) -> Result<usize> {
        let x = Tensor::stack(&[image.to_tensor::<T>()])?;
        Ok(self.forward(&x, Mode::Infer)?.1.features[0].normalized.len())
    }
}

/// Loads both stream checkpoints, cuts each after its last convolution
/// block, and attaches a freshly initialized head.
pub fn build_dbcnn(scnn: &Checkpoint, aux: &Checkpoint, config: &DbCnnConfig, seed: u64) -> Result<DbCnnModel<f32>> {
    let s: Network<f32> = scnn.to_network()?;
    let a: Network<f32> = aux.to_network()?;
    let s = s.truncate(truncation_len(s.spec())?)?;
    let a = a.truncate(truncation_len(a.spec())?)?;
    let (d1, d2) = (channels_of(s.spec())?, channels_of(a.spec())?);
    let head = DbCnnModel::init_head(d1, d2, seed)?;
    DbCnnModel::from_networks(s, a, head, config.clone())
}

/// An image with its quality score (higher is better).
#[derive(Clone, Debug)]
pub struct QualitySample {
    pub input: Tensor<f32>,
    pub score: f64,
}

impl QualitySample {
    pub fn from_image(image: &RgbImage, score: f64) -> Self {
        Self { input: image.to_tensor(), score }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub epochs: Vec<FinetuneEpoch>,
    pub steps: usize,
}

/// End-to-end training on whole images. Each mini-batch is split into
/// same-size groups whose gradients are summed before one Adam step; the
/// loss is averaged over the full mini-batch.
pub fn finetune(
    model: &mut DbCnnModel<f32>,
    samples: &[QualitySample],
    adam: &AdamConfig,
    seed: u64,
) -> Result<(FinetuneReport, AdamState<f32>)> {
    adam.validate()?;
    if samples.is_empty() {
        return Err(Error::domain("fine-tuning set is empty"));
    }
    if let Some(bad) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::domain(format!("non-finite quality score {}", bad.score)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AdamState::new(&model.params());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(adam.epochs);
    let mut step = 0usize;
    for epoch in 0..adam.epochs {
        let lr = adam.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(adam.batch_size) {
            let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
            for &i in batch {
                groups.entry(samples[i].input.shape().to_vec()).or_default().push(i);
            }
            let scale = batch.len() as f32;
            let mut total: Option<Gradients<f32>> = None;
            let mut caches = Vec::with_capacity(groups.len());
            for idx in groups.values() {
                let inputs: Vec<Tensor<f32>> = idx.iter().map(|&i| samples[i].input.clone()).collect();
                let scores: Vec<f32> = idx.iter().map(|&i| samples[i].score as f32).collect();
                let (preds, cache) = model.forward(&Tensor::stack(&inputs)?, Mode::Train)?;
                let loss = quality_loss(&scores, &preds, model.config.loss)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, step, detail: format!("quality loss {loss}") });
                }
                let weight = idx.len() as f32 / scale;
                loss_sum += f64::from(loss * weight) * batch.len() as f64;
                let mut dpred = quality_loss_grad(&scores, &preds, model.config.loss);
                dpred.iter_mut().for_each(|d| *d *= weight);
                let grads = model.backward(&cache, &dpred)?;
                match &mut total {
                    None => total = Some(grads),
                    Some(t) => t.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                }
                caches.push(cache);
            }
            let grads = total.expect("nonempty batch");
            if grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Diverged { epoch, step, detail: "non-finite gradient".into() });
            }
            state.step(adam, lr, &mut model.params_mut(), &grads)?;
            for cache in &caches {
                model.update_running_stats(cache);
            }
            step += 1;
        }
        let mean_loss = loss_sum / samples.len() as f64;
        log::info!("finetune epoch {epoch}: lr {lr:.2e} loss {mean_loss:.5}");
        epochs.push(FinetuneEpoch { epoch, learning_rate: lr, mean_loss });
    }
    Ok((FinetuneReport { epochs, steps: step }, state))
}

/// Contents of `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format: String,
    pub version: u32,
    pub scnn: String,
    pub aux: String,
    pub head: String,
    pub config: DbCnnConfig,
}

pub const MODEL_MANIFEST: &str = "model.json";
const MODEL_FORMAT: &str = "dbiqa-model";

impl DbCnnModel<f32> {
    /// Writes the three checkpoints, then the manifest naming them.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            version: 1,
            scnn: "scnn.ckpt".into(),
            aux: "aux.ckpt".into(),
            head: "head.ckpt".into(),
            config: self.config.clone(),
        };
        Checkpoint::from_network(&self.scnn, None).save(&dir.join(&manifest.scnn))?;
        Checkpoint::from_network(&self.aux, None).save(&dir.join(&manifest.aux))?;
        Checkpoint::from_network(&self.head, None).save(&dir.join(&manifest.head))?;
        let json = serde_json::to_vec_pretty(&manifest)?;
        crate::write_atomic(&dir.join(MODEL_MANIFEST), &json)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_MANIFEST);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ModelManifest = serde_json::from_slice(&bytes)?;
        if manifest.format != MODEL_FORMAT || manifest.version != 1 {
            return Err(Error::domain(format!(
                "unsupported model manifest {} v{}",
                manifest.format, manifest.version
            )));
        }
        let scnn = Checkpoint::load(&dir.join(&manifest.scnn))?.to_network()?;
        let aux = Checkpoint::load(&dir.join(&manifest.aux))?.to_network()?;
        let head = Checkpoint::load(&dir.join(&manifest.head))?.to_network()?;
        Self::from_networks(scnn, aux, head, manifest.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamConfig;

    fn stream(widths: &[usize], seed: u64) -> Checkpoint {
        let cfg = StreamConfig { conv_widths: widths.to_vec(), fc_widths: vec![8, 4], scale_side: 32, crop_side: 32 };
        let net: Network<f32> = Network::init(cfg.network_spec(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        Checkpoint::from_network(&net, None)
    }

    fn image(w: usize, h: usize, seed: u8) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            [(x * 7 + y * 3) as u8 ^ seed, (x * y) as u8, (x + 2 * y + seed as usize) as u8]
        })
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(quality_loss(&[0.0, 10.0], &[1.0, 7.0], QualityLoss::Absolute).unwrap(), 2.0);
        assert_eq!(quality_loss(&[0.0, 10.0], &[1.0, 7.0], QualityLoss::Squared).unwrap(), 5.0);
        assert_eq!(quality_loss(&[3.0, -1.0], &[3.0, -1.0], QualityLoss::Absolute).unwrap(), 0.0);
        assert_eq!(
            quality_loss(&[10.0, 0.0], &[7.0, 1.0], QualityLoss::Absolute).unwrap(),
            quality_loss(&[0.0, 10.0], &[1.0, 7.0], QualityLoss::Absolute).unwrap()
        );
        assert!(quality_loss(&[1.0], &[1.0, 2.0], QualityLoss::Absolute).is_err());
    }

    #[test]
    fn feature_length_is_d1_d2() {
        let model = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8], 2), &DbCnnConfig::default(), 3).unwrap();
        assert_eq!(model.feature_dims(), (8, 8));
        for (w, h) in [(64, 64), (96, 96), (40, 72)] {
            assert_eq!(model.feature_len(&image(w, h, 1)).unwrap(), 64);
            assert!(model.predict_quality(&image(w, h, 1)).unwrap().is_finite());
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let err = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8, 8], 2), &DbCnnConfig::default(), 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("distortion stream") && msg.contains("auxiliary stream"), "{msg}");
    }

    #[test]
    fn too_small_rejected() {
        let model = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8], 2), &DbCnnConfig::default(), 3).unwrap();
        assert!(matches!(model.predict_quality(&image(12, 40, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn deterministic_prediction_and_zero_epochs() {
        let mut model = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8], 2), &DbCnnConfig::default(), 3).unwrap();
        let img = image(32, 32, 5);
        let before = model.predict_quality(&img).unwrap();
        assert_eq!(before, model.predict_quality(&img).unwrap());
        let samples = vec![QualitySample::from_image(&img, 1.0)];
        let adam = AdamConfig { epochs: 0, ..finetune_adam_default() };
        finetune(&mut model, &samples, &adam, 9).unwrap();
        assert_eq!(model.predict_quality(&img).unwrap(), before);
    }

    #[test]
    fn finetune_reduces_loss_and_save_load_exact() {
        let mut model = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8], 2), &DbCnnConfig::default(), 3).unwrap();
        let samples: Vec<QualitySample> = (0..6)
            .map(|i| QualitySample::from_image(&image(24 + 8 * (i % 2), 32, i as u8 * 40), f64::from(i as u8 % 3)))
            .collect();
        let adam = AdamConfig { epochs: 8, ..finetune_adam_default() };
        let (report, _) = finetune(&mut model, &samples, &adam, 4).unwrap();
        assert!(report.epochs.last().unwrap().mean_loss < report.epochs[0].mean_loss);
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = DbCnnModel::load(dir.path()).unwrap();
        for s in &samples {
            let x = Tensor::stack(&[s.input.clone()]).unwrap();
            assert_eq!(
                model.forward(&x, Mode::Infer).unwrap().0[0].to_bits(),
                back.forward(&x, Mode::Infer).unwrap().0[0].to_bits()
            );
        }
    }

    #[test]
    fn duplicated_set_same_trajectory() {
        let base = build_dbcnn(&stream(&[4, 8], 1), &stream(&[4, 8], 2), &DbCnnConfig::default(), 3).unwrap();
        let samples: Vec<QualitySample> =
            (0..4).map(|i| QualitySample::from_image(&image(24, 24, i as u8 * 30), f64::from(i as u8))).collect();
        let adam = AdamConfig { epochs: 3, batch_size: 2, ..finetune_adam_default() };
        let (mut a, mut b) = (base.clone(), base);
        finetune(&mut a, &samples, &adam, 11).unwrap();
        finetune(&mut b, &samples.clone(), &adam, 11).unwrap();
        let img = image(24, 24, 77);
        assert_eq!(a.predict_quality(&img).unwrap().to_bits(), b.predict_quality(&img).unwrap().to_bits());
    }
}

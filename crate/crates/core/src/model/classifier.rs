//! Supervised classification training, shared by the distortion stream
//! and the auxiliary stream.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::StreamConfig;
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::nn::checkpoint::RngState;
use crate::nn::{softmax_cross_entropy, AdamConfig, AdamState, Checkpoint, Mode, Network, Tensor};

/// A preprocessed `[3, H, W]` input with its class label.
#[derive(Clone, Debug)]
pub struct ClassifierSample {
    pub input: Tensor<f32>,
    pub label: usize,
}

impl ClassifierSample {
    /// Resize to `scale_side`, center-crop to `crop_side`, convert.
    pub fn from_image(img: &RgbImage, label: usize, cfg: &StreamConfig) -> Result<Self> {
        let prepared = img.scale_and_crop(cfg.scale_side, cfg.crop_side)?;
        Ok(Self { input: prepared.to_tensor(), label })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean per-sample cross-entropy over the epoch's mini-batches.
    pub mean_loss: f64,
    /// Accuracy of the train-mode predictions made during the epoch.
    pub running_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss over the training set before any update
    /// (batch statistics, no parameter change).
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
    /// Inference-mode accuracy on the training set after training.
    pub train_accuracy: f64,
    pub held_out_accuracy: Option<f64>,
}

fn batch_of(samples: &[ClassifierSample], idx: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
    let inputs: Vec<Tensor<f32>> = idx.iter().map(|&i| samples[i].input.clone()).collect();
    Ok((Tensor::stack(&inputs)?, idx.iter().map(|&i| samples[i].label).collect()))
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Inference-mode top-1 accuracy.
pub fn accuracy(net: &Network<f32>, samples: &[ClassifierSample], batch: usize) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = batch_of(samples, chunk)?;
        let probs = net.infer(&x)?;
        let m = probs.shape()[1];
        correct += probs.data().chunks(m).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean per-sample loss in train mode (batch statistics) without updates.
fn mean_loss(net: &Network<f32>, samples: &[ClassifierSample], batch: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let logits_end = net.len() - 1;
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = batch_of(samples, chunk)?;
        let (logits, _) = net.forward_range(0..logits_end, &x, Mode::Train)?;
        total += f64::from(softmax_cross_entropy(&logits, &labels)?.0);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Trains `net` (which must end in a softmax) with the summed cross-entropy
/// loss and Adam on a per-epoch log-decaying learning rate.
pub fn train_classifier(
    net: &mut Network<f32>,
    train: &[ClassifierSample],
    held_out: &[ClassifierSample],
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrainReport, AdamState<f32>)> {
    adam.validate()?;
    if !net.spec().ends_with_softmax() {
        return Err(Error::domain("classifier network must end with softmax"));
    }
    if train.is_empty() {
        return Err(Error::domain("training set is empty"));
    }
    let classes = *net.spec().output_shape(&[1, 3, 16, 16])?.last().unwrap_or(&0);
    if let Some(bad) = train.iter().chain(held_out).find(|s| s.label >= classes) {
        return Err(Error::domain(format!("label {} out of range for {classes} classes", bad.label)));
    }
    let present: BTreeSet<usize> = train.iter().map(|s| s.label).collect();
    if present.len() < classes {
        let missing: Vec<usize> = (0..classes).filter(|c| !present.contains(c)).collect();
        log::warn!("classes absent from training set: {missing:?}");
    }

    let initial_loss = mean_loss(net, train, adam.batch_size)?;
    log::info!("initial loss per sample {initial_loss:.5}");
    let mut state = AdamState::new(&net.params());
    let logits_end = net.len() - 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(adam.epochs);
    let mut step = 0usize;
    for epoch in 0..adam.epochs {
        let lr = adam.learning_rate(epoch);
        order.shuffle(rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(adam.batch_size) {
            let (x, labels) = batch_of(train, chunk)?;
            let (logits, caches) = net.forward_range(0..logits_end, &x, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, detail: format!("cross-entropy {loss}") });
            }
            let m = logits.shape()[1];
            correct += logits.data().chunks(m).zip(&labels).filter(|(row, &l)| argmax(row) == l).count();
            loss_sum += f64::from(loss);
            let (_, grads) = net.backward(&caches, &dlogits)?;
            state.step(adam, lr, &mut net.params_mut(), &grads)?;
            net.update_running_stats(&caches);
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / train.len() as f64,
            running_accuracy: correct as f64 / train.len() as f64,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.4} acc {:.4}",
            stats.mean_loss,
            stats.running_accuracy
        );
        epochs.push(stats);
    }
    let train_accuracy = accuracy(net, train, adam.batch_size)?;
    let held_out_accuracy = if held_out.is_empty() { None } else { Some(accuracy(net, held_out, adam.batch_size)?) };
    Ok((TrainReport { initial_loss, epochs, train_accuracy, held_out_accuracy }, state))
}

/// Initializes a stream from `config` with He weights, trains it, and
/// packages the result as a checkpoint carrying the optimizer state, the
/// RNG position and the training report.
pub fn pretrain_stream(
    config: &StreamConfig,
    train: &[ClassifierSample],
    held_out: &[ClassifierSample],
    adam: &AdamConfig,
    seed: u64,
) -> Result<(Network<f32>, Checkpoint, TrainReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(config.network_spec(), &mut rng)?;
    let (report, state) = train_classifier(&mut net, train, held_out, adam, &mut rng)?;
    let mut ckpt = Checkpoint::from_network(&net, Some((&state, adam)));
    ckpt.rng = Some(RngState::capture(&rng));
    ckpt.meta = serde_json::json!({ "stream_config": config, "report": report, "seed": seed });
    Ok((net, ckpt, report))
}

/// Distortion-stream pre-training on the 39-class task.
pub fn scnn_pretrain(
    config: &StreamConfig,
    train: &[ClassifierSample],
    held_out: &[ClassifierSample],
    adam: &AdamConfig,
    seed: u64,
) -> Result<(Network<f32>, Checkpoint, TrainReport)> {
    if config.num_classes() != crate::forge::NUM_CLASSES {
        return Err(Error::domain(format!(
            "distortion stream must have {} outputs, config has {}",
            crate::forge::NUM_CLASSES,
            config.num_classes()
        )));
    }
    pretrain_stream(config, train, held_out, adam, seed)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, NetworkSpec};

/// Structure of one convolutional stream: stride-2 3x3 conv stages, each
/// followed by batch norm and ReLU, then global average pooling, fully
/// connected layers and softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub conv_widths: Vec<usize>,
    /// Widths of the fully connected layers; the last one is the class count.
    pub fc_widths: Vec<usize>,
    /// Training images are resized to `scale_side` square ...
    pub scale_side: usize,
    /// ... then center-cropped to `crop_side`.
    pub crop_side: usize,
}

/// Configuration of the distortion-classification stream.
pub type SCnnConfig = StreamConfig;
/// Configuration of the auxiliary (generic-content) stream.
pub type AuxStreamConfig = StreamConfig;

impl Default for StreamConfig {
    fn default() -> Self {
        Self::scnn_default()
    }
}

impl StreamConfig {
    /// Desk-scale distortion classifier: 56x56 crops, four stages.
    pub fn scnn_default() -> Self {
        Self { conv_widths: vec![16, 32, 64, 64], fc_widths: vec![128, 128, 39], scale_side: 64, crop_side: 56 }
    }

    /// Narrower auxiliary stream with the same downsampling routine.
    pub fn aux_default(classes: usize) -> Self {
        Self { conv_widths: vec![8, 16, 32, 32], fc_widths: vec![64, classes], scale_side: 64, crop_side: 56 }
    }

    pub fn num_classes(&self) -> usize {
        self.fc_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::domain("stream needs at least one conv stage with nonzero width"));
        }
        if self.fc_widths.is_empty() || self.fc_widths.contains(&0) || self.num_classes() < 2 {
            return Err(Error::domain("stream needs fully connected widths ending in at least two classes"));
        }
        if self.crop_side > self.scale_side || self.crop_side < crate::image::MIN_SIDE {
            return Err(Error::domain(format!(
                "crop side {} must be in [{}, scale side {}]",
                self.crop_side,
                crate::image::MIN_SIDE,
                self.scale_side
            )));
        }
        Ok(())
    }

    pub fn network_spec(&self) -> NetworkSpec {
        let mut layers = Vec::new();
        let mut c = 3;
        for &w in &self.conv_widths {
            layers.push(LayerSpec::conv3x3(c, w, 2));
            layers.push(LayerSpec::BatchNorm { channels: w });
            layers.push(LayerSpec::Relu);
            c = w;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        for (i, &f) in self.fc_widths.iter().enumerate() {
            layers.push(LayerSpec::FullyConnected { in_features: c, out_features: f });
            if i + 1 < self.fc_widths.len() {
                layers.push(LayerSpec::Relu);
            }
            c = f;
        }
        layers.push(LayerSpec::Softmax);
        NetworkSpec { input_channels: 3, layers }
    }
}

/// Number of leading layers kept when a stream is cut after its last
/// convolution block (the conv and the batch-norm/ReLU that follow it).
pub fn truncation_len(spec: &NetworkSpec) -> Result<usize> {
    let last = spec.last_conv().ok_or_else(|| Error::domain("stream has no convolution layer"))?;
    let mut end = last + 1;
    while matches!(spec.layers.get(end), Some(LayerSpec::BatchNorm { .. } | LayerSpec::Relu)) {
        end += 1;
    }
    Ok(end)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_shapes() {
        let cfg = StreamConfig::scnn_default();
        cfg.validate().unwrap();
        let spec = cfg.network_spec();
        spec.validate().unwrap();
        assert_eq!(spec.output_shape(&[2, 3, 56, 56]).unwrap(), vec![2, 39]);
        assert_eq!(truncation_len(&spec).unwrap(), 12);
        let trunc = NetworkSpec { input_channels: 3, layers: spec.layers[..12].to_vec() };
        assert_eq!(trunc.output_shape(&[1, 3, 56, 56]).unwrap(), vec![1, 64, 4, 4]);
    }
}

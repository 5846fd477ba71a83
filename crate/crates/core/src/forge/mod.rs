//! Synthetic distortion generation for the 39-class pre-training corpus.

mod blur;
mod dither;
mod jpeg;
mod noise;
pub mod stats;
mod synth;
mod tone;
mod wavelet;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub use synth::{
    derive_record_seed, read_manifest, synthesize_dataset, synthesize_records, write_manifest, SampleRecord,
    SynthConfig, SynthOutput, SynthSource, MANIFEST_NAME, PRISTINE_DIR,
};
pub use wavelet::{dwt2_forward, dwt2_inverse, WaveletKind};

/// Number of (kind, level) pre-training classes.
pub const NUM_CLASSES: usize = 39;

/// The nine synthetic distortion types, in class-enumeration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    GaussianBlur,
    WhiteNoise,
    Jpeg,
    Jp2kLike,
    ContrastStretch,
    PinkNoise,
    ColorQuantDither,
    OverExposure,
    UnderExposure,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 9] = [
        DistortionKind::GaussianBlur,
        DistortionKind::WhiteNoise,
        DistortionKind::Jpeg,
        DistortionKind::Jp2kLike,
        DistortionKind::ContrastStretch,
        DistortionKind::PinkNoise,
        DistortionKind::ColorQuantDither,
        DistortionKind::OverExposure,
        DistortionKind::UnderExposure,
    ];

    pub fn num_levels(self) -> u8 {
        match self {
            DistortionKind::OverExposure | DistortionKind::UnderExposure => 2,
            _ => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::GaussianBlur => "gaussian_blur",
            DistortionKind::WhiteNoise => "white_noise",
            DistortionKind::Jpeg => "jpeg",
            DistortionKind::Jp2kLike => "jp2k_like",
            DistortionKind::ContrastStretch => "contrast_stretch",
            DistortionKind::PinkNoise => "pink_noise",
            DistortionKind::ColorQuantDither => "color_quant_dither",
            DistortionKind::OverExposure => "over_exposure",
            DistortionKind::UnderExposure => "under_exposure",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn first_class(self) -> usize {
        Self::ALL
            .iter()
            .take_while(|&&k| k != self)
            .map(|k| k.num_levels() as usize)
            .sum()
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A (kind, level) pair with a level valid for its kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistortionClass {
    kind: DistortionKind,
    level: u8,
}

impl DistortionClass {
    pub fn new(kind: DistortionKind, level: u8) -> Result<Self> {
        if level == 0 || level > kind.num_levels() {
            return Err(Error::domain(format!(
                "level {level} out of range 1..={} for {kind}",
                kind.num_levels()
            )));
        }
        Ok(Self { kind, level })
    }

    pub fn kind(self) -> DistortionKind {
        self.kind
    }

    pub fn level(self) -> u8 {
        self.level
    }

    /// Position in the 39-class enumeration: kinds in declaration order,
    /// levels ascending within each kind.
    pub fn index(self) -> usize {
        self.kind.first_class() + (self.level as usize - 1)
    }

    pub fn from_index(index: usize) -> Result<Self> {
        let mut base = 0;
        for kind in DistortionKind::ALL {
            let n = kind.num_levels() as usize;
            if index < base + n {
                return Self::new(kind, (index - base + 1) as u8);
            }
            base += n;
        }
        Err(Error::domain(format!("class index {index} out of range 0..{NUM_CLASSES}")))
    }

    /// All 39 classes in index order.
    pub fn all() -> impl Iterator<Item = DistortionClass> {
        DistortionKind::ALL
            .into_iter()
            .flat_map(|k| (1..=k.num_levels()).map(move |l| DistortionClass { kind: k, level: l }))
    }
}

/// Validating form of [`DistortionClass::index`] for raw (kind, level) input.
pub fn class_index(kind: DistortionKind, level: u8) -> Result<usize> {
    DistortionClass::new(kind, level).map(DistortionClass::index)
}

/// Per-level parameter grids. Index `level - 1` selects the parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionParams {
    /// Gaussian standard deviation in pixels.
    pub blur_sigmas: [f64; 5],
    /// Additive Gaussian noise standard deviation (8-bit scale).
    pub white_noise_sigmas: [f64; 5],
    /// Multipliers applied to the standard luma/chroma quantization tables.
    pub jpeg_multipliers: [f64; 5],
    /// Dead-zone quantizer step on wavelet coefficients.
    pub jp2k_thresholds: [f64; 5],
    pub jp2k_wavelet: WaveletKind,
    pub jp2k_levels: usize,
    /// Sigmoid gain `g` of the contrast remap.
    pub contrast_gains: [f64; 5],
    pub pink_noise_sigmas: [f64; 5],
    /// Palette levels per channel.
    pub dither_levels: [u32; 5],
    pub over_exposure_gains: [f64; 2],
    pub under_exposure_gains: [f64; 2],
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self {
            blur_sigmas: [1.0, 2.0, 4.0, 8.0, 16.0],
            white_noise_sigmas: [4.0, 8.0, 16.0, 32.0, 64.0],
            jpeg_multipliers: [1.0, 2.0, 4.0, 8.0, 16.0],
            jp2k_thresholds: [4.0, 8.0, 16.0, 32.0, 64.0],
            jp2k_wavelet: WaveletKind::Cdf97,
            jp2k_levels: 3,
            contrast_gains: [3.0, 5.0, 8.0, 12.0, 18.0],
            pink_noise_sigmas: [4.0, 8.0, 16.0, 32.0, 64.0],
            dither_levels: [16, 8, 6, 4, 2],
            over_exposure_gains: [1.5, 2.5],
            under_exposure_gains: [0.66, 0.4],
        }
    }
}

impl DistortionParams {
    /// Checks every grid for values that would make a distortion undefined.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be finite and positive")))
            }
        };
        positive("blur_sigmas", &self.blur_sigmas)?;
        positive("white_noise_sigmas", &self.white_noise_sigmas)?;
        positive("jpeg_multipliers", &self.jpeg_multipliers)?;
        positive("jp2k_thresholds", &self.jp2k_thresholds)?;
        positive("contrast_gains", &self.contrast_gains)?;
        positive("pink_noise_sigmas", &self.pink_noise_sigmas)?;
        positive("over_exposure_gains", &self.over_exposure_gains)?;
        positive("under_exposure_gains", &self.under_exposure_gains)?;
        if self.dither_levels.iter().any(|&n| n < 2 || n > 256) {
            return Err(Error::domain("dither_levels must lie in 2..=256"));
        }
        if self.jp2k_levels == 0 {
            return Err(Error::domain("jp2k_levels must be at least 1"));
        }
        Ok(())
    }
}

/// Applies one distortion class to `img`. Output depends only on
/// `(img, class, seed, params)`.
pub fn apply_distortion(img: &RgbImage, class: DistortionClass, seed: u64, params: &DistortionParams) -> RgbImage {
    let li = class.level() as usize - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match class.kind() {
        DistortionKind::GaussianBlur => blur::gaussian_blur(img, params.blur_sigmas[li]),
        DistortionKind::WhiteNoise => noise::white_noise(img, params.white_noise_sigmas[li], &mut rng),
        DistortionKind::Jpeg => jpeg::jpeg_round_trip(img, params.jpeg_multipliers[li]),
        DistortionKind::Jp2kLike => {
            wavelet::jp2k_like(img, params.jp2k_thresholds[li], params.jp2k_wavelet, params.jp2k_levels)
        }
        DistortionKind::ContrastStretch => tone::contrast_stretch(img, params.contrast_gains[li]),
        DistortionKind::PinkNoise => noise::pink_noise(img, params.pink_noise_sigmas[li], &mut rng),
        DistortionKind::ColorQuantDither => dither::quantize_dither(img, params.dither_levels[li]),
        DistortionKind::OverExposure => tone::exposure(img, params.over_exposure_gains[li]),
        DistortionKind::UnderExposure => tone::exposure(img, params.under_exposure_gains[li]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_index_endpoints() {
        assert_eq!(class_index(DistortionKind::GaussianBlur, 1).unwrap(), 0);
        assert_eq!(class_index(DistortionKind::UnderExposure, 2).unwrap(), 38);
        assert!(class_index(DistortionKind::OverExposure, 3).is_err());
        assert!(class_index(DistortionKind::Jpeg, 0).is_err());
        assert!(class_index(DistortionKind::Jpeg, 6).is_err());
    }

    #[test]
    fn class_index_is_bijection() {
        // Oracle: explicit enumeration in declared order.
        let mut expected = Vec::new();
        for kind in DistortionKind::ALL {
            let levels = if matches!(kind, DistortionKind::OverExposure | DistortionKind::UnderExposure) { 2 } else { 5 };
            for level in 1..=levels {
                expected.push((kind, level));
            }
        }
        assert_eq!(expected.len(), 7 * 5 + 2 * 2);
        assert_eq!(expected.len(), NUM_CLASSES);
        for (i, &(k, l)) in expected.iter().enumerate() {
            assert_eq!(class_index(k, l).unwrap(), i);
            let back = DistortionClass::from_index(i).unwrap();
            assert_eq!((back.kind(), back.level()), (k, l));
        }
        assert!(DistortionClass::from_index(39).is_err());
        assert_eq!(DistortionClass::all().count(), 39);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in DistortionKind::ALL {
            assert_eq!(DistortionKind::from_name(k.name()), Some(k));
        }
    }

    #[test]
    fn default_params_validate() {
        DistortionParams::default().validate().unwrap();
        let mut p = DistortionParams::default();
        p.dither_levels[0] = 1;
        assert!(p.validate().is_err());
    }
}

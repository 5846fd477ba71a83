//! Run configuration: one TOML file with a table per command. Values are
//! layered as preset, then file, then command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dbiqa::eval::DEFAULT_BINS;
use dbiqa::forge::SynthConfig;
use dbiqa::model::{finetune_adam_default, DbCnnConfig, StreamConfig};
use dbiqa::nn::AdamConfig;
use dbiqa::toy::SHAPE_CLASSES;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sources: SourcesConfig,
    pub synth: SynthConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

/// Procedural source images for `make-sources`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourcesConfig {
    pub count: usize,
    pub side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub scnn: StreamConfig,
    pub scnn_adam: AdamConfig,
    /// The last FC width is replaced by the label count of the training set.
    pub aux: StreamConfig,
    pub aux_adam: AdamConfig,
    /// Size of the procedural shape set used when no labelled set is given.
    pub shape_count: usize,
    pub shape_side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub model: DbCnnConfig,
    pub adam: AdamConfig,
    /// Number of train/test sessions the sources are split into.
    pub sessions: usize,
    /// 1-based session whose training split is used.
    pub session: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub gmad_bins: usize,
    pub gmad_tolerance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sources: SourcesConfig::default(),
            synth: SynthConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl Default for SourcesConfig {
    fn default() -> Self {
        Self { count: 60, side: 64 }
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            scnn: StreamConfig::scnn_default(),
            scnn_adam: AdamConfig::default(),
            aux: StreamConfig::aux_default(SHAPE_CLASSES),
            aux_adam: AdamConfig::default(),
            shape_count: 400,
            shape_side: 64,
        }
    }
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { model: DbCnnConfig::default(), adam: finetune_adam_default(), sessions: 1, session: 1 }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { gmad_bins: DEFAULT_BINS, gmad_tolerance: None }
    }
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { trials: 20 }
    }
}

/// Optimizer settings the toy experiments were tuned with.
pub fn toy_scnn_adam() -> AdamConfig {
    AdamConfig { lr_start: 2e-3, lr_end: 2e-4, epochs: 30, batch_size: 16, ..AdamConfig::default() }
}

pub fn toy_aux_adam() -> AdamConfig {
    AdamConfig { lr_start: 2e-3, lr_end: 2e-4, epochs: 6, batch_size: 16, ..AdamConfig::default() }
}

impl RunConfig {
    /// Desk-scale preset: 56x56 crops, four-stage streams, enough sources
    /// for a 39-class run with held-out content.
    pub fn toy() -> Self {
        let mut cfg = Self::default();
        cfg.sources = SourcesConfig { count: 125, side: 64 };
        cfg.pretrain.scnn_adam = toy_scnn_adam();
        cfg.pretrain.aux_adam = toy_aux_adam();
        cfg
    }

    /// `base` overlaid with the TOML file at `path`; tables merge key by key.
    pub fn layered(base: &RunConfig, path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(base.clone());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let file: toml::Table =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| CliError::config(e.to_string()))?;
        merge(&mut merged, file);
        merged.try_into().map_err(|e: toml::de::Error| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let check = |what: &str, r: dbiqa::Result<()>| r.map_err(|e| CliError::config(format!("{what}: {e}")));
        check("synth", self.synth.params.validate())?;
        check("pretrain.scnn", self.pretrain.scnn.validate())?;
        check("pretrain.scnn_adam", self.pretrain.scnn_adam.validate())?;
        check("pretrain.aux", self.pretrain.aux.validate())?;
        check("pretrain.aux_adam", self.pretrain.aux_adam.validate())?;
        check("finetune.adam", self.finetune.adam.validate())?;
        if self.sources.count == 0 || self.sources.side < self.synth.min_side {
            return Err(CliError::config(format!(
                "sources: need count >= 1 and side >= synth.min_side ({})",
                self.synth.min_side
            )));
        }
        if self.finetune.sessions == 0 || !(1..=self.finetune.sessions).contains(&self.finetune.session) {
            return Err(CliError::config(format!(
                "finetune: session {} outside 1..={}",
                self.finetune.session, self.finetune.sessions
            )));
        }
        if self.eval.gmad_bins == 0 {
            return Err(CliError::config("eval.gmad_bins must be at least 1"));
        }
        if self.eval.gmad_tolerance.is_some_and(|t| !(t >= 0.0)) {
            return Err(CliError::config("eval.gmad_tolerance must be non-negative"));
        }
        if self.gradcheck.trials == 0 {
            return Err(CliError::config("gradcheck.trials must be at least 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::config(e.to_string()))
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::toy();
        let text = cfg.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn file_overrides_preset_per_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[pretrain.scnn_adam]\nepochs = 3\n").unwrap();
        let cfg = RunConfig::layered(&RunConfig::toy(), Some(&path)).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.pretrain.scnn_adam.epochs, 3);
        assert_eq!(cfg.pretrain.scnn_adam.batch_size, toy_scnn_adam().batch_size);
        assert_eq!(cfg.sources.count, 125);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[synth]\nbogus = 1\n").unwrap();
        assert!(matches!(RunConfig::layered(&RunConfig::default(), Some(&path)), Err(CliError::Config(_))));
    }

    #[test]
    fn bad_session_rejected() {
        let mut cfg = RunConfig::default();
        cfg.finetune.session = 2;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }
}

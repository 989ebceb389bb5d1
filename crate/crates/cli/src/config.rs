//! The run configuration: one JSON document, every field optional.
//!
//! Missing fields take desk-scale defaults (or the full training budgets with
//! `--paper-scale`). Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use nvmdtd::channel::{ChannelParams, NoiseModel, QuantizerSpec};
use nvmdtd::harness::{DriftSchedule, SweepDetector, SweepSpec};
use nvmdtd::nn::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A configuration problem, with the position in the file when known.
#[derive(Debug)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<(usize, usize)>,
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        ConfigError {
            path: None,
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.path, self.line) {
            (Some(p), Some((l, c))) => write!(f, "{}:{l}:{c}: {}", p.display(), self.message),
            (Some(p), None) => write!(f, "{}: {}", p.display(), self.message),
            (None, Some((l, c))) => write!(f, "line {l}, column {c}: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for generate, eval and dtd; `--seed` also overrides the train,
    /// sweep and session seeds.
    pub seed: u64,
    /// Network trained by `train`.
    pub model: ModelKind,
    pub channel: ChannelSection,
    pub generate: GenerateSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub sweep: SweepSpec,
    pub session: SessionSection,
    pub weights: WeightPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::defaults(ModelKind::Rnn, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub mu0: f64,
    pub mu1: f64,
    /// `sigma_i = ratio * mu_i` unless overridden below.
    pub ratio: f64,
    pub sigma0: Option<f64>,
    pub sigma1: Option<f64>,
    pub offset_mu_b: f64,
    pub sigma_b_over_mu1: f64,
    pub noise_model: NoiseModel,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            mu0: 1.0,
            mu1: 2.0,
            ratio: 0.1,
            sigma0: None,
            sigma1: None,
            offset_mu_b: -0.2,
            sigma_b_over_mu1: 0.04,
            noise_model: NoiseModel::Gaussian,
        }
    }
}

impl ChannelSection {
    pub fn params(&self) -> nvmdtd::Result<ChannelParams> {
        ChannelParams::new(
            self.mu0,
            self.mu1,
            self.sigma0.unwrap_or(self.ratio * self.mu0),
            self.sigma1.unwrap_or(self.ratio * self.mu1),
            self.offset_mu_b,
            self.sigma_b_over_mu1 * self.mu1,
            self.noise_model,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub blocks: usize,
    pub block_len: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            blocks: 1_000,
            block_len: 71,
        }
    }
}

/// Detector whose decisions label the DTD calibration blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Mlp,
    Rnn,
    /// The true bits; for testing the search itself.
    Genie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub blocks: usize,
    pub block_len: usize,
    pub detectors: Vec<SweepDetector>,
    pub quantizer: Option<QuantizerSpec>,
    /// `M` for `dtd` and the DTD detectors.
    pub dtd_blocks: usize,
    pub empirical_blocks: usize,
    pub reference: Reference,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            blocks: 100_000,
            block_len: 71,
            detectors: vec![
                SweepDetector::Midpoint,
                SweepDetector::Curve1,
                SweepDetector::Curve2,
                SweepDetector::Curve3,
            ],
            quantizer: None,
            dtd_blocks: 100,
            empirical_blocks: 20_000,
            reference: Reference::Rnn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionSection {
    pub reference: Reference,
    pub schedule: DriftSchedule,
}

impl Default for SessionSection {
    fn default() -> Self {
        SessionSection {
            reference: Reference::Rnn,
            schedule: DriftSchedule::default(),
        }
    }
}

/// Weight file locations. `{ratio}`, `{mu_b}`, `{sigma_b_over_mu1}` and
/// `{noise_model}` are replaced with the operating point, so a sweep can
/// use one network per point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightPaths {
    pub mlp: Option<String>,
    pub rnn: Option<String>,
}

impl WeightPaths {
    pub fn path_for(&self, kind: ModelKind, params: &ChannelParams) -> Option<PathBuf> {
        let template = match kind {
            ModelKind::Mlp => self.mlp.as_ref(),
            ModelKind::Rnn => self.rnn.as_ref(),
        }?;
        Some(PathBuf::from(
            template
                .replace("{ratio}", &params.ratio().to_string())
                .replace("{mu_b}", &params.offset_mu_b.to_string())
                .replace("{sigma_b_over_mu1}", &params.sigma_b_over_mu1().to_string())
                .replace("{noise_model}", params.noise_model.as_str()),
        ))
    }
}

impl RunConfig {
    pub fn defaults(model: ModelKind, paper_scale: bool) -> Self {
        let (train, test_blocks) = if paper_scale {
            (TrainConfig::paper_scale(model), 1_000_000)
        } else {
            (TrainConfig::desk_scale(model), 100_000)
        };
        RunConfig {
            seed: 1,
            model,
            channel: ChannelSection::default(),
            generate: GenerateSection::default(),
            train,
            eval: EvalSection {
                blocks: test_blocks,
                ..EvalSection::default()
            },
            sweep: SweepSpec {
                blocks_per_point: test_blocks,
                ..SweepSpec::default()
            },
            session: SessionSection::default(),
            weights: WeightPaths::default(),
        }
    }

    /// Parses `text` over the defaults for its `model` (or `model`, when
    /// given) and scale.
    pub fn resolve(text: &str, paper_scale: bool, model: Option<ModelKind>) -> Result<Self, ConfigError> {
        // Strict pass first so errors point into the user's file.
        let strict: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            path: None,
            line: Some((e.line(), e.column())),
            message: strip_position(&e.to_string()),
        })?;
        let mut user: Value = serde_json::from_str(text).map_err(|e| ConfigError::new(e.to_string()))?;
        let model = model.unwrap_or(strict.model);
        if let Value::Object(o) = &mut user {
            o.insert("model".into(), serde_json::to_value(model).expect("model serializes"));
        }
        let mut merged = serde_json::to_value(RunConfig::defaults(model, paper_scale))
            .map_err(|e| ConfigError::new(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| ConfigError::new(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, paper_scale: bool, model: Option<ModelKind>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(RunConfig::defaults(model.unwrap_or(ModelKind::Rnn), paper_scale));
        };
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: e.to_string(),
        })?;
        RunConfig::resolve(&text, paper_scale, model).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            ..e
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.sweep.seed = seed;
        self.session.schedule.seed = seed;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Overlays `over` onto `base`, recursing into objects only.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::resolve("{}", false, None).unwrap(), RunConfig::default());
        let full = RunConfig::resolve("{}", true, None).unwrap();
        assert_eq!(full.train.train_blocks, 40_000);
        assert_eq!(full.sweep.blocks_per_point, 1_000_000);
    }

    #[test]
    fn partial_sections_keep_model_defaults() {
        let cfg = RunConfig::resolve(r#"{"model": "mlp", "train": {"epochs": 3}}"#, false, None).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.minibatch_blocks, 4);
        assert_eq!(cfg.train.train_blocks, 40_000);
        let cfg = RunConfig::resolve(r#"{"train": {"epochs": 3}}"#, false, None).unwrap();
        assert_eq!(cfg.train.minibatch_blocks, 2);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = RunConfig::resolve("{\n  \"channel\": {\n    \"ratoi\": 0.1\n  }\n}", false, None).unwrap_err();
        assert_eq!(err.line.unwrap().0, 3);
        assert!(err.message.contains("ratoi"));
        let err = RunConfig::resolve("{\n  \"seed\": 1,,\n}", false, None).unwrap_err();
        assert_eq!(err.line.unwrap().0, 2);
    }

    #[test]
    fn resolved_echo_round_trips() {
        let cfg = RunConfig::resolve(r#"{"seed": 9, "eval": {"blocks": 10}}"#, false, None).unwrap();
        assert_eq!(RunConfig::resolve(&cfg.to_json(), false, None).unwrap(), cfg);
    }

    #[test]
    fn weight_templates() {
        let w = WeightPaths {
            mlp: None,
            rnn: Some("w/rnn_{ratio}_{mu_b}.weights".into()),
        };
        let p = ChannelParams::stt_mram(0.1, -0.2, 0.04, NoiseModel::Gaussian).unwrap();
        assert_eq!(w.path_for(ModelKind::Rnn, &p).unwrap(), PathBuf::from("w/rnn_0.1_-0.2.weights"));
        assert!(w.path_for(ModelKind::Mlp, &p).is_none());
    }

    #[test]
    fn channel_overrides() {
        let c = ChannelSection {
            sigma0: Some(0.1),
            sigma1: Some(0.1),
            ..ChannelSection::default()
        };
        let p = c.params().unwrap();
        assert_eq!((p.sigma0, p.sigma1), (0.1, 0.1));
        assert!((p.offset_sigma_b - 0.08).abs() < 1e-15);
    }
}

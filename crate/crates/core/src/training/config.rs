use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, FormatError, Result};
use crate::eventsim::{DEFAULT_INTERP_FACTOR, LOW_LIGHT_THRESHOLD, NORMAL_LIGHT_THRESHOLD};
use crate::io::{format_kv, parse_kv};
use crate::netcore::ModelConfig;

/// Optimisation settings plus the model shape they apply to.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub iterations: usize,
    pub batch: usize,
    /// Square crop side; must be a multiple of 4.
    pub crop: usize,
    pub lr: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub interp_factor: usize,
    pub low_threshold: f64,
    pub normal_threshold: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            iterations: 2000,
            batch: 4,
            crop: 64,
            lr: 2e-4,
            lambda1: 1.0,
            lambda2: 0.1,
            seed: 0,
            interp_factor: DEFAULT_INTERP_FACTOR,
            low_threshold: LOW_LIGHT_THRESHOLD,
            normal_threshold: NORMAL_LIGHT_THRESHOLD,
            model: ModelConfig::default(),
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| {
        FormatError::Malformed {
            what: "config",
            detail: format!("{key}: cannot parse {value:?}"),
        }
        .into()
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::pre(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(4) {
            return Err(Error::pre(format!(
                "crop {} is not a positive multiple of 4",
                self.crop
            )));
        }
        if self.batch == 0 || self.interp_factor == 0 {
            return Err(Error::pre("batch and interp_factor must be positive"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::pre("loss weights must be non-negative"));
        }
        if !(self.lr > 0.0) || !(self.low_threshold > 0.0) || !(self.normal_threshold > 0.0) {
            return Err(Error::pre("learning rate and event thresholds must be positive"));
        }
        if self.model.frames < 2 {
            return Err(Error::pre("at least two frames per sample are needed for events"));
        }
        self.model.validate()
    }

    /// Defaults overridden by the given keys; unknown keys are rejected.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        for (k, v) in map {
            let k = k.as_str();
            match k {
                "stage" => c.stage = parse(k, v)?,
                "iterations" => c.iterations = parse(k, v)?,
                "batch" => c.batch = parse(k, v)?,
                "crop" => c.crop = parse(k, v)?,
                "lr" => c.lr = parse(k, v)?,
                "lambda1" => c.lambda1 = parse(k, v)?,
                "lambda2" => c.lambda2 = parse(k, v)?,
                "seed" => c.seed = parse(k, v)?,
                "interp_factor" => c.interp_factor = parse(k, v)?,
                "low_threshold" => c.low_threshold = parse(k, v)?,
                "normal_threshold" => c.normal_threshold = parse(k, v)?,
                "channels" => c.model.channels = parse(k, v)?,
                "eift_modules" => c.model.eift_modules = parse(k, v)?,
                "heads" => c.model.heads = parse(k, v)?,
                "patch" => c.model.patch = parse(k, v)?,
                "pooled" => c.model.pooled = parse(k, v)?,
                "frames" => c.model.frames = parse(k, v)?,
                "event_guidance" => c.model.event_guidance = parse(k, v)?,
                _ => {
                    return Err(FormatError::Malformed {
                        what: "config",
                        detail: format!("unknown key {k:?}"),
                    }
                    .into())
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_kv(text)?)
    }

    /// Every field as `key=value` lines, readable by [`TrainConfig::parse`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        format_kv([
            ("stage", self.stage.to_string()),
            ("iterations", self.iterations.to_string()),
            ("batch", self.batch.to_string()),
            ("crop", self.crop.to_string()),
            ("lr", self.lr.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("seed", self.seed.to_string()),
            ("interp_factor", self.interp_factor.to_string()),
            ("low_threshold", self.low_threshold.to_string()),
            ("normal_threshold", self.normal_threshold.to_string()),
            ("channels", m.channels.to_string()),
            ("eift_modules", m.eift_modules.to_string()),
            ("heads", m.heads.to_string()),
            ("patch", m.patch.to_string()),
            ("pooled", m.pooled.to_string()),
            ("frames", m.frames.to_string()),
            ("event_guidance", m.event_guidance.to_string()),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let c = TrainConfig {
            stage: 2,
            lr: 1.5e-3,
            model: ModelConfig {
                event_guidance: false,
                eift_modules: 0,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::parse("crop=30").is_err());
        assert!(TrainConfig::parse("lambda1=-1").is_err());
        assert!(TrainConfig::parse("stage=3").is_err());
        assert!(TrainConfig::parse("learning_rate=1").is_err());
        assert!(TrainConfig::parse("batch=four").is_err());
        assert_eq!(TrainConfig::parse("# defaults\n").unwrap(), TrainConfig::default());
    }
}

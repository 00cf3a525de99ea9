//! Flat `key=value` run configuration.
//!
//! One text namespace covers the model and the training loop so a single
//! file (plus command-line overrides) pins an entire run. Unknown keys are
//! hard errors, never warnings.

use crate::net::EpitConfig;
use crate::train::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("{0}")]
    Invariant(String),
}

/// Everything a run needs: model shape plus training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub net: EpitConfig,
    pub train: TrainConfig,
}

impl Default for RunSettings {
    fn default() -> Self {
        let net = EpitConfig::default();
        let train = TrainConfig::default_for_alpha(net.alpha);
        Self { net, train }
    }
}

impl RunSettings {
    /// Parses ordered `key=value` lines. Blank lines and `#` comments are
    /// skipped. `hr_patch` defaults to `32 * alpha` unless set explicitly.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let pairs = parse_kv(text)?;
        Self::from_pairs(&pairs)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut settings = RunSettings::default();
        let mut hr_patch_explicit = false;
        for (key, value) in pairs {
            settings.set(key, value)?;
            if key == "hr_patch" {
                hr_patch_explicit = true;
            }
        }
        if !hr_patch_explicit {
            settings.train.hr_patch = 32 * settings.net.alpha;
        }
        settings.validate()?;
        Ok(settings)
    }

    /// Applies one `key=value` setting; the key must name a known field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let net_hit = self
            .net
            .set_field(key, value)
            .map_err(|msg| ConfigError::BadValue { key: key.to_string(), msg })?;
        if net_hit {
            if key == "alpha" {
                self.train.alpha = self.net.alpha;
            }
            return Ok(());
        }
        let train_hit = self
            .train
            .set_field(key, value)
            .map_err(|msg| ConfigError::BadValue { key: key.to_string(), msg })?;
        if train_hit {
            return Ok(());
        }
        Err(ConfigError::UnknownKey(key.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.net
            .validate()
            .map_err(|e| ConfigError::Invariant(e.to_string()))?;
        self.train
            .validate()
            .map_err(ConfigError::Invariant)?;
        if self.train.alpha != self.net.alpha {
            return Err(ConfigError::Invariant(format!(
                "train alpha {} disagrees with model alpha {}",
                self.train.alpha, self.net.alpha
            )));
        }
        Ok(())
    }

    /// Canonical text form: model keys then training keys, fixed order.
    /// Hashing this string gives the provenance id of a run.
    pub fn to_text(&self) -> String {
        let mut text = self.net.to_text();
        text.push_str(&self.train.to_text());
        text
    }
}

/// Ordered key=value pairs; duplicates are errors.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::BadLine { line: i + 1, text: raw.to_string() })?;
        let key = key.trim().to_string();
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey(key));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        let settings = RunSettings::default();
        let back = RunSettings::from_text(&settings.to_text()).unwrap();
        assert_eq!(back, settings);
    }

    #[test]
    fn unknown_key_is_hard_error() {
        assert!(matches!(
            RunSettings::from_text("learning_rate=0.1"),
            Err(ConfigError::UnknownKey(k)) if k == "learning_rate"
        ));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(matches!(
            RunSettings::from_text("alpha=2\nalpha=4"),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn alpha_sets_both_sides_and_patch_default() {
        let settings = RunSettings::from_text("alpha=4").unwrap();
        assert_eq!(settings.net.alpha, 4);
        assert_eq!(settings.train.alpha, 4);
        assert_eq!(settings.train.hr_patch, 128);
        let explicit = RunSettings::from_text("alpha=4\nhr_patch=64").unwrap();
        assert_eq!(explicit.train.hr_patch, 64);
    }

    #[test]
    fn comments_and_blanks_skipped() {
        let text = "# a comment\n\nchannels=16\n";
        let settings = RunSettings::from_text(text).unwrap();
        assert_eq!(settings.net.channels, 16);
    }
}

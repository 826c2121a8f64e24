//! Run configuration: one flat key=value file, every key optional with a
//! documented default, unknown and duplicate keys rejected. Values from the
//! `SCOPELOC_`-prefixed environment override the file; command-line flags
//! override both.

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::model::{default_stack, extended_stack, ModelConfig};
use crate::objective::WeightScheme;
use crate::train::TrainOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source_name} line {line}: expected `key = value`, got `{content}`")]
    BadLine {
        source_name: String,
        line: usize,
        content: String,
    },
    #[error("{source_name} line {line}: unknown key `{key}`")]
    UnknownKey {
        source_name: String,
        line: usize,
        key: String,
    },
    #[error("{source_name} line {line}: duplicate key `{key}`")]
    DuplicateKey {
        source_name: String,
        line: usize,
        key: String,
    },
    #[error("{source_name} line {line}: key `{key}`: `{value}` is not a valid {expected}")]
    BadValue {
        source_name: String,
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config: {0}")]
    Invalid(String),
}

/// Every tunable of the pipeline. Field by field:
///
/// | key                 | default             | meaning |
/// |---------------------|---------------------|---------|
/// | embed_dim           | 50                  | embedding width, must match the vector file |
/// | prior_count         | 24                  | candidate lengths per anchor token |
/// | class_count         | 6                   | assertion classes, background excluded |
/// | base_filters        | 8                   | filter count of the first conv pair |
/// | match_threshold     | 0.5                 | IoU at or above which a prior turns positive |
/// | max_seq_len         | 1024                | hard cap on document length in tokens |
/// | min_receptive_field | 0                   | 0 keeps the stock stack; otherwise extend until reached |
/// | learning_rate       | 0.001               | Adam step size |
/// | epochs              | 400                 | training epochs |
/// | batch_size          | 8                   | documents per optimizer step |
/// | shuffle             | true                | reshuffle training documents each epoch |
/// | weight_scheme       | inverse_frequency   | class weighting: `inverse_frequency` or `batch_fraction` |
/// | patience            | 0                   | early stop after this many stale epochs, 0 disables |
/// | gamma               | 0.7                 | decode confidence threshold |
/// | train_ratio         | 0.8                 | split fraction for training |
/// | val_ratio           | 0.1                 | split fraction for validation |
/// | test_ratio          | 0.1                 | split fraction for test |
/// | synth_documents     | 500                 | synthetic corpus size |
/// | synth_max_scope_len | 20                  | longest synthetic scope |
/// | seed                | 42                  | root seed for every random stream |
/// | corpus_dir          | unset               | corpus directory; commands that need one require it |
/// | embeddings_file     | unset               | embedding vector file |
/// | checkpoint_file     | unset               | model checkpoint |
/// | output_dir          | unset               | where command outputs land |
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub prior_count: usize,
    pub class_count: usize,
    pub base_filters: usize,
    pub match_threshold: f64,
    pub max_seq_len: usize,
    pub min_receptive_field: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub weight_scheme: WeightScheme,
    pub patience: usize,
    pub gamma: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
    pub synth_documents: usize,
    pub synth_max_scope_len: usize,
    pub seed: u64,
    pub corpus_dir: Option<PathBuf>,
    pub embeddings_file: Option<PathBuf>,
    pub checkpoint_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embed_dim: 50,
            prior_count: 24,
            class_count: 6,
            base_filters: 8,
            match_threshold: 0.5,
            max_seq_len: 1024,
            min_receptive_field: 0,
            learning_rate: 0.001,
            epochs: 400,
            batch_size: 8,
            shuffle: true,
            weight_scheme: WeightScheme::InverseFrequency,
            patience: 0,
            gamma: 0.7,
            train_ratio: 0.8,
            val_ratio: 0.1,
            test_ratio: 0.1,
            synth_documents: 500,
            synth_max_scope_len: 20,
            seed: 42,
            corpus_dir: None,
            embeddings_file: None,
            checkpoint_file: None,
            output_dir: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "embed_dim",
    "prior_count",
    "class_count",
    "base_filters",
    "match_threshold",
    "max_seq_len",
    "min_receptive_field",
    "learning_rate",
    "epochs",
    "batch_size",
    "shuffle",
    "weight_scheme",
    "patience",
    "gamma",
    "train_ratio",
    "val_ratio",
    "test_ratio",
    "synth_documents",
    "synth_max_scope_len",
    "seed",
    "corpus_dir",
    "embeddings_file",
    "checkpoint_file",
    "output_dir",
];

/// Environment prefix: `SCOPELOC_GAMMA=0.5` overrides the `gamma` key.
pub const ENV_PREFIX: &str = "SCOPELOC_";

struct Location<'a> {
    source_name: &'a str,
    line: usize,
}

impl RunConfig {
    /// Parse a flat key=value file on top of the defaults. `#` starts a
    /// comment line; blank lines are skipped; keys may appear at most once.
    pub fn from_str(content: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        for (i, raw) in content.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((key, value)) = trimmed.split_once('=') else {
                return Err(ConfigError::BadLine {
                    source_name: source_name.to_string(),
                    line,
                    content: trimmed.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    source_name: source_name.to_string(),
                    line,
                    key: key.to_string(),
                });
            }
            config.set(
                key,
                value,
                &Location {
                    source_name,
                    line,
                },
            )?;
        }
        Ok(config)
    }

    /// Apply `SCOPELOC_*` variables on top of this config. Unknown keys
    /// under the prefix are rejected just like unknown file keys.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<(), ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (name, value) in vars {
            let Some(suffix) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = suffix.to_ascii_lowercase();
            self.set(
                &key,
                value.trim(),
                &Location {
                    source_name: "environment",
                    line: 0,
                },
            )
            .map_err(|e| match e {
                ConfigError::UnknownKey { key, .. } => ConfigError::Invalid(format!(
                    "environment variable {name} maps to unknown key `{key}`"
                )),
                ConfigError::BadValue {
                    key,
                    value,
                    expected,
                    ..
                } => ConfigError::Invalid(format!(
                    "environment variable {name} (key `{key}`): `{value}` is not a valid {expected}"
                )),
                other => other,
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, at: &Location) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            value: &str,
            key: &str,
            expected: &'static str,
            at: &Location,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                source_name: at.source_name.to_string(),
                line: at.line,
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })
        }
        match key {
            "embed_dim" => self.embed_dim = parse(value, key, "positive integer", at)?,
            "prior_count" => self.prior_count = parse(value, key, "positive integer", at)?,
            "class_count" => self.class_count = parse(value, key, "positive integer", at)?,
            "base_filters" => self.base_filters = parse(value, key, "positive integer", at)?,
            "match_threshold" => self.match_threshold = parse(value, key, "number", at)?,
            "max_seq_len" => self.max_seq_len = parse(value, key, "positive integer", at)?,
            "min_receptive_field" => {
                self.min_receptive_field = parse(value, key, "integer", at)?
            }
            "learning_rate" => self.learning_rate = parse(value, key, "number", at)?,
            "epochs" => self.epochs = parse(value, key, "integer", at)?,
            "batch_size" => self.batch_size = parse(value, key, "positive integer", at)?,
            "shuffle" => self.shuffle = parse(value, key, "boolean (true/false)", at)?,
            "weight_scheme" => {
                self.weight_scheme = match value {
                    "inverse_frequency" => WeightScheme::InverseFrequency,
                    "batch_fraction" => WeightScheme::BatchFraction,
                    _ => {
                        return Err(ConfigError::BadValue {
                            source_name: at.source_name.to_string(),
                            line: at.line,
                            key: key.to_string(),
                            value: value.to_string(),
                            expected: "weight scheme (inverse_frequency/batch_fraction)",
                        })
                    }
                }
            }
            "patience" => self.patience = parse(value, key, "integer", at)?,
            "gamma" => self.gamma = parse(value, key, "number", at)?,
            "train_ratio" => self.train_ratio = parse(value, key, "number", at)?,
            "val_ratio" => self.val_ratio = parse(value, key, "number", at)?,
            "test_ratio" => self.test_ratio = parse(value, key, "number", at)?,
            "synth_documents" => {
                self.synth_documents = parse(value, key, "positive integer", at)?
            }
            "synth_max_scope_len" => {
                self.synth_max_scope_len = parse(value, key, "positive integer", at)?
            }
            "seed" => self.seed = parse(value, key, "unsigned integer", at)?,
            "corpus_dir" => self.corpus_dir = Some(PathBuf::from(value)),
            "embeddings_file" => self.embeddings_file = Some(PathBuf::from(value)),
            "checkpoint_file" => self.checkpoint_file = Some(PathBuf::from(value)),
            "output_dir" => self.output_dir = Some(PathBuf::from(value)),
            _ => {
                return Err(ConfigError::UnknownKey {
                    source_name: at.source_name.to_string(),
                    line: at.line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Sanity constraints that do not depend on any data file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("prior_count", self.prior_count),
            ("class_count", self.class_count),
            ("base_filters", self.base_filters),
            ("max_seq_len", self.max_seq_len),
            ("batch_size", self.batch_size),
            ("synth_documents", self.synth_documents),
            ("synth_max_scope_len", self.synth_max_scope_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.match_threshold) {
            return Err(ConfigError::Invalid(
                "match_threshold must lie in [0, 1]".to_string(),
            ));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(ConfigError::Invalid(
                "gamma must be a finite non-negative number".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(ConfigError::Invalid(
                "learning_rate must be a finite non-negative number".to_string(),
            ));
        }
        for (name, v) in [
            ("train_ratio", self.train_ratio),
            ("val_ratio", self.val_ratio),
            ("test_ratio", self.test_ratio),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_model_config(&self) -> ModelConfig {
        let conv_stack = if self.min_receptive_field == 0 {
            default_stack(self.base_filters)
        } else {
            extended_stack(self.base_filters, self.min_receptive_field)
        };
        ModelConfig {
            embed_dim: self.embed_dim,
            prior_count: self.prior_count,
            class_count: self.class_count,
            base_filters: self.base_filters,
            conv_stack,
            match_threshold: self.match_threshold,
            max_seq_len: self.max_seq_len,
            seed: self.seed,
        }
    }

    pub fn to_train_options(&self) -> TrainOptions {
        TrainOptions {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            shuffle: self.shuffle,
            weight_scheme: self.weight_scheme,
            gamma: self.gamma,
            patience: (self.patience > 0).then_some(self.patience),
            stop_at_val_macro: None,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_their_documentation() {
        let c = RunConfig::default();
        assert_eq!(c.embed_dim, 50);
        assert_eq!(c.prior_count, 24);
        assert_eq!(c.class_count, 6);
        assert_eq!(c.base_filters, 8);
        assert_eq!(c.match_threshold, 0.5);
        assert_eq!(c.max_seq_len, 1024);
        assert_eq!(c.min_receptive_field, 0);
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.epochs, 400);
        assert_eq!(c.batch_size, 8);
        assert!(c.shuffle);
        assert_eq!(c.weight_scheme, WeightScheme::InverseFrequency);
        assert_eq!(c.patience, 0);
        assert_eq!(c.gamma, 0.7);
        assert_eq!(c.train_ratio, 0.8);
        assert_eq!(c.val_ratio, 0.1);
        assert_eq!(c.test_ratio, 0.1);
        assert_eq!(c.synth_documents, 500);
        assert_eq!(c.synth_max_scope_len, 20);
        assert_eq!(c.seed, 42);
        assert_eq!(c.corpus_dir, None);
        assert_eq!(c.embeddings_file, None);
        assert_eq!(c.checkpoint_file, None);
        assert_eq!(c.output_dir, None);
        c.validate().unwrap();
    }

    #[test]
    fn empty_content_yields_defaults() {
        let parsed = RunConfig::from_str("", "test").unwrap();
        assert_eq!(parsed, RunConfig::default());
    }

    #[test]
    fn every_key_parses_and_lands_in_its_field() {
        let content = "\
# full override
embed_dim = 16
prior_count = 12
class_count = 4
base_filters = 2
match_threshold = 0.4
max_seq_len = 256
min_receptive_field = 24
learning_rate = 0.01
epochs = 7
batch_size = 3
shuffle = false
weight_scheme = batch_fraction
patience = 5
gamma = 0.9
train_ratio = 0.6
val_ratio = 0.2
test_ratio = 0.2
synth_documents = 50
synth_max_scope_len = 9
seed = 7
corpus_dir = data/corpus
embeddings_file = data/vectors.vec
checkpoint_file = run/model.ckpt
output_dir = run
";
        let c = RunConfig::from_str(content, "test").unwrap();
        assert_eq!(c.embed_dim, 16);
        assert_eq!(c.prior_count, 12);
        assert_eq!(c.class_count, 4);
        assert_eq!(c.base_filters, 2);
        assert_eq!(c.match_threshold, 0.4);
        assert_eq!(c.max_seq_len, 256);
        assert_eq!(c.min_receptive_field, 24);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.epochs, 7);
        assert_eq!(c.batch_size, 3);
        assert!(!c.shuffle);
        assert_eq!(c.weight_scheme, WeightScheme::BatchFraction);
        assert_eq!(c.patience, 5);
        assert_eq!(c.gamma, 0.9);
        assert_eq!(c.train_ratio, 0.6);
        assert_eq!(c.val_ratio, 0.2);
        assert_eq!(c.test_ratio, 0.2);
        assert_eq!(c.synth_documents, 50);
        assert_eq!(c.synth_max_scope_len, 9);
        assert_eq!(c.seed, 7);
        assert_eq!(c.corpus_dir, Some(PathBuf::from("data/corpus")));
        assert_eq!(c.embeddings_file, Some(PathBuf::from("data/vectors.vec")));
        assert_eq!(c.checkpoint_file, Some(PathBuf::from("run/model.ckpt")));
        assert_eq!(c.output_dir, Some(PathBuf::from("run")));
    }

    #[test]
    fn key_list_matches_the_struct() {
        // Setting every listed key must succeed; CONFIG_KEYS is the public
        // contract for documentation and error messages.
        let mut c = RunConfig::default();
        let at = Location {
            source_name: "test",
            line: 1,
        };
        for key in CONFIG_KEYS {
            let value = match *key {
                "shuffle" => "true",
                "weight_scheme" => "inverse_frequency",
                "match_threshold" | "learning_rate" | "gamma" | "train_ratio" | "val_ratio"
                | "test_ratio" => "0.5",
                _ => "3",
            };
            c.set(key, value, &at).unwrap();
        }
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_rejected() {
        let err = RunConfig::from_str("nope = 3\n", "test").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { line: 1, .. }));
        let err = RunConfig::from_str("gamma = 0.5\ngamma = 0.6\n", "test").unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { line: 2, .. }));
        let err = RunConfig::from_str("gamma\n", "test").unwrap_err();
        assert!(matches!(err, ConfigError::BadLine { line: 1, .. }));
        let err = RunConfig::from_str("epochs = many\n", "test").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { line: 1, .. }));
        let err = RunConfig::from_str("weight_scheme = golden\n", "test").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let c = RunConfig::from_str("\n# comment\n   \nseed = 9\n", "test").unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn environment_overrides_file_values() {
        let mut c = RunConfig::from_str("gamma = 0.5\n", "test").unwrap();
        c.apply_env([("SCOPELOC_GAMMA".to_string(), "0.9".to_string())])
            .unwrap();
        assert_eq!(c.gamma, 0.9);
        // Unrelated variables pass through untouched.
        c.apply_env([("PATH".to_string(), "/usr/bin".to_string())])
            .unwrap();
        assert_eq!(c.gamma, 0.9);
        let err = c
            .apply_env([("SCOPELOC_NOPE".to_string(), "1".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("SCOPELOC_NOPE"));
        let err = c
            .apply_env([("SCOPELOC_EPOCHS".to_string(), "soon".to_string())])
            .unwrap_err();
        assert!(err.to_string().contains("SCOPELOC_EPOCHS"));
    }

    #[test]
    fn validation_rejects_out_of_range_numbers() {
        let c = RunConfig { match_threshold: 1.5, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { gamma: -0.1, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { train_ratio: 0.0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        let c = RunConfig { batch_size: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn model_config_reflects_receptive_field_choice() {
        let c = RunConfig::default();
        assert_eq!(c.to_model_config().receptive_field(), 13);
        let c = RunConfig { min_receptive_field: 24, ..RunConfig::default() };
        assert!(c.to_model_config().receptive_field() >= 24);
    }

    #[test]
    fn train_options_reflect_patience_switch() {
        let c = RunConfig::default();
        assert_eq!(c.to_train_options().patience, None);
        let c = RunConfig { patience: 4, ..RunConfig::default() };
        assert_eq!(c.to_train_options().patience, Some(4));
    }
}

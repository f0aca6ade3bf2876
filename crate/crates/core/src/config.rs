//! Experiment configuration files: one `key=value` per line, `#` comments.
//!
//! Keys starting with `stage.` or `result.` are skipped so a pipeline
//! manifest can be fed back in as a configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use thiserror::Error;

use crate::augmentation::{FillerKind, PipelineConfig, Strategy};
use crate::trainer::TrainConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {key:?}; valid keys: {}", KEYS.join(", "))]
    UnknownKey { key: String },
    #[error("bad value for {key}: {message}")]
    Value { key: String, message: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
}

const KEYS: &[&str] = &[
    "corpus",
    "train",
    "valid",
    "test",
    "split",
    "pivot",
    "helper",
    "target",
    "mode",
    "strategy",
    "filler",
    "embed_dim",
    "d_lstm",
    "learning_rate",
    "clip_norm",
    "batch_size",
    "patience",
    "max_epochs",
    "filler_max_epochs",
    "bpe_merges",
    "iterations",
    "seed",
    "out",
];

/// Which single system `train` builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// pivot → target.
    OneToOne,
    /// {pivot, helper} → target with ⟨NULL⟩ for missing helper sentences.
    Null,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::OneToOne => "one_to_one",
            TrainMode::Null => "null",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// One corpus file cut by `split`, unless train/valid/test are given.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub split: [f64; 3],
    pub pivot: Option<String>,
    pub helper: Option<String>,
    pub target: Option<String>,
    pub mode: TrainMode,
    pub strategy: Strategy,
    pub filler: FillerKind,
    pub train_config: TrainConfig,
    /// Epoch cap of the filler model; defaults to `max_epochs`.
    pub filler_max_epochs: Option<usize>,
    pub bpe_merges: i64,
    pub iterations: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: None,
            train: None,
            valid: None,
            test: None,
            split: [0.8, 0.1, 0.1],
            pivot: None,
            helper: None,
            target: None,
            mode: TrainMode::Null,
            strategy: Strategy::FillIn,
            filler: FillerKind::MultiEncoder,
            train_config: TrainConfig::default(),
            filler_max_epochs: None,
            bpe_merges: 1000,
            iterations: 1,
            out: PathBuf::from("out"),
        }
    }
}

fn value_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        key: key.to_string(),
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| value_err(key, format!("{v:?} is not a valid number")))
}

fn positive(key: &str, v: &str) -> Result<usize, ConfigError> {
    let n: usize = num(key, v)?;
    if n == 0 {
        return Err(value_err(key, "must be positive"));
    }
    Ok(n)
}

fn positive_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = num(key, v)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(value_err(key, "must be positive"));
    }
    Ok(x)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut seen = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.starts_with("stage.") || k.starts_with("result.") {
                continue;
            }
            if !KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey { key: k.to_string() });
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    message: format!("duplicate key {k}"),
                });
            }
        }
        let mut c = ExperimentConfig::default();
        for (k, v) in &seen {
            c.set(k, v)?;
        }
        Ok(c)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let text = |v: &str| if v.is_empty() { None } else { Some(v.to_string()) };
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        let tc = &mut self.train_config;
        match key {
            "corpus" => self.corpus = path(v),
            "train" => self.train = path(v),
            "valid" => self.valid = path(v),
            "test" => self.test = path(v),
            "split" => {
                let parts: Vec<f64> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_, _>>()?;
                let sum: f64 = parts.iter().sum();
                if parts.len() != 3 || parts.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(value_err(key, "expected three positive fractions summing to 1"));
                }
                self.split = [parts[0], parts[1], parts[2]];
            }
            "pivot" => self.pivot = text(v),
            "helper" => self.helper = text(v),
            "target" => self.target = text(v),
            "mode" => {
                self.mode = match v {
                    "one_to_one" => TrainMode::OneToOne,
                    "null" => TrainMode::Null,
                    _ => return Err(value_err(key, format!("{v:?}; valid modes: one_to_one, null"))),
                }
            }
            "strategy" => self.strategy = v.parse().map_err(|m: String| value_err(key, m))?,
            "filler" => {
                self.filler = match v {
                    "multi" => FillerKind::MultiEncoder,
                    "one_to_one" => FillerKind::OneToOne,
                    _ => return Err(value_err(key, format!("{v:?}; valid fillers: multi, one_to_one"))),
                }
            }
            "embed_dim" => tc.embed_dim = positive(key, v)?,
            "d_lstm" => tc.d_lstm = positive(key, v)?,
            "learning_rate" => tc.learning_rate = positive_f64(key, v)?,
            "clip_norm" => tc.clip_norm = positive_f64(key, v)?,
            "batch_size" => tc.batch_size = positive(key, v)?,
            "patience" => tc.patience = positive(key, v)?,
            "max_epochs" => tc.max_epochs = positive(key, v)?,
            "filler_max_epochs" => self.filler_max_epochs = if v.is_empty() { None } else { Some(positive(key, v)?) },
            "bpe_merges" => self.bpe_merges = num(key, v)?,
            "iterations" => self.iterations = positive(key, v)?,
            "seed" => tc.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train_config.seed
    }

    /// Every key except `out`, in a fixed order, with defaults filled in.
    pub fn to_manifest_string(&self) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let opt = |s: &Option<String>| s.clone().unwrap_or_default();
        let tc = &self.train_config;
        let mut s = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("corpus", opt_path(&self.corpus)),
            ("train", opt_path(&self.train)),
            ("valid", opt_path(&self.valid)),
            ("test", opt_path(&self.test)),
            ("split", format!("{},{},{}", self.split[0], self.split[1], self.split[2])),
            ("pivot", opt(&self.pivot)),
            ("helper", opt(&self.helper)),
            ("target", opt(&self.target)),
            ("mode", self.mode.name().into()),
            ("strategy", self.strategy.name().into()),
            ("filler", self.filler.name().into()),
            ("embed_dim", tc.embed_dim.to_string()),
            ("d_lstm", tc.d_lstm.to_string()),
            ("learning_rate", tc.learning_rate.to_string()),
            ("clip_norm", tc.clip_norm.to_string()),
            ("batch_size", tc.batch_size.to_string()),
            ("patience", tc.patience.to_string()),
            ("max_epochs", tc.max_epochs.to_string()),
            ("filler_max_epochs", self.filler_max_epochs.map(|n| n.to_string()).unwrap_or_default()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("iterations", self.iterations.to_string()),
            ("seed", tc.seed.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Role languages for the multi-source commands; the pivot defaults to
    /// the corpus pivot.
    pub fn pipeline_config(&self, corpus_pivot: &str) -> Result<PipelineConfig, ConfigError> {
        let helper = self.helper.clone().ok_or(ConfigError::Missing("helper"))?;
        let target = self.target.clone().ok_or(ConfigError::Missing("target"))?;
        let filler_train = TrainConfig {
            max_epochs: self.filler_max_epochs.unwrap_or(self.train_config.max_epochs),
            ..self.train_config.clone()
        };
        Ok(PipelineConfig {
            pivot: self.pivot.clone().unwrap_or_else(|| corpus_pivot.to_string()),
            helper,
            target,
            strategy: self.strategy,
            filler: self.filler,
            filler_train,
            system_train: self.train_config.clone(),
            bpe_merges: self.bpe_merges,
        })
    }
}

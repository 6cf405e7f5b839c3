//! Flat `key = value` run configuration files.
//!
//! ```text
//! # comments start with '#'
//! train = data/khpos/train.txt
//! hidden = 64
//! clip = 0        # 0 disables clipping
//! ```

use crate::training::TrainConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}")]
    BadValue { line: usize, key: String, value: String },
    #[error("line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: String },
}

pub const KEYS: &[&str] = &[
    "train", "dev", "test", "out", "hidden", "stacks", "batch", "lr", "epochs", "seed", "clip", "threads", "shuffle",
];

/// Everything a training run needs besides the corpus contents.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            train_path: None,
            dev_path: None,
            test_path: None,
            out_dir: PathBuf::from("jointtag-out"),
        }
    }
}

/// Raw entries of a config file, validated against [`KEYS`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) =
                body.split_once('=').ok_or_else(|| ConfigError::Syntax { line, text: raw.to_string() })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line, text: raw.to_string() });
            }
            if !KEYS.contains(&key) {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
            if entries.insert(key.to_string(), (line, value.to_string())).is_some() {
                return Err(ConfigError::Duplicate { line, key: key.to_string() });
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| ConfigError::BadValue {
                line: *line,
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    /// Overlay this file onto `base`.
    pub fn apply(&self, base: &mut RunConfig) -> Result<(), ConfigError> {
        let t = &mut base.train;
        if let Some(v) = self.typed("hidden")? {
            t.hidden_dim = v;
        }
        if let Some(v) = self.typed("stacks")? {
            t.stacks = v;
        }
        if let Some(v) = self.typed("batch")? {
            t.batch_size = v;
        }
        if let Some(v) = self.typed("lr")? {
            t.lr = v;
        }
        if let Some(v) = self.typed("epochs")? {
            t.epochs = v;
        }
        if let Some(v) = self.typed("seed")? {
            t.seed = v;
        }
        if let Some(v) = self.typed::<f64>("clip")? {
            t.clip = clip_from(v);
        }
        if let Some(v) = self.typed("threads")? {
            t.threads = v;
        }
        if let Some(v) = self.typed("shuffle")? {
            t.shuffle = v;
        }
        let path = |k: &str| self.get(k).map(PathBuf::from);
        base.train_path = path("train").or(base.train_path.take());
        base.dev_path = path("dev").or(base.dev_path.take());
        base.test_path = path("test").or(base.test_path.take());
        if let Some(p) = path("out") {
            base.out_dir = p;
        }
        Ok(())
    }
}

/// Map a user-facing clip value to the training setting; zero turns clipping off.
pub fn clip_from(v: f64) -> Option<f64> {
    (v != 0.0).then_some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_configuration() {
        let c = RunConfig::default();
        assert_eq!(c.train.hidden_dim, 100);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.stacks, 2);
    }

    #[test]
    fn parses_and_applies() {
        let f = ConfigFile::parse("# run\nhidden = 64\n\nclip=0  # off\ntrain = a/b.txt\nshuffle = false\n").unwrap();
        let mut c = RunConfig::default();
        f.apply(&mut c).unwrap();
        assert_eq!(c.train.hidden_dim, 64);
        assert_eq!(c.train.clip, None);
        assert!(!c.train.shuffle);
        assert_eq!(c.train_path, Some(PathBuf::from("a/b.txt")));
        assert_eq!(c.train.epochs, 100);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ConfigFile::parse("hidden 64"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ConfigFile::parse("\nwidth = 3"), Err(ConfigError::UnknownKey { line: 2, .. })));
        assert!(matches!(ConfigFile::parse("seed=1\nseed=2"), Err(ConfigError::Duplicate { line: 2, .. })));
        let f = ConfigFile::parse("epochs = many").unwrap();
        assert!(matches!(f.apply(&mut RunConfig::default()), Err(ConfigError::BadValue { .. })));
    }
}

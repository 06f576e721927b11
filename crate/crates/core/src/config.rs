//! TOML pipeline configuration.
//!
//! ```toml
//! store_dir = "data/store"
//! ner_model = "models/ner.txt"
//! gazetteers = "models/gazetteers"
//! kb_dir = "models/kb"
//! sentiment_model = "models/sentiment.txt"
//! mention_mode = "ner"          # or "spot"
//! link_comments = false
//! listen = "127.0.0.1:8080"
//!
//! [link]
//! lp_min = 0.1
//! epsilon = 0.3
//! rho_min = 0.2
//! context_window = { sentences = 1 }
//!
//! [smoothing]
//! window = 7
//! order = 2
//!
//! [bounds]
//! not_before = "2016-01-01T00:00:00Z"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_timestamp, DateBounds};
use crate::nel::LinkParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MentionMode {
    /// Typed mentions from the sequence tagger.
    #[default]
    Ner,
    /// Anchor n-gram spotting against the KB.
    Spot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Smoothing {
    pub window: usize,
    pub order: usize,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self { window: 7, order: 2 }
    }
}

/// RFC 3339 strings; articles outside are rejected on ingest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub not_before: Option<String>,
    pub not_after: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub store_dir: PathBuf,
    pub ner_model: Option<PathBuf>,
    pub gazetteers: Option<PathBuf>,
    pub kb_dir: Option<PathBuf>,
    pub sentiment_model: Option<PathBuf>,
    pub mention_mode: MentionMode,
    pub link_comments: bool,
    pub listen: String,
    pub link: LinkParams,
    pub smoothing: Smoothing,
    pub bounds: BoundsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            store_dir: PathBuf::from("store"),
            ner_model: None,
            gazetteers: None,
            kb_dir: None,
            sentiment_model: None,
            mention_mode: MentionMode::Ner,
            link_comments: false,
            listen: "127.0.0.1:8080".to_string(),
            link: LinkParams::default(),
            smoothing: Smoothing::default(),
            bounds: BoundsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and resolve its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_relative_to(base);
        }
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_dir);
        for p in [
            &mut self.ner_model,
            &mut self.gazetteers,
            &mut self.kb_dir,
            &mut self.sentiment_model,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link.validate().map_err(ConfigError::Invalid)?;
        let Smoothing { window, order } = self.smoothing;
        if window < 3 || window % 2 == 0 || order >= window {
            return Err(ConfigError::Invalid(format!(
                "smoothing needs an odd window >= 3 and order < window, got window {window}, order {order}"
            )));
        }
        self.date_bounds()?;
        Ok(())
    }

    pub fn date_bounds(&self) -> Result<DateBounds, ConfigError> {
        let parse = |s: &Option<String>| {
            s.as_deref()
                .map(|v| parse_timestamp(v).map_err(|e| ConfigError::Invalid(format!("bound `{v}`: {e}"))))
                .transpose()
        };
        let b = DateBounds {
            not_before: parse(&self.bounds.not_before)?,
            not_after: parse(&self.bounds.not_after)?,
        };
        if let (Some(a), Some(z)) = (b.not_before, b.not_after) {
            if a > z {
                return Err(ConfigError::Invalid("not_before is after not_after".into()));
            }
        }
        Ok(b)
    }
}

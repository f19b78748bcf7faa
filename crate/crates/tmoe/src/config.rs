//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid
//! by command-line flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tmoe_core::experts::{ChannelFlags, StreamConfig};
use tmoe_core::train::TrainConfig;

use crate::error::{Error, Result};
use crate::formats::read_text;

/// Every key the config file may set. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub dropout: Option<f64>,
    pub clip_norm: Option<f64>,
    pub patience: Option<usize>,
    pub min_count: Option<usize>,
    pub d_word: Option<usize>,
    pub d_pos: Option<usize>,
    pub d_ne: Option<usize>,
    pub d_rel: Option<usize>,
    pub d_h: Option<usize>,
    pub d_att: Option<usize>,
    pub pos: Option<bool>,
    pub ne: Option<bool>,
    pub handcrafted: Option<bool>,
    pub relations: Option<bool>,
    pub vectors: Option<bool>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&read_text(p)?, p),
            None => Ok(FileConfig::default()),
        }
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            lr,
            epochs,
            batch_size,
            dropout,
            clip_norm,
            patience,
            min_count,
            d_word,
            d_pos,
            d_ne,
            d_rel,
            d_h,
            d_att,
            pos,
            ne,
            handcrafted,
            relations,
            vectors,
            workers
        )
    }
}

/// The fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub min_count: usize,
    pub d_word: usize,
    pub d_pos: usize,
    pub d_ne: usize,
    pub d_rel: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub pos: bool,
    pub ne: bool,
    pub handcrafted: bool,
    pub relations: bool,
    pub vectors: bool,
    pub workers: usize,
}

impl Resolved {
    pub fn from_file(c: &FileConfig, seed: u64) -> Self {
        let t = TrainConfig::default();
        let s = StreamConfig::default();
        Resolved {
            seed,
            lr: c.lr.unwrap_or(t.lr),
            epochs: c.epochs.unwrap_or(t.epochs),
            batch_size: c.batch_size.unwrap_or(t.batch_size),
            dropout: c.dropout.unwrap_or(t.dropout),
            clip_norm: c.clip_norm.unwrap_or(t.clip_norm),
            patience: c.patience.unwrap_or(t.patience),
            min_count: c.min_count.unwrap_or(1),
            d_word: c.d_word.unwrap_or(s.d_word),
            d_pos: c.d_pos.unwrap_or(s.d_pos),
            d_ne: c.d_ne.unwrap_or(s.d_ne),
            d_rel: c.d_rel.unwrap_or(s.d_rel),
            d_h: c.d_h.unwrap_or(s.d_h),
            d_att: c.d_att.unwrap_or(s.d_att),
            pos: c.pos.unwrap_or(true),
            ne: c.ne.unwrap_or(true),
            handcrafted: c.handcrafted.unwrap_or(true),
            relations: c.relations.unwrap_or(true),
            vectors: c.vectors.unwrap_or(true),
            workers: c.workers.unwrap_or(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("clip_norm", self.clip_norm),
            ("patience", self.patience as f64),
            ("workers", self.workers as f64),
            ("min_count", self.min_count as f64),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Usage(format!("{name} must be positive")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Usage(
                "lr must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn stream_config(&self) -> StreamConfig {
        StreamConfig {
            d_word: self.d_word,
            d_pos: self.d_pos,
            d_ne: self.d_ne,
            d_rel: self.d_rel,
            d_h: self.d_h,
            d_att: self.d_att,
            dropout: self.dropout,
            seed: self.seed,
            channels: ChannelFlags {
                pos: self.pos,
                ne: self.ne,
                handcrafted: self.handcrafted,
                relations: self.relations,
                pretrained_vectors: self.vectors,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            seed: self.seed,
            clip_norm: self.clip_norm,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain values serialize")
    }
}

//! Channel ablations: retrain with one input channel disabled at a time.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use super::eval::{evaluate, Question};
use super::loop_::{train_stream, EvalSet, TrainConfig};
use crate::error::{Error, Result};
use crate::experts::{init_params, ChannelFlags, StreamConfig, StreamKind};
use crate::features::{EncodedInstance, Resources, WordVectorTable};
use crate::mixture::MixtureMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationFlag {
    Pos,
    Ne,
    Handcrafted,
    Relations,
    PretrainedVectors,
}

impl AblationFlag {
    pub const ALL: [AblationFlag; 5] = [
        AblationFlag::Pos,
        AblationFlag::Ne,
        AblationFlag::Handcrafted,
        AblationFlag::Relations,
        AblationFlag::PretrainedVectors,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AblationFlag::Pos => "pos",
            AblationFlag::Ne => "ne",
            AblationFlag::Handcrafted => "handcrafted",
            AblationFlag::Relations => "relations",
            AblationFlag::PretrainedVectors => "vectors",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationFlag::Pos => "w/o POS",
            AblationFlag::Ne => "w/o NE",
            AblationFlag::Handcrafted => "w/o handcrafted features",
            AblationFlag::Relations => "w/o relations",
            AblationFlag::PretrainedVectors => "w/o pretrained word vectors",
        }
    }

    pub fn disable(self, c: &mut ChannelFlags) {
        match self {
            AblationFlag::Pos => c.pos = false,
            AblationFlag::Ne => c.ne = false,
            AblationFlag::Handcrafted => c.handcrafted = false,
            AblationFlag::Relations => c.relations = false,
            AblationFlag::PretrainedVectors => c.pretrained_vectors = false,
        }
    }
}

impl FromStr for AblationFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationFlag::ALL
            .into_iter()
            .find(|f| f.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation flag `{s}`")))
    }
}

pub struct AblationSetup<'a> {
    pub kind: StreamKind,
    pub stream: StreamConfig,
    pub train: TrainConfig,
    pub train_data: &'a [EncodedInstance],
    pub dev: &'a [Question],
    pub word_vectors: &'a WordVectorTable,
    pub resources: &'a Resources,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub key: String,
    pub label: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One `key<TAB>accuracy` line per row, accuracy with 6 decimals.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("config\tdev_accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.6}", r.key, r.accuracy);
        }
        s
    }

    pub fn to_aligned(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("Configuration".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>8}", "Configuration", "Dev acc");
        let _ = writeln!(s, "{}  {}", "-".repeat(width), "-".repeat(8));
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>7.2}%", r.label, 100.0 * r.accuracy);
        }
        s
    }
}

/// Trains and evaluates the all-channels model and then one model per
/// disabled flag, all with the same seeds. Returns `flags.len() + 1` rows.
pub fn ablation_run(setup: &AblationSetup<'_>, flags: &[AblationFlag]) -> Result<AblationTable> {
    let mut configs = Vec::with_capacity(flags.len() + 1);
    configs.push((
        String::from("all"),
        String::from("All channels"),
        setup.stream.channels,
    ));
    for &f in flags {
        let mut c = setup.stream.channels;
        f.disable(&mut c);
        configs.push((String::from(f.key()), String::from(f.label()), c));
    }
    let dev = EvalSet::Paired(setup.dev.to_vec());
    let mut rows = Vec::with_capacity(configs.len());
    for (key, label, channels) in configs {
        let cfg = StreamConfig {
            channels,
            ..setup.stream.clone()
        };
        let init = init_params(setup.kind, &cfg, setup.word_vectors, setup.resources)?;
        let outcome = train_stream(setup.kind, setup.train_data, &dev, &setup.train, init)?;
        let report = evaluate(&[&outcome.best], setup.dev, MixtureMode::WeightedSum)?;
        log::info!("ablation {key}: {:.4}", report.accuracy);
        rows.push(AblationRow {
            key,
            label,
            accuracy: report.accuracy,
        });
    }
    Ok(AblationTable { rows })
}

//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TMOE"  u32 version  u32 metadata_len  metadata (UTF-8 JSON)
//! then until end of file, per tensor:
//!   u32 name_len  name  u32 rank  u32 dims[rank]  f64 values (row-major)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tmoe_core::experts::{ChannelFlags, StreamConfig, StreamKind, StreamParams};
use tmoe_core::features::CorpusFreq;
use tmoe_core::train::{Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
use tmoe_core::{ParamSet, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TMOE";

#[derive(Serialize, Deserialize)]
struct ChannelsMeta {
    pos: bool,
    ne: bool,
    handcrafted: bool,
    relations: bool,
    pretrained_vectors: bool,
}

#[derive(Serialize, Deserialize)]
struct ConfigMeta {
    d_word: usize,
    d_pos: usize,
    d_ne: usize,
    d_rel: usize,
    d_h: usize,
    d_att: usize,
    dropout: f64,
    seed: u64,
    channels: ChannelsMeta,
}

#[derive(Serialize, Deserialize)]
struct TrainingMetaJson {
    epoch: usize,
    best_dev_accuracy: f64,
    source_task: String,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: String,
    config: ConfigMeta,
    training: TrainingMetaJson,
    vocab: Vec<String>,
    pos_tags: Vec<String>,
    ne_tags: Vec<String>,
    relations: Vec<String>,
    freq: Vec<(String, u64)>,
}

fn metadata(c: &Checkpoint) -> Metadata {
    let cfg = &c.stream.config;
    let ch = cfg.channels;
    Metadata {
        kind: c.stream.kind.name().to_string(),
        config: ConfigMeta {
            d_word: cfg.d_word,
            d_pos: cfg.d_pos,
            d_ne: cfg.d_ne,
            d_rel: cfg.d_rel,
            d_h: cfg.d_h,
            d_att: cfg.d_att,
            dropout: cfg.dropout,
            seed: cfg.seed,
            channels: ChannelsMeta {
                pos: ch.pos,
                ne: ch.ne,
                handcrafted: ch.handcrafted,
                relations: ch.relations,
                pretrained_vectors: ch.pretrained_vectors,
            },
        },
        training: TrainingMetaJson {
            epoch: c.meta.epoch,
            best_dev_accuracy: c.meta.best_dev_accuracy,
            source_task: c.meta.source_task.clone(),
        },
        vocab: c.vocab.clone(),
        pos_tags: c.pos_tags.clone(),
        ne_tags: c.ne_tags.clone(),
        relations: c.relations.clone(),
        freq: c.freq.iter().map(|(t, n)| (t.to_string(), n)).collect(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> std::result::Result<(), String> {
    let v = u32::try_from(v).map_err(|_| format!("{v} does not fit in u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(c: &Checkpoint) -> std::result::Result<Vec<u8>, String> {
    let meta = serde_json::to_vec(&metadata(c)).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(meta.len() + 8 * c.stream.params.numel() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&c.version.to_le_bytes());
    put_u32(&mut out, meta.len())?;
    out.extend_from_slice(&meta);
    for (name, t) in c.stream.params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<usize, String> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32("version")? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let meta_len = r.u32("metadata length")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| format!("metadata: {e}"))?;
    let kind: StreamKind = meta
        .kind
        .parse()
        .map_err(|e: tmoe_core::Error| e.to_string())?;

    let mut params = ParamSet::new();
    while !r.done() {
        let name_len = r.u32("tensor name length")?;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| "tensor name is not UTF-8".to_string())?
            .to_string();
        if !name.starts_with(&format!("{}.", kind.name())) {
            return Err(format!(
                "tensor `{name}` does not belong to a {kind} stream"
            ));
        }
        let rank = r.u32("rank")?;
        if !(1..=3).contains(&rank) {
            return Err(format!("tensor `{name}` has rank {rank}"));
        }
        let shape = (0..rank)
            .map(|_| r.u32("dimension"))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or("tensor too large")?, "tensor values")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| format!("tensor `{name}`: {e}"))?;
        if params.contains(&name) {
            return Err(format!("duplicate tensor `{name}`"));
        }
        params.insert(name, t);
    }

    let c = meta.config;
    let config = StreamConfig {
        d_word: c.d_word,
        d_pos: c.d_pos,
        d_ne: c.d_ne,
        d_rel: c.d_rel,
        d_h: c.d_h,
        d_att: c.d_att,
        dropout: c.dropout,
        seed: c.seed,
        channels: ChannelFlags {
            pos: c.channels.pos,
            ne: c.channels.ne,
            handcrafted: c.channels.handcrafted,
            relations: c.channels.relations,
            pretrained_vectors: c.channels.pretrained_vectors,
        },
    };
    config.validate().map_err(|e| e.to_string())?;
    if let Some(word) = params.get(&format!("{}.embed.word", kind.name())) {
        if word.rows() != meta.vocab.len() {
            return Err(format!(
                "word table has {} rows but the vocabulary has {} tokens",
                word.rows(),
                meta.vocab.len()
            ));
        }
    }
    Ok(Checkpoint {
        version,
        stream: StreamParams {
            kind,
            config,
            params,
        },
        meta: TrainingMeta {
            epoch: meta.training.epoch,
            best_dev_accuracy: meta.training.best_dev_accuracy,
            source_task: meta.training.source_task,
        },
        vocab: meta.vocab,
        pos_tags: meta.pos_tags,
        ne_tags: meta.ne_tags,
        relations: meta.relations,
        freq: CorpusFreq::from_counts(meta.freq),
    })
}

pub fn save(c: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(c).map_err(|reason| Error::Checkpoint {
        path: path.into(),
        reason,
    })?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Checkpoint {
        path: path.into(),
        reason,
    })
}

//! The three expert streams.
//!
//! * PQCN reads passage, question and choice (the full three-way attentive
//!   network),
//! * QCN reads only question and choice,
//! * PCN reads only passage and choice.
//!
//! Parameter names follow `<stream>.<block>.<tensor>`, for example
//! `qcn.choice_bilstm.fwd.w_i`. The scheme is stable across runs so that
//! checkpoints can be transferred between tasks.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::{
    EncodedInstance, EncodedSequence, Resources, WordVectorTable, FEATURE_COLUMNS, PAD,
};
use crate::layers::{self, BiLstmVars, LstmCellVars};
use crate::rng::{self, SeededRng};
use crate::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamKind {
    Pqcn,
    Qcn,
    Pcn,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Pqcn, StreamKind::Qcn, StreamKind::Pcn];

    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Pqcn => "pqcn",
            StreamKind::Qcn => "qcn",
            StreamKind::Pcn => "pcn",
        }
    }

    pub fn reads_passage(self) -> bool {
        self != StreamKind::Qcn
    }

    pub fn reads_question(self) -> bool {
        self != StreamKind::Pcn
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StreamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pqcn" => Ok(StreamKind::Pqcn),
            "qcn" => Ok(StreamKind::Qcn),
            "pcn" => Ok(StreamKind::Pcn),
            other => Err(Error::Config(format!("unknown stream `{other}`"))),
        }
    }
}

/// Input channels that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelFlags {
    pub pos: bool,
    pub ne: bool,
    pub handcrafted: bool,
    pub relations: bool,
    /// When off, the word table is randomly initialized even if pretrained
    /// vectors were loaded.
    pub pretrained_vectors: bool,
}

impl Default for ChannelFlags {
    fn default() -> Self {
        ChannelFlags {
            pos: true,
            ne: true,
            handcrafted: true,
            relations: true,
            pretrained_vectors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub d_word: usize,
    pub d_pos: usize,
    pub d_ne: usize,
    pub d_rel: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub dropout: f64,
    pub seed: u64,
    pub channels: ChannelFlags,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            d_word: 100,
            d_pos: 10,
            d_ne: 12,
            d_rel: 10,
            d_h: 96,
            d_att: 100,
            dropout: 0.4,
            seed: 0,
            channels: ChannelFlags::default(),
        }
    }
}

impl StreamConfig {
    /// Default sizes with `d_att` following `d_word`.
    pub fn with_word_dim(d_word: usize) -> Self {
        StreamConfig {
            d_word,
            d_att: d_word,
            ..StreamConfig::default()
        }
    }

    /// Width of the per-token channel concatenation.
    pub fn feature_dim(&self) -> usize {
        let hand = if self.channels.handcrafted {
            FEATURE_COLUMNS
        } else {
            0
        };
        self.d_word + self.d_pos + self.d_ne + self.d_rel + hand
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_word,
            self.d_pos,
            self.d_ne,
            self.d_rel,
            self.d_h,
            self.d_att,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("zero dimension in {dims:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::DropoutRate(self.dropout));
        }
        Ok(())
    }

    fn bilstm_inputs(&self, kind: StreamKind) -> Vec<(&'static str, usize)> {
        let f = self.feature_dim();
        let w = self.d_word;
        match kind {
            StreamKind::Pqcn => vec![("passage", f + w), ("question", f), ("choice", f + 2 * w)],
            StreamKind::Qcn => vec![("question", f), ("choice", f + w)],
            StreamKind::Pcn => vec![("passage", f), ("choice", f + w)],
        }
    }
}

fn attention_blocks(kind: StreamKind) -> &'static [&'static str] {
    match kind {
        StreamKind::Pqcn => &[
            "passage_question_attn",
            "choice_passage_attn",
            "choice_question_attn",
        ],
        StreamKind::Qcn => &["choice_question_attn"],
        StreamKind::Pcn => &["choice_passage_attn"],
    }
}

fn bilinear_blocks(kind: StreamKind) -> &'static [&'static str] {
    match kind {
        StreamKind::Pqcn => &["bilinear_choice_passage", "bilinear_choice_question"],
        StreamKind::Qcn => &["bilinear_choice_question"],
        StreamKind::Pcn => &["bilinear_choice_passage"],
    }
}

const GATES: [&str; 4] = ["i", "f", "o", "c"];

/// Embedding tables, which may be reinitialized row by row on transfer.
pub const EMBEDDING_BLOCKS: [&str; 4] = ["word", "pos", "ne", "rel"];

/// Range of the uniform initializer for tag and relation embeddings.
pub const TAG_INIT_RANGE: f64 = 0.1;

/// All learnable tensors of one expert.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamParams {
    pub kind: StreamKind,
    pub config: StreamConfig,
    pub params: ParamSet,
}

pub fn param_name(kind: StreamKind, block: &str, tensor: &str) -> String {
    format!("{}.{block}.{tensor}", kind.name())
}

/// Uniform draws with the word-table policy (PAD zeroed).
pub(crate) fn random_word_table(rows: usize, d_word: usize, rng: &mut SeededRng) -> Tensor {
    let mut t = rng::uniform(rng, &[rows, d_word], crate::features::WORD_INIT_RANGE);
    t.data_mut()[PAD * d_word..(PAD + 1) * d_word]
        .iter_mut()
        .for_each(|x| *x = 0.0);
    t
}

/// Initializes an expert. The word table is copied from `word_vectors`; tag
/// and relation tables are sized from `resources`; everything else is drawn
/// from a generator seeded by `config.seed`.
pub fn init_params(
    kind: StreamKind,
    config: &StreamConfig,
    word_vectors: &WordVectorTable,
    resources: &Resources,
) -> Result<StreamParams> {
    config.validate()?;
    if word_vectors.dim() != config.d_word {
        return Err(Error::Config(format!(
            "word vectors have dimension {}, config expects {}",
            word_vectors.dim(),
            config.d_word
        )));
    }
    let mut rng = rng::derive(config.seed, kind.name());
    let mut p = ParamSet::new();
    let name = |block: &str, t: &str| param_name(kind, block, t);

    let word = if config.channels.pretrained_vectors {
        word_vectors.matrix().clone()
    } else {
        let mut r = rng::derive(config.seed, "word-table-scratch");
        random_word_table(word_vectors.rows(), config.d_word, &mut r)
    };
    p.insert(name("embed", "word"), word);
    let tables = [
        ("pos", resources.pos.len(), config.d_pos),
        ("ne", resources.ner.len(), config.d_ne),
        ("rel", resources.lexicon.relation_count(), config.d_rel),
    ];
    for (t, rows, dim) in tables {
        p.insert(
            name("embed", t),
            rng::uniform(&mut rng, &[rows, dim], TAG_INIT_RANGE),
        );
    }

    let att_lim = 1.0 / libm::sqrt(config.d_word as f64);
    for block in attention_blocks(kind) {
        p.insert(
            name(block, "w"),
            rng::uniform(&mut rng, &[config.d_word, config.d_att], att_lim),
        );
    }

    let d_h = config.d_h;
    let k = 1.0 / libm::sqrt(d_h as f64);
    for (seq, d_in) in config.bilstm_inputs(kind) {
        let block = format!("{seq}_bilstm");
        for dir in ["fwd", "bwd"] {
            for g in GATES {
                p.insert(
                    name(&block, &format!("{dir}.w_{g}")),
                    rng::uniform(&mut rng, &[d_in, d_h], k),
                );
            }
            for g in GATES {
                p.insert(
                    name(&block, &format!("{dir}.u_{g}")),
                    rng::uniform(&mut rng, &[d_h, d_h], k),
                );
            }
            for g in GATES {
                let bias = if g == "f" { 1.0 } else { 0.0 };
                p.insert(
                    name(&block, &format!("{dir}.b_{g}")),
                    Tensor::filled(&[d_h], bias),
                );
            }
        }
    }

    let summary = 2 * d_h;
    let s_lim = 1.0 / libm::sqrt(summary as f64);
    for (seq, _) in config.bilstm_inputs(kind) {
        p.insert(
            name(&format!("{seq}_self_attn"), "w"),
            rng::uniform(&mut rng, &[summary], s_lim),
        );
    }
    for block in bilinear_blocks(kind) {
        p.insert(
            name(block, "w"),
            rng::uniform(&mut rng, &[summary, summary], s_lim),
        );
    }

    Ok(StreamParams {
        kind,
        config: config.clone(),
        params: p,
    })
}

struct Embedded {
    words: Var,
    features: Var,
}

/// Channels of a sequence that were computed against a sequence the stream
/// does not read. They are replaced by "no relation" and a zero column so
/// that the ignored text cannot reach the output.
#[derive(Clone, Copy, Default)]
struct Hidden {
    relations: bool,
    column: Option<usize>,
}

const SEEN: Hidden = Hidden {
    relations: false,
    column: None,
};

impl StreamParams {
    fn var(&self, tape: &mut Tape, block: &str, tensor: &str) -> Result<Var> {
        tape.param(&param_name(self.kind, block, tensor), &self.params)
    }

    fn bilstm_vars(&self, tape: &mut Tape, seq: &str) -> Result<BiLstmVars> {
        let block = format!("{seq}_bilstm");
        let mut cell = |dir: &str| -> Result<LstmCellVars> {
            let mut get = |kind: &str| -> Result<[Var; 4]> {
                let mut out = Vec::with_capacity(4);
                for g in GATES {
                    out.push(self.var(tape, &block, &format!("{dir}.{kind}_{g}"))?);
                }
                Ok([out[0], out[1], out[2], out[3]])
            };
            Ok(LstmCellVars {
                w: get("w")?,
                u: get("u")?,
                b: get("b")?,
            })
        };
        Ok(BiLstmVars {
            fwd: cell("fwd")?,
            bwd: cell("bwd")?,
        })
    }

    fn embed(&self, tape: &mut Tape, seq: &EncodedSequence, hidden: Hidden) -> Result<Embedded> {
        let cfg = &self.config;
        let n = seq.len();
        let no_relations = vec![0; n];
        let relations = if hidden.relations {
            &no_relations
        } else {
            &seq.relations
        };
        let table = self.var(tape, "embed", "word")?;
        let words = tape.gather(table, &seq.tokens)?;
        let mut parts = vec![words];
        let channels = [
            ("pos", cfg.channels.pos, &seq.pos, cfg.d_pos),
            ("ne", cfg.channels.ne, &seq.ner, cfg.d_ne),
            ("rel", cfg.channels.relations, relations, cfg.d_rel),
        ];
        for (t, on, ids, dim) in channels {
            let v = if on {
                let table = self.var(tape, "embed", t)?;
                tape.gather(table, ids)?
            } else {
                tape.constant(Tensor::zeros(&[n, dim]))
            };
            parts.push(v);
        }
        if cfg.channels.handcrafted {
            let mut data: Vec<f64> = seq.features.iter().flatten().copied().collect();
            if let Some(col) = hidden.column {
                data.iter_mut()
                    .skip(col)
                    .step_by(FEATURE_COLUMNS)
                    .for_each(|x| *x = 0.0);
            }
            parts.push(tape.constant(Tensor::new(vec![n, FEATURE_COLUMNS], data)?));
        }
        let features = tape.concat_cols(&parts)?;
        Ok(Embedded { words, features })
    }

    fn encode(&self, tape: &mut Tape, seq: &str, parts: &[Var]) -> Result<Var> {
        let rate = self.config.dropout;
        let input = tape.concat_cols(parts)?;
        let input = tape.dropout(input, rate)?;
        let lstm = self.bilstm_vars(tape, seq)?;
        let hidden = layers::bilstm(tape, input, &lstm)?;
        let hidden = tape.dropout(hidden, rate)?;
        let n = tape.value(hidden).rows();
        let w = self.var(tape, &format!("{seq}_self_attn"), "w")?;
        Ok(layers::self_attention(tape, hidden, w, &vec![false; n])?.output)
    }

    fn attend(&self, tape: &mut Tape, block: &str, query: Var, key: Var) -> Result<Var> {
        let w = self.var(tape, block, "w")?;
        let n = tape.value(key).rows();
        Ok(layers::seq_attention(tape, query, key, w, &vec![false; n])?.output)
    }

    fn bilinear(&self, tape: &mut Tape, block: &str, a: Var, b: Var) -> Result<Var> {
        let w = self.var(tape, block, "w")?;
        layers::bilinear_logit(tape, a, b, w)
    }

    /// Records the stream's forward pass and returns the `[1, 1]` probability
    /// that the instance's choice is correct. Dropout follows the tape mode.
    pub fn forward(&self, tape: &mut Tape, inst: &EncodedInstance) -> Result<Var> {
        let logit = match self.kind {
            StreamKind::Pqcn => {
                let p = self.embed(tape, &inst.passage, SEEN)?;
                let q = self.embed(tape, &inst.question, SEEN)?;
                let c = self.embed(tape, &inst.choice, SEEN)?;
                let p_q = self.attend(tape, "passage_question_attn", p.words, q.words)?;
                let c_p = self.attend(tape, "choice_passage_attn", c.words, p.words)?;
                let c_q = self.attend(tape, "choice_question_attn", c.words, q.words)?;
                let ps = self.encode(tape, "passage", &[p.features, p_q])?;
                let qs = self.encode(tape, "question", &[q.features])?;
                let cs = self.encode(tape, "choice", &[c.features, c_p, c_q])?;
                let l1 = self.bilinear(tape, "bilinear_choice_passage", cs, ps)?;
                let l2 = self.bilinear(tape, "bilinear_choice_question", cs, qs)?;
                tape.add(l1, l2)?
            }
            StreamKind::Qcn => {
                // Column 1 of the question and choice features is "in passage";
                // choice relations are looked up against the passage.
                let q = self.embed(
                    tape,
                    &inst.question,
                    Hidden {
                        relations: false,
                        column: Some(1),
                    },
                )?;
                let c = self.embed(
                    tape,
                    &inst.choice,
                    Hidden {
                        relations: true,
                        column: Some(1),
                    },
                )?;
                let c_q = self.attend(tape, "choice_question_attn", c.words, q.words)?;
                let qs = self.encode(tape, "question", &[q.features])?;
                let cs = self.encode(tape, "choice", &[c.features, c_q])?;
                self.bilinear(tape, "bilinear_choice_question", cs, qs)?
            }
            StreamKind::Pcn => {
                // Passage column 1 and choice column 2 are "in question";
                // passage relations are looked up against question and choice.
                let p = self.embed(
                    tape,
                    &inst.passage,
                    Hidden {
                        relations: true,
                        column: Some(1),
                    },
                )?;
                let c = self.embed(
                    tape,
                    &inst.choice,
                    Hidden {
                        relations: false,
                        column: Some(2),
                    },
                )?;
                let c_p = self.attend(tape, "choice_passage_attn", c.words, p.words)?;
                let ps = self.encode(tape, "passage", &[p.features])?;
                let cs = self.encode(tape, "choice", &[c.features, c_p])?;
                self.bilinear(tape, "bilinear_choice_passage", cs, ps)?
            }
        };
        tape.sigmoid(logit)
    }

    /// Evaluation-mode probability.
    pub fn predict(&self, inst: &EncodedInstance) -> Result<f64> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, inst)?;
        Ok(tape.scalar(y))
    }
}

pub fn forward_pqcn(tape: &mut Tape, inst: &EncodedInstance, params: &StreamParams) -> Result<Var> {
    expect_kind(params, StreamKind::Pqcn)?;
    params.forward(tape, inst)
}

pub fn forward_qcn(tape: &mut Tape, inst: &EncodedInstance, params: &StreamParams) -> Result<Var> {
    expect_kind(params, StreamKind::Qcn)?;
    params.forward(tape, inst)
}

pub fn forward_pcn(tape: &mut Tape, inst: &EncodedInstance, params: &StreamParams) -> Result<Var> {
    expect_kind(params, StreamKind::Pcn)?;
    params.forward(tape, inst)
}

fn expect_kind(params: &StreamParams, kind: StreamKind) -> Result<()> {
    if params.kind == kind {
        Ok(())
    } else {
        Err(Error::KindMismatch {
            expected: kind.name(),
            found: params.kind.name(),
        })
    }
}

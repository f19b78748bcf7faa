use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::relations::{lookup_relations, RelationLexicon};
use super::tokenize::tokenize;
use super::vocab::{build_vocab, TagVocab, Vocab};
use crate::error::{Error, Result};

/// Width of the handcrafted feature block: log term frequency and two
/// co-occurrence flags.
pub const FEATURE_COLUMNS: usize = 3;

/// Optional per-token tags for one channel, aligned with tokenizer output.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeqTags {
    pub passage: Option<Vec<String>>,
    pub question: Option<Vec<String>>,
    pub choice: Option<Vec<String>>,
}

/// One (passage, question, choice, label) triple. `id` names the question;
/// the two choices of a question share it and differ in `choice_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInstance {
    pub id: String,
    pub choice_index: usize,
    pub passage: String,
    pub question: String,
    pub choice: String,
    pub label: u8,
    pub pos: Option<SeqTags>,
    pub ner: Option<SeqTags>,
}

impl RawInstance {
    pub fn new(
        id: impl Into<String>,
        choice_index: usize,
        passage: impl Into<String>,
        question: impl Into<String>,
        choice: impl Into<String>,
        label: u8,
    ) -> Self {
        RawInstance {
            id: id.into(),
            choice_index,
            passage: passage.into(),
            question: question.into(),
            choice: choice.into(),
            label,
            pos: None,
            ner: None,
        }
    }
}

/// Token counts over a training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusFreq(BTreeMap<String, u64>);

impl CorpusFreq {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>) -> Self {
        let mut m = BTreeMap::new();
        for t in tokens {
            *m.entry(t.clone()).or_insert(0) += 1;
        }
        CorpusFreq(m)
    }

    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        CorpusFreq(counts.into_iter().collect())
    }

    pub fn count(&self, token: &str) -> u64 {
        self.0.get(token).copied().unwrap_or(0)
    }

    /// Tokens in sorted order with their counts.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Frozen lookup tables shared by every encoded instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Resources {
    pub vocab: Vocab,
    pub pos: TagVocab,
    pub ner: TagVocab,
    pub lexicon: RelationLexicon,
    pub freq: CorpusFreq,
}

impl Resources {
    /// Collects vocabulary, tag sets and corpus counts from `corpus`. Passage
    /// and question text are counted once per question id.
    pub fn build(corpus: &[RawInstance], lexicon: RelationLexicon, min_count: usize) -> Self {
        let mut seen = BTreeSet::new();
        let mut streams: Vec<Vec<String>> = Vec::new();
        let mut pos_tags: BTreeSet<&str> = BTreeSet::new();
        let mut ner_tags: BTreeSet<&str> = BTreeSet::new();
        for raw in corpus {
            if seen.insert(raw.id.as_str()) {
                streams.push(tokenize(&raw.passage));
                streams.push(tokenize(&raw.question));
            }
            streams.push(tokenize(&raw.choice));
            for (tags, set) in [(&raw.pos, &mut pos_tags), (&raw.ner, &mut ner_tags)] {
                if let Some(t) = tags {
                    for seq in [&t.passage, &t.question, &t.choice].into_iter().flatten() {
                        set.extend(seq.iter().map(String::as_str));
                    }
                }
            }
        }
        let vocab = build_vocab(streams.iter(), min_count);
        let freq = CorpusFreq::from_tokens(streams.iter().flatten());
        Resources {
            vocab,
            pos: TagVocab::from_tags(pos_tags),
            ner: TagVocab::from_tags(ner_tags),
            lexicon,
            freq,
        }
    }
}

/// All channels of one token sequence; every vector has the sequence length.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub tokens: Vec<usize>,
    pub pos: Vec<usize>,
    pub ner: Vec<usize>,
    pub relations: Vec<usize>,
    pub features: Vec<[f64; FEATURE_COLUMNS]>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.pos.len() == n
            && self.ner.len() == n
            && self.relations.len() == n
            && self.features.len() == n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInstance {
    pub id: String,
    pub choice_index: usize,
    pub label: u8,
    pub passage: EncodedSequence,
    pub question: EncodedSequence,
    pub choice: EncodedSequence,
}

/// Per-token `[ln(1 + corpus count), in first other, in second other]`.
/// Missing other sequences leave their column at zero.
pub fn handcrafted_features(
    seq: &[String],
    others: &[&[String]],
    freq: &CorpusFreq,
) -> Vec<[f64; FEATURE_COLUMNS]> {
    let sets: Vec<BTreeSet<&str>> = others
        .iter()
        .take(2)
        .map(|o| o.iter().map(String::as_str).collect())
        .collect();
    seq.iter()
        .map(|tok| {
            let mut row = [0.0; FEATURE_COLUMNS];
            row[0] = libm::log1p(freq.count(tok) as f64);
            for (k, set) in sets.iter().enumerate() {
                if set.contains(tok.as_str()) {
                    row[k + 1] = 1.0;
                }
            }
            row
        })
        .collect()
}

fn tag_ids(
    id: &str,
    field: &'static str,
    tokens: &[String],
    tags: Option<&Vec<String>>,
    vocab: &TagVocab,
) -> Result<Vec<usize>> {
    match tags {
        None => Ok(alloc::vec![0; tokens.len()]),
        Some(t) if t.len() != tokens.len() => Err(Error::TagLength {
            id: id.into(),
            field,
            tokens: tokens.len(),
            tags: t.len(),
        }),
        Some(t) => Ok(t.iter().map(|s| vocab.id(s)).collect()),
    }
}

/// Encodes every input channel of `raw` against frozen `res`.
///
/// Relations link passage tokens to question and choice tokens, question
/// tokens to choice tokens, and choice tokens to passage tokens.
pub fn encode_instance(raw: &RawInstance, res: &Resources) -> Result<EncodedInstance> {
    let p = tokenize(&raw.passage);
    let q = tokenize(&raw.question);
    let c = tokenize(&raw.choice);
    for (field, toks) in [("passage", &p), ("question", &q), ("choice", &c)] {
        if toks.is_empty() {
            return Err(Error::EmptySequence {
                id: raw.id.clone(),
                field,
            });
        }
    }
    let qc: Vec<String> = q.iter().chain(&c).cloned().collect();

    let seq = |field: &'static str,
               toks: &[String],
               rel_partner: &[String],
               others: [&[String]; 2],
               pick: fn(&SeqTags) -> Option<&Vec<String>>|
     -> Result<EncodedSequence> {
        Ok(EncodedSequence {
            tokens: toks.iter().map(|t| res.vocab.encode(t)).collect(),
            pos: tag_ids(
                &raw.id,
                field,
                toks,
                raw.pos.as_ref().and_then(pick),
                &res.pos,
            )?,
            ner: tag_ids(
                &raw.id,
                field,
                toks,
                raw.ner.as_ref().and_then(pick),
                &res.ner,
            )?,
            relations: lookup_relations(toks, rel_partner, &res.lexicon),
            features: handcrafted_features(toks, &others, &res.freq),
        })
    };

    Ok(EncodedInstance {
        id: raw.id.clone(),
        choice_index: raw.choice_index,
        label: raw.label,
        passage: seq("passage", &p, &qc, [&q, &c], |t| t.passage.as_ref())?,
        question: seq("question", &q, &c, [&p, &c], |t| t.question.as_ref())?,
        choice: seq("choice", &c, &p, [&p, &q], |t| t.choice.as_ref())?,
    })
}

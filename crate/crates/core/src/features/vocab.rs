use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token to index map. Index 0 is padding and index 1 the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    frozen: bool,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: BTreeMap::new(),
            frozen: false,
        };
        v.push(PAD_TOKEN);
        v.push(UNK_TOKEN);
        v
    }

    /// Rebuilds a frozen vocabulary from its index-ordered token list, as
    /// stored in checkpoints. The list must start with the reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Config(
                "vocabulary must start with <pad>, <unk>".to_string(),
            ));
        }
        let mut v = Vocab {
            tokens: Vec::new(),
            index: BTreeMap::new(),
            frozen: false,
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(Error::Config(alloc::format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
            v.push(&t);
        }
        v.frozen = true;
        Ok(v)
    }

    fn push(&mut self, token: &str) -> usize {
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    /// Adds a token if absent. Frozen vocabularies return `None` for new tokens.
    pub fn insert(&mut self, token: &str) -> Option<usize> {
        if let Some(&i) = self.index.get(token) {
            return Some(i);
        }
        if self.frozen {
            None
        } else {
            Some(self.push(token))
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of the lowercased `token`, or [`UNK`].
    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        match self.index.get(token) {
            Some(&i) => Some(i),
            None if token.chars().any(char::is_uppercase) => {
                self.index.get(&token.to_lowercase()).copied()
            }
            None => None,
        }
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds a frozen vocabulary of tokens seen at least `min_count` times,
/// ordered by descending frequency and then lexicographically.
pub fn build_vocab<'a, I, S>(streams: I, min_count: usize) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = &'a String>,
{
    let min_count = min_count.max(1);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for stream in streams {
        for tok in stream {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut v = Vocab::new();
    for (t, _) in ranked {
        v.push(t);
    }
    v.freeze();
    v
}

/// Tag string to id for one tag channel (POS or NE). Id 0 is the unknown tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab {
    tags: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for TagVocab {
    fn default() -> Self {
        TagVocab::from_tags(core::iter::empty::<&str>())
    }
}

impl TagVocab {
    /// Sorted, deduplicated tags after the reserved unknown tag.
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        let uniq: BTreeSet<&str> = tags.into_iter().filter(|t| *t != UNK_TOKEN).collect();
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(uniq.into_iter().map(str::to_string));
        Self::from_list(all)
    }

    /// Index-ordered list as stored in checkpoints.
    pub fn from_list(tags: Vec<String>) -> Self {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TagVocab { tags, index }
    }

    pub fn id(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }
}

/// Word embedding matrix aligned with a [`Vocab`].
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    matrix: Tensor,
    pretrained: Vec<bool>,
}

/// Range of the uniform initializer for rows without a pretrained vector.
pub const WORD_INIT_RANGE: f64 = 0.1;

impl WordVectorTable {
    /// Every row drawn uniformly from `±WORD_INIT_RANGE`, PAD zeroed.
    pub fn random(vocab: &Vocab, d_word: usize, seed: u64) -> Self {
        let mut r = rng::derive(seed, "word-vectors");
        let mut matrix = rng::uniform(&mut r, &[vocab.len(), d_word], WORD_INIT_RANGE);
        matrix.data_mut()[..d_word]
            .iter_mut()
            .for_each(|x| *x = 0.0);
        WordVectorTable {
            matrix,
            pretrained: vec![false; vocab.len()],
        }
    }

    /// Starts from [`WordVectorTable::random`] and overwrites the rows of
    /// in-vocabulary tokens found in `vectors`. Entries are `(token, values)`
    /// in file order; the first occurrence of a token wins.
    pub fn build<I>(vocab: &Vocab, d_word: usize, seed: u64, vectors: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut table = Self::random(vocab, d_word, seed);
        for (line, (token, values)) in vectors.into_iter().enumerate() {
            if values.len() != d_word {
                return Err(Error::VectorDimension {
                    expected: d_word,
                    found: values.len(),
                    line: line + 1,
                });
            }
            let Some(i) = vocab.get(&token) else { continue };
            if i == PAD || table.pretrained[i] {
                continue;
            }
            table.matrix.data_mut()[i * d_word..(i + 1) * d_word].copy_from_slice(&values);
            table.pretrained[i] = true;
        }
        Ok(table)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_pretrained(&self, index: usize) -> bool {
        self.pretrained[index]
    }

    pub fn pretrained_count(&self) -> usize {
        self.pretrained.iter().filter(|&&p| p).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize;

    #[test]
    fn frequency_then_lexicographic_order() {
        let s = tokenize("a a b");
        let v = build_vocab([&s], 1);
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "a", "b"]);
        let s = tokenize("c b b a c");
        let v = build_vocab([&s], 1);
        assert_eq!(v.tokens(), [PAD_TOKEN, UNK_TOKEN, "b", "c", "a"]);
    }

    #[test]
    fn min_count_threshold() {
        let s = tokenize("a a b");
        let v = build_vocab([&s], 2);
        assert_eq!(v.get("b"), None);
        assert_eq!(v.encode("b"), UNK);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn empty_stream_has_reserved_only() {
        let v = build_vocab(core::iter::empty::<&Vec<String>>(), 1);
        assert_eq!(v.len(), 2);
        assert!(v.is_frozen());
    }

    #[test]
    fn frozen_vocab_rejects_insert() {
        let mut v = Vocab::new();
        assert_eq!(v.insert("x"), Some(2));
        v.freeze();
        assert_eq!(v.insert("y"), None);
        assert_eq!(v.insert("x"), Some(2));
    }

    #[test]
    fn word_vectors_empty_file() {
        let s = tokenize("fire wood");
        let v = build_vocab([&s], 1);
        let t = WordVectorTable::build(&v, 4, 9, Vec::new()).unwrap();
        assert!(t.matrix().row(PAD).iter().all(|&x| x == 0.0));
        assert!(t.matrix().row(2).iter().any(|&x| x != 0.0));
        assert_eq!(t.pretrained_count(), 0);
    }

    #[test]
    fn word_vectors_passthrough_and_dimension_error() {
        let s = tokenize("fire wood");
        let v = build_vocab([&s], 1);
        let entries = vec![("fire".to_string(), vec![1.0, 0.0, 0.0, 0.0])];
        let t = WordVectorTable::build(&v, 4, 9, entries).unwrap();
        let fire = v.encode("fire");
        assert_eq!(t.matrix().row(fire), &[1.0, 0.0, 0.0, 0.0]);
        assert!(t.is_pretrained(fire));

        let bad = vec![
            ("fire".to_string(), vec![1.0; 4]),
            ("wood".to_string(), vec![1.0; 3]),
        ];
        assert_eq!(
            WordVectorTable::build(&v, 4, 9, bad),
            Err(Error::VectorDimension {
                expected: 4,
                found: 3,
                line: 2
            })
        );
    }

    #[test]
    fn word_vectors_seed_determinism() {
        let s = tokenize("x y z");
        let v = build_vocab([&s], 1);
        let a = WordVectorTable::random(&v, 5, 42);
        let b = WordVectorTable::random(&v, 5, 42);
        assert!(a.matrix().bit_eq(b.matrix()));
        let c = WordVectorTable::random(&v, 5, 43);
        assert!(!a.matrix().bit_eq(c.matrix()));
    }

    #[test]
    fn tag_vocab_sorted_with_unknown_first() {
        let t = TagVocab::from_tags(["NN", "DT", "NN", "VB"]);
        assert_eq!(t.tags(), [UNK_TOKEN, "DT", "NN", "VB"]);
        assert_eq!(t.id("XX"), 0);
        assert_eq!(t.id("NN"), 2);
    }
}

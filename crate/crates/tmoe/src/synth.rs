//! Seeded synthetic corpora with a planted answer signal.
//!
//! Every corpus is built from numbered token pairs `(q{i}, a{i})`: a cue
//! word and the answer word it is associated with. A multiple-choice record
//! asks about a cue and offers its answer against the answer of another pair
//! from the same split. Where the association can be found depends on
//! [`Signal`]; the pair list can additionally be exposed through the relation
//! lexicon or through shared word-vector directions.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use tmoe_core::features::tokenize;
use tmoe_core::rng::{derive, SeededRng};

use crate::error::{Error, Result};
use crate::formats::{
    lexicon_text, to_jsonl, word_vectors_text, write_text, EntailmentLine, McRecord, StoryLine,
    TagRecord,
};

const FILLER: &[&str] = &[
    "red", "green", "blue", "small", "large", "old", "new", "warm", "cold", "quiet", "loud",
    "bright", "dark", "soft", "round", "long", "short", "wet", "dry", "slow",
];
const NOUNS: &[&str] = &[
    "box", "hill", "road", "tree", "lamp", "door", "cup", "bell", "rope", "coin",
];
const VERBS: &[&str] = &["stood", "waited", "rested", "stayed", "sat"];
const DEV_SALT: u64 = 0xd3f;

pub fn cue(i: usize) -> String {
    format!("q{i}")
}

pub fn answer(i: usize) -> String {
    format!("a{i}")
}

/// Where a multiple-choice record carries its answer signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Signal {
    /// The passage states the pair and the question names the cue.
    Both,
    /// Only the question names the cue; the passage is filler.
    Question,
    /// Only the passage mentions the answer; the question is generic.
    Passage,
}

impl FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "both" => Ok(Signal::Both),
            "question" => Ok(Signal::Question),
            "passage" => Ok(Signal::Passage),
            _ => Err(format!("unknown signal `{s}` (both, question, passage)")),
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::Both => "both",
            Signal::Question => "question",
            Signal::Passage => "passage",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McSpec {
    pub questions: usize,
    /// Pair ids this split draws from.
    pub pairs: Range<usize>,
    pub signal: Signal,
    pub id_prefix: String,
    pub seed: u64,
}

fn filler_sentence(rng: &mut SeededRng) -> String {
    format!(
        "the {} {} {} by the {} {} .",
        FILLER.choose(rng).unwrap(),
        NOUNS.choose(rng).unwrap(),
        VERBS.choose(rng).unwrap(),
        FILLER.choose(rng).unwrap(),
        NOUNS.choose(rng).unwrap()
    )
}

/// Deterministic tag for a token, so the tag channels carry part-of-speech
/// like structure without revealing the answer.
fn pos_tag(token: &str) -> &'static str {
    match token {
        "the" => "DT",
        "what" | "which" => "WP",
        "." | "?" => "PUNCT",
        t if VERBS.contains(&t) || ["came", "was", "went"].contains(&t) => "VBD",
        t if FILLER.contains(&t) => "JJ",
        t if ["before", "after", "by", "then", "here", "first", "next"].contains(&t) => "IN",
        _ => "NN",
    }
}

fn ne_tag(token: &str) -> &'static str {
    let numbered = |p: char| {
        token.starts_with(p) && token.len() > 1 && token[1..].chars().all(|c| c.is_ascii_digit())
    };
    if numbered('q') || numbered('a') {
        "ITEM"
    } else {
        "O"
    }
}

fn tags(text: &str, f: fn(&str) -> &'static str) -> Vec<String> {
    tokenize(text).iter().map(|t| f(t).to_string()).collect()
}

fn tag_record(p: &str, q: &str, choices: &[String], f: fn(&str) -> &'static str) -> TagRecord {
    TagRecord {
        passage: Some(tags(p, f)),
        question: Some(tags(q, f)),
        choices: Some(choices.iter().map(|c| tags(c, f)).collect()),
    }
}

/// Multiple-choice records. The correct position is drawn uniformly.
pub fn mc_records(spec: &McSpec) -> Vec<McRecord> {
    assert!(
        spec.pairs.len() >= 2,
        "need at least two pairs for a distractor"
    );
    let mut rng = derive(spec.seed, &format!("mc-{}", spec.id_prefix));
    let pairs: Vec<usize> = spec.pairs.clone().collect();
    (0..spec.questions)
        .map(|n| {
            let i = pairs[n % pairs.len()];
            let j = loop {
                let j = *pairs.choose(&mut rng).unwrap();
                if j != i {
                    break j;
                }
            };
            let (c, a, d) = (cue(i), answer(i), answer(j));
            let (passage, question) = match spec.signal {
                Signal::Both => (
                    format!(
                        "{} the {c} came before the {a} . {}",
                        filler_sentence(&mut rng),
                        filler_sentence(&mut rng)
                    ),
                    format!("what came after the {c} ?"),
                ),
                Signal::Question => (
                    format!(
                        "{} {}",
                        filler_sentence(&mut rng),
                        filler_sentence(&mut rng)
                    ),
                    format!("what came after the {c} ?"),
                ),
                Signal::Passage => (
                    format!(
                        "{} the {a} was here . {}",
                        filler_sentence(&mut rng),
                        filler_sentence(&mut rng)
                    ),
                    "what was here ?".to_string(),
                ),
            };
            let label: u8 = rng.gen_range(0..2);
            let right = format!("the {a}");
            let wrong = format!("the {d}");
            let choices = if label == 0 {
                vec![right, wrong]
            } else {
                vec![wrong, right]
            };
            McRecord {
                id: format!("{}-{n}", spec.id_prefix),
                pos: Some(tag_record(&passage, &question, &choices, pos_tag)),
                ner: Some(tag_record(&passage, &question, &choices, ne_tag)),
                passage,
                question,
                choices,
                label,
            }
        })
        .collect()
}

/// Entailment pairs over `pairs`: the premise names a cue and the hypothesis
/// an answer. Matching pairs are `entailment`; the rest are `contradiction`
/// or `neutral`.
pub fn entailment_lines(pairs: Range<usize>, count: usize, seed: u64) -> Vec<EntailmentLine> {
    let mut rng = derive(seed, "entailment");
    let ids: Vec<usize> = pairs.collect();
    (0..count)
        .map(|n| {
            let i = ids[n % ids.len()];
            // Alternate per pass over the pairs so each cue sees both labels.
            let positive = (n % ids.len() + n / ids.len()).is_multiple_of(2);
            let j = if positive {
                i
            } else {
                loop {
                    let j = *ids.choose(&mut rng).unwrap();
                    if j != i {
                        break j;
                    }
                }
            };
            let label = match (positive, rng.gen_bool(0.5)) {
                (true, _) => "entailment",
                (false, true) => "contradiction",
                (false, false) => "neutral",
            };
            EntailmentLine {
                premise: format!("what came after the {} ?", cue(i)),
                hypothesis: format!("the {}", answer(j)),
                label: label.to_string(),
            }
        })
        .collect()
}

/// Four-sentence stories that mention a cue, with the matching answer as the
/// right ending.
pub fn story_lines(pairs: Range<usize>, count: usize, seed: u64) -> Vec<StoryLine> {
    let mut rng = derive(seed, "stories");
    let ids: Vec<usize> = pairs.collect();
    (0..count)
        .map(|n| {
            let i = ids[n % ids.len()];
            let j = loop {
                let j = *ids.choose(&mut rng).unwrap();
                if j != i {
                    break j;
                }
            };
            let slot = rng.gen_range(0..4);
            let story = (0..4)
                .map(|s| {
                    if s == slot {
                        format!("the {} came first .", cue(i))
                    } else {
                        filler_sentence(&mut rng)
                    }
                })
                .collect();
            let label = rng.gen_range(0..2);
            let right = format!("then the {} came .", answer(i));
            let wrong = format!("then the {} came .", answer(j));
            let endings = if label == 0 {
                vec![right, wrong]
            } else {
                vec![wrong, right]
            };
            StoryLine {
                story,
                endings,
                label,
            }
        })
        .collect()
}

/// `(cue, answer, RelatedTo)` for every pair.
pub fn lexicon_triples(pairs: Range<usize>) -> Vec<(String, String, String)> {
    pairs
        .map(|i| (cue(i), answer(i), "RelatedTo".to_string()))
        .collect()
}

/// Word vectors in which each cue and its answer share a random direction;
/// every other token gets an independent random vector.
pub fn word_vectors(pairs: Range<usize>, d_word: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = derive(seed, "synthetic-vectors");
    let gauss = |rng: &mut SeededRng| -> Vec<f64> {
        let v: Vec<f64> = (0..d_word).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let mut out = Vec::new();
    for i in pairs {
        let dir = gauss(&mut rng);
        for token in [cue(i), answer(i)] {
            let noise = gauss(&mut rng);
            out.push((
                token,
                dir.iter().zip(&noise).map(|(a, b)| a + 0.1 * b).collect(),
            ));
        }
    }
    let mut words: Vec<&str> = FILLER.iter().chain(NOUNS).chain(VERBS).copied().collect();
    words.extend([
        "the", "what", "which", "came", "was", "went", "before", "after", "by", "then", "here",
        "first", "next", ".", "?",
    ]);
    for w in words {
        out.push((w.to_string(), gauss(&mut rng)));
    }
    out
}

/// Sizes of the corpora written by [`write_suite`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteSpec {
    pub seed: u64,
    /// Pairs seen by the multiple-choice training split.
    pub train_pairs: usize,
    /// Further pairs used only by the held-out split.
    pub heldout_pairs: usize,
    pub train_questions: usize,
    pub dev_questions: usize,
    pub signal: Signal,
    pub entailment: usize,
    pub stories: usize,
    pub d_word: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            seed: 1,
            train_pairs: 24,
            heldout_pairs: 24,
            train_questions: 96,
            dev_questions: 48,
            signal: Signal::Question,
            entailment: 384,
            stories: 192,
            d_word: 100,
        }
    }
}

/// The 16-question (32-instance) capacity fixture for a signal.
pub fn overfit_fixture(signal: Signal, seed: u64) -> Vec<McRecord> {
    mc_records(&McSpec {
        questions: 16,
        pairs: 0..16,
        signal,
        id_prefix: format!("fit-{signal}"),
        seed,
    })
}

/// Writes every synthetic corpus into `dir` and returns the file names.
pub fn write_suite(dir: &Path, spec: &SuiteSpec) -> Result<Vec<String>> {
    if spec.train_pairs < 2 || spec.heldout_pairs < 2 {
        return Err(Error::Usage(
            "synthetic splits need at least two pairs each".into(),
        ));
    }
    let all = 0..spec.train_pairs + spec.heldout_pairs;
    let train = mc_records(&McSpec {
        questions: spec.train_questions,
        pairs: 0..spec.train_pairs,
        signal: spec.signal,
        id_prefix: "train".into(),
        seed: spec.seed,
    });
    let dev = mc_records(&McSpec {
        questions: spec.dev_questions,
        pairs: spec.train_pairs..all.end,
        signal: spec.signal,
        id_prefix: "dev".into(),
        seed: spec.seed,
    });
    let entail = entailment_lines(all.clone(), spec.entailment, spec.seed);
    let entail_dev = entailment_lines(all.clone(), spec.entailment / 4, spec.seed ^ DEV_SALT);
    let stories = story_lines(all.clone(), spec.stories, spec.seed);
    let stories_dev = story_lines(all.clone(), spec.stories / 4, spec.seed ^ DEV_SALT);

    let files: Vec<(&str, String)> = vec![
        ("mc_train.jsonl", to_jsonl(&train)),
        ("mc_dev.jsonl", to_jsonl(&dev)),
        ("entail_train.jsonl", to_jsonl(&entail)),
        ("entail_dev.jsonl", to_jsonl(&entail_dev)),
        ("story_train.jsonl", to_jsonl(&stories)),
        ("story_dev.jsonl", to_jsonl(&stories_dev)),
        (
            "overfit_pqcn.jsonl",
            to_jsonl(&overfit_fixture(Signal::Both, spec.seed)),
        ),
        (
            "overfit_qcn.jsonl",
            to_jsonl(&overfit_fixture(Signal::Question, spec.seed)),
        ),
        (
            "overfit_pcn.jsonl",
            to_jsonl(&overfit_fixture(Signal::Passage, spec.seed)),
        ),
        (
            "vectors.txt",
            word_vectors_text(&word_vectors(all.clone(), spec.d_word, spec.seed)),
        ),
        ("lexicon.tsv", lexicon_text(&lexicon_triples(all))),
    ];
    let mut names = Vec::new();
    for (name, text) in files {
        write_text(&dir.join(name), &text)?;
        names.push(name.to_string());
    }
    Ok(names)
}

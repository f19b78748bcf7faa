//! Line-oriented input files: multiple-choice instances, entailment pairs,
//! stories, word vectors and the relation lexicon.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tmoe_core::features::{RawInstance, RelationLexicon, SeqTags, Vocab, WordVectorTable};
use tmoe_core::train::{EntailmentRecord, StoryRecord};

use crate::error::{Error, Result};

/// Per-sequence tags; `choices` holds one array per choice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Vec<String>>>,
}

/// One question of the instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub choices: Vec<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<TagRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ner: Option<TagRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntailmentLine {
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryLine {
    pub story: Vec<String>,
    pub endings: Vec<String>,
    pub label: usize,
}

fn seq_tags(t: &TagRecord, choice: usize) -> SeqTags {
    SeqTags {
        passage: t.passage.clone(),
        question: t.question.clone(),
        choice: t.choices.as_ref().and_then(|c| c.get(choice).cloned()),
    }
}

impl McRecord {
    /// The two choice instances, `y = 1` for the labelled one.
    pub fn expand(&self) -> std::result::Result<[RawInstance; 2], String> {
        if self.choices.len() != 2 {
            return Err(format!("expected 2 choices, found {}", self.choices.len()));
        }
        if self.label > 1 {
            return Err(format!("label {} is not 0 or 1", self.label));
        }
        for (name, t) in [("pos", &self.pos), ("ner", &self.ner)] {
            if let Some(c) = t.as_ref().and_then(|t| t.choices.as_ref()) {
                if c.len() != 2 {
                    return Err(format!("{name}.choices has {} arrays, expected 2", c.len()));
                }
            }
        }
        let make = |k: usize| {
            let mut raw = RawInstance::new(
                self.id.clone(),
                k,
                self.passage.clone(),
                self.question.clone(),
                self.choices[k].clone(),
                u8::from(usize::from(self.label) == k),
            );
            raw.pos = self.pos.as_ref().map(|t| seq_tags(t, k));
            raw.ner = self.ner.as_ref().map(|t| seq_tags(t, k));
            raw
        };
        Ok([make(0), make(1)])
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<(usize, T)>> {
    lines(text)
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map(|v| (n, v))
                .map_err(|e| Error::parse(path, n, e.to_string()))
        })
        .collect()
}

pub fn parse_instances(text: &str, path: &Path) -> Result<Vec<RawInstance>> {
    let mut out = Vec::new();
    for (n, rec) in parse_jsonl::<McRecord>(text, path)? {
        out.extend(rec.expand().map_err(|r| Error::parse(path, n, r))?);
    }
    Ok(out)
}

pub fn read_instances(path: &Path) -> Result<Vec<RawInstance>> {
    parse_instances(&read_text(path)?, path)
}

pub fn parse_entailment(text: &str, path: &Path) -> Result<Vec<EntailmentRecord>> {
    Ok(parse_jsonl::<EntailmentLine>(text, path)?
        .into_iter()
        .map(|(line, r)| EntailmentRecord {
            line,
            premise: r.premise,
            hypothesis: r.hypothesis,
            label: r.label,
        })
        .collect())
}

pub fn parse_stories(text: &str, path: &Path) -> Result<Vec<StoryRecord>> {
    Ok(parse_jsonl::<StoryLine>(text, path)?
        .into_iter()
        .map(|(line, r)| StoryRecord {
            line,
            story: r.story,
            endings: r.endings,
            label: r.label,
        })
        .collect())
}

/// Maps adapter errors that carry a line number onto the file.
pub fn with_path(path: &Path, e: tmoe_core::Error) -> Error {
    match e {
        tmoe_core::Error::UnknownLabel { line, label } => {
            Error::parse(path, line, format!("unknown label `{label}`"))
        }
        tmoe_core::Error::Malformed { line, reason } => Error::parse(path, line, reason),
        other => Error::Core(other),
    }
}

/// `(token, vector)` entries of a word-vector file. Every row must have
/// `d_word` numbers.
pub fn parse_word_vectors(
    text: &str,
    path: &Path,
    d_word: usize,
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for (n, line) in lines(text) {
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-blank line");
        let values = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::parse(path, n, format!("`{p}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != d_word {
            return Err(Error::parse(
                path,
                n,
                format!(
                    "vector for `{token}` has {} values, expected {d_word}",
                    values.len()
                ),
            ));
        }
        out.push((token.to_string(), values));
    }
    Ok(out)
}

/// Word table for `vocab`, file rows where available and seeded random rows
/// elsewhere. `path = None` gives a fully random table.
pub fn load_word_vectors(
    path: Option<&Path>,
    vocab: &Vocab,
    d_word: usize,
    seed: u64,
) -> Result<WordVectorTable> {
    let Some(path) = path else {
        return Ok(WordVectorTable::random(vocab, d_word, seed));
    };
    let entries = parse_word_vectors(&read_text(path)?, path, d_word)?;
    let table = WordVectorTable::build(vocab, d_word, seed, entries)?;
    log::info!(
        "{}: {} of {} vocabulary rows pretrained",
        path.display(),
        table.pretrained_count(),
        table.rows()
    );
    Ok(table)
}

pub fn parse_lexicon(text: &str, path: &Path) -> Result<RelationLexicon> {
    let mut triples = Vec::new();
    for (n, line) in lines(text) {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::parse(path, n, "expected head<TAB>tail<TAB>relation"));
        }
        triples.push((fields[0], fields[1], fields[2]));
    }
    Ok(RelationLexicon::from_entries(triples))
}

pub fn load_lexicon(path: Option<&Path>) -> Result<RelationLexicon> {
    match path {
        Some(p) => parse_lexicon(&read_text(p)?, p),
        None => Ok(RelationLexicon::empty()),
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("plain records serialize"));
        s.push('\n');
    }
    s
}

pub fn word_vectors_text(entries: &[(String, Vec<f64>)]) -> String {
    let mut s = String::new();
    for (token, v) in entries {
        s.push_str(token);
        for x in v {
            let _ = write!(s, " {x}");
        }
        s.push('\n');
    }
    s
}

pub fn lexicon_text(triples: &[(String, String, String)]) -> String {
    triples
        .iter()
        .map(|(h, t, r)| format!("{h}\t{t}\t{r}\n"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.jsonl")
    }

    #[test]
    fn record_expands_to_two_instances() {
        let text = r#"{"id":"q1","passage":"we made a fire","question":"what did we make","choices":["a fire","a cake"],"label":0}"#;
        let raws = parse_instances(text, p()).unwrap();
        assert_eq!(raws.len(), 2);
        assert_eq!((raws[0].label, raws[1].label), (1, 0));
        assert_eq!(raws[1].choice, "a cake");
        assert_eq!(raws[1].choice_index, 1);
    }

    #[test]
    fn tags_follow_their_choice() {
        let text = r#"{"id":"q","passage":"a b","question":"c","choices":["d","e f"],"label":1,"pos":{"passage":["X","Y"],"choices":[["Z"],["U","V"]]}}"#;
        let raws = parse_instances(text, p()).unwrap();
        let pos = raws[1].pos.as_ref().unwrap();
        assert_eq!(
            pos.choice.as_deref(),
            Some(&["U".to_string(), "V".to_string()][..])
        );
        assert!(pos.question.is_none());
    }

    #[test]
    fn errors_name_the_line() {
        let text = "\n{\"id\":\"q\",\"passage\":\"a\",\"question\":\"b\",\"choices\":[\"c\"],\"label\":0}\n";
        match parse_instances(text, p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_instances("{not json", p()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn word_vector_dimension_is_checked_per_line() {
        let text = "fire 1 0 0 0\nwood 1 2 3\n";
        match parse_word_vectors(text, p(), 4) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let ok = parse_word_vectors("fire 1 0 0 0\n", p(), 4).unwrap();
        assert_eq!(ok[0], ("fire".to_string(), vec![1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn lexicon_needs_three_fields() {
        let lex = parse_lexicon("fire\twood\tRelatedTo\n", p()).unwrap();
        assert_eq!(lex.lookup("wood", "fire"), lex.relation_id("RelatedTo"));
        assert!(matches!(
            parse_lexicon("a\tb\n", p()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn entailment_label_errors_carry_line() {
        let text = "{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"entailment\"}\n{\"premise\":\"a\",\"hypothesis\":\"b\",\"label\":\"maybe\"}\n";
        let recs = parse_entailment(text, p()).unwrap();
        let err = tmoe_core::train::adapt_entailment(&recs).unwrap_err();
        assert!(matches!(with_path(p(), err), Error::Parse { line: 2, .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let rec = McRecord {
            id: "x".into(),
            passage: "p".into(),
            question: "q".into(),
            choices: vec!["a".into(), "b".into()],
            label: 1,
            pos: None,
            ner: None,
        };
        let text = to_jsonl(std::slice::from_ref(&rec));
        let back: Vec<(usize, McRecord)> = parse_jsonl(&text, p()).unwrap();
        assert_eq!(back[0].1, rec);
    }
}

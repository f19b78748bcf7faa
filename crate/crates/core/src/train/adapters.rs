//! Auxiliary-task records turned into single-stream training instances.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{RawInstance, EMPTY_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntailmentLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl FromStr for EntailmentLabel {
    type Err = ();

    fn from_str(s: &str) -> core::result::Result<Self, ()> {
        match s {
            "entailment" => Ok(EntailmentLabel::Entailment),
            "neutral" => Ok(EntailmentLabel::Neutral),
            "contradiction" => Ok(EntailmentLabel::Contradiction),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntailmentRecord {
    /// 1-based source line, used in ids and error messages.
    pub line: usize,
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoryRecord {
    pub line: usize,
    pub story: Vec<String>,
    pub endings: Vec<String>,
    pub label: usize,
}

/// Premise becomes the question and hypothesis the choice; the passage is a
/// sentinel. Only `entailment` is positive.
pub fn adapt_entailment(records: &[EntailmentRecord]) -> Result<Vec<RawInstance>> {
    records
        .iter()
        .map(|r| {
            let label: EntailmentLabel = r.label.parse().map_err(|_| Error::UnknownLabel {
                line: r.line,
                label: r.label.clone(),
            })?;
            let y = u8::from(label == EntailmentLabel::Entailment);
            Ok(RawInstance::new(
                format!("entail-{}", r.line),
                0,
                EMPTY_SENTINEL,
                r.premise.clone(),
                r.hypothesis.clone(),
                y,
            ))
        })
        .collect()
}

/// Two instances per story: the four sentences joined as the passage, each
/// ending as a choice, and a sentinel question.
pub fn adapt_storycloze(records: &[StoryRecord]) -> Result<Vec<RawInstance>> {
    let mut out = Vec::with_capacity(records.len() * 2);
    for r in records {
        if r.story.len() != 4 {
            return Err(Error::Malformed {
                line: r.line,
                reason: format!("story has {} sentences, expected 4", r.story.len()),
            });
        }
        if r.endings.len() != 2 {
            return Err(Error::Malformed {
                line: r.line,
                reason: format!("story has {} endings, expected 2", r.endings.len()),
            });
        }
        if r.label > 1 {
            return Err(Error::Malformed {
                line: r.line,
                reason: format!("label {} is not 0 or 1", r.label),
            });
        }
        let passage = r.story.join(" ");
        for (i, ending) in r.endings.iter().enumerate() {
            out.push(RawInstance::new(
                format!("story-{}", r.line),
                i,
                passage.clone(),
                EMPTY_SENTINEL,
                ending.clone(),
                u8::from(i == r.label),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize;
    use alloc::string::ToString;
    use alloc::vec;

    fn ent(label: &str) -> EntailmentRecord {
        EntailmentRecord {
            line: 3,
            premise: "A man lights a fire .".into(),
            hypothesis: "There is a fire .".into(),
            label: label.into(),
        }
    }

    #[test]
    fn entailment_binarization() {
        let out =
            adapt_entailment(&[ent("entailment"), ent("contradiction"), ent("neutral")]).unwrap();
        let ys: Vec<u8> = out.iter().map(|r| r.label).collect();
        assert_eq!(ys, [1, 0, 0]);
        assert_eq!(out[0].question, "A man lights a fire .");
        assert_eq!(out[0].passage, EMPTY_SENTINEL);
    }

    #[test]
    fn unknown_entailment_label() {
        assert_eq!(
            adapt_entailment(&[ent("maybe")]),
            Err(Error::UnknownLabel {
                line: 3,
                label: "maybe".into()
            })
        );
    }

    fn story(label: usize) -> StoryRecord {
        StoryRecord {
            line: 1,
            story: vec![
                "We went camping .".to_string(),
                "We gathered dry wood .".to_string(),
                "Dad built a fire pit .".to_string(),
                "We lit the wood .".to_string(),
            ],
            endings: vec![
                "The fire burned .".to_string(),
                "It snowed indoors .".to_string(),
            ],
            label,
        }
    }

    #[test]
    fn story_labels_follow_gold_index() {
        let out = adapt_storycloze(&[story(0)]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].label, out[1].label), (1, 0));
        assert_eq!(out[1].choice_index, 1);
        assert_eq!(out[0].question, EMPTY_SENTINEL);
    }

    #[test]
    fn joined_story_keeps_token_counts() {
        let r = story(1);
        let out = adapt_storycloze(core::slice::from_ref(&r)).unwrap();
        let expected: usize = r.story.iter().map(|s| tokenize(s).len()).sum();
        assert_eq!(tokenize(&out[0].passage).len(), expected);
    }

    #[test]
    fn story_field_counts_are_checked() {
        let mut r = story(0);
        r.story.pop();
        assert!(matches!(
            adapt_storycloze(&[r]),
            Err(Error::Malformed { line: 1, .. })
        ));
        let mut r = story(0);
        r.endings.push("x".into());
        assert!(adapt_storycloze(&[r]).is_err());
    }
}

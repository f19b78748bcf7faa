//! Question-level evaluation of one or more experts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::{StreamKind, StreamParams};
use crate::features::EncodedInstance;
use crate::mixture::{combine, Combined, MixtureMode, StreamPrediction};

/// Combined predictions whose two probabilities are closer than this count
/// as low-margin.
pub const LOW_MARGIN: f64 = 0.1;

/// Both choices of one question, ordered by choice index.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub gold: usize,
    pub choices: [EncodedInstance; 2],
}

/// Groups instances by question id, keeping first-seen order.
pub fn group_questions(instances: Vec<EncodedInstance>) -> Result<Vec<Question>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<EncodedInstance>> = BTreeMap::new();
    for inst in instances {
        if !groups.contains_key(&inst.id) {
            order.push(inst.id.clone());
        }
        groups.entry(inst.id.clone()).or_default().push(inst);
    }
    order
        .into_iter()
        .map(|id| {
            let mut group = groups.remove(&id).expect("grouped");
            if group.len() != 2 {
                return Err(Error::ChoiceCount {
                    id,
                    count: group.len(),
                });
            }
            group.sort_by_key(|i| i.choice_index);
            let golds: Vec<usize> = group
                .iter()
                .enumerate()
                .filter(|(_, i)| i.label == 1)
                .map(|(k, _)| k)
                .collect();
            if golds.len() != 1 {
                return Err(Error::Config(format!(
                    "question `{id}` must have exactly one correct choice, found {}",
                    golds.len()
                )));
            }
            let second = group.pop().expect("two");
            let first = group.pop().expect("two");
            Ok(Question {
                id,
                gold: golds[0],
                choices: [first, second],
            })
        })
        .collect()
}

/// Anything that scores both choices of a question.
pub trait ChoiceScorer {
    fn kind(&self) -> StreamKind;
    fn score(&self, question: &Question) -> Result<(f64, f64)>;
}

impl ChoiceScorer for StreamParams {
    fn kind(&self) -> StreamKind {
        self.kind
    }

    fn score(&self, q: &Question) -> Result<(f64, f64)> {
        Ok((self.predict(&q.choices[0])?, self.predict(&q.choices[1])?))
    }
}

/// Replays fixed probability pairs, keyed by question id, with an optional
/// fallback pair for unlisted questions.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedScorer {
    pub kind: StreamKind,
    pub pairs: BTreeMap<String, (f64, f64)>,
    pub fallback: Option<(f64, f64)>,
}

impl FixedScorer {
    pub fn constant(kind: StreamKind, p1: f64, p2: f64) -> Self {
        FixedScorer {
            kind,
            pairs: BTreeMap::new(),
            fallback: Some((p1, p2)),
        }
    }
}

impl ChoiceScorer for FixedScorer {
    fn kind(&self) -> StreamKind {
        self.kind
    }

    fn score(&self, q: &Question) -> Result<(f64, f64)> {
        self.pairs
            .get(&q.id)
            .copied()
            .or(self.fallback)
            .ok_or_else(|| Error::Config(format!("no fixed prediction for `{}`", q.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionOutcome {
    pub id: String,
    pub gold: usize,
    pub streams: Vec<StreamPrediction>,
    pub combined: Combined,
}

impl QuestionOutcome {
    pub fn correct(&self) -> bool {
        self.combined.chosen == self.gold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: MixtureMode,
    pub questions: usize,
    pub accuracy: f64,
    pub per_stream: Vec<(StreamKind, f64)>,
    /// Fraction of questions on which every stream picks the same choice.
    pub agreement_rate: f64,
    pub low_margin: usize,
    pub outcomes: Vec<QuestionOutcome>,
}

/// Scores one question with every stream and combines the predictions.
pub fn score_question(
    scorers: &[&dyn ChoiceScorer],
    q: &Question,
    mode: MixtureMode,
) -> Result<QuestionOutcome> {
    let mut streams = Vec::with_capacity(scorers.len());
    for s in scorers {
        let (p1, p2) = s.score(q)?;
        streams.push(StreamPrediction::new(s.kind(), p1, p2));
    }
    let combined = combine(mode, &streams)?;
    Ok(QuestionOutcome {
        id: q.id.clone(),
        gold: q.gold,
        streams,
        combined,
    })
}

/// Aggregates per-question outcomes, in order, into a report.
pub fn summarize(mode: MixtureMode, outcomes: Vec<QuestionOutcome>) -> Result<EvalReport> {
    let n = outcomes.len();
    if n == 0 {
        return Err(Error::Config("evaluation set has no questions".into()));
    }
    let nf = n as f64;
    let accuracy = outcomes.iter().filter(|o| o.correct()).count() as f64 / nf;
    let streams = outcomes[0].streams.len();
    let per_stream = (0..streams)
        .map(|s| {
            let kind = outcomes[0].streams[s].kind;
            let hits = outcomes
                .iter()
                .filter(|o| o.streams[s].argmax() == o.gold)
                .count();
            (kind, hits as f64 / nf)
        })
        .collect();
    let agree = outcomes
        .iter()
        .filter(|o| o.streams.windows(2).all(|w| w[0].argmax() == w[1].argmax()))
        .count();
    let low_margin = outcomes
        .iter()
        .filter(|o| libm::fabs(o.combined.p1 - o.combined.p2) < LOW_MARGIN)
        .count();
    Ok(EvalReport {
        mode,
        questions: n,
        accuracy,
        per_stream,
        agreement_rate: agree as f64 / nf,
        low_margin,
        outcomes,
    })
}

/// Runs every question through every stream (evaluation mode) and combines
/// the predictions with `mode`.
pub fn evaluate(
    scorers: &[&dyn ChoiceScorer],
    questions: &[Question],
    mode: MixtureMode,
) -> Result<EvalReport> {
    if scorers.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let outcomes = questions
        .iter()
        .map(|q| score_question(scorers, q, mode))
        .collect::<Result<Vec<_>>>()?;
    summarize(mode, outcomes)
}

/// Fraction of instances where `p > 0.5` matches the label.
pub fn evaluate_binary(stream: &StreamParams, instances: &[EncodedInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut hits = 0;
    for inst in instances {
        let p = stream.predict(inst)?;
        if u8::from(p > 0.5) == inst.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / instances.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{EncodedSequence, FEATURE_COLUMNS};
    use alloc::vec;

    fn inst(id: &str, choice: usize, label: u8) -> EncodedInstance {
        let seq = EncodedSequence {
            tokens: vec![2],
            pos: vec![0],
            ner: vec![0],
            relations: vec![0],
            features: vec![[0.0; FEATURE_COLUMNS]],
        };
        EncodedInstance {
            id: id.into(),
            choice_index: choice,
            label,
            passage: seq.clone(),
            question: seq.clone(),
            choice: seq,
        }
    }

    fn questions(golds: &[usize]) -> Vec<Question> {
        let mut v = Vec::new();
        for (i, &g) in golds.iter().enumerate() {
            let id = format!("q{i}");
            v.push(inst(&id, 1, u8::from(g == 1)));
            v.push(inst(&id, 0, u8::from(g == 0)));
        }
        group_questions(v).unwrap()
    }

    #[test]
    fn grouping_orders_choices_and_finds_gold() {
        let qs = questions(&[1, 0]);
        assert_eq!(qs[0].gold, 1);
        assert_eq!(qs[0].choices[0].choice_index, 0);
        assert_eq!(qs[1].gold, 0);
    }

    #[test]
    fn grouping_rejects_wrong_choice_count() {
        let v = vec![inst("a", 0, 1), inst("a", 1, 0), inst("b", 0, 1)];
        assert_eq!(
            group_questions(v),
            Err(Error::ChoiceCount {
                id: "b".into(),
                count: 1
            })
        );
    }

    struct Oracle;
    impl ChoiceScorer for Oracle {
        fn kind(&self) -> StreamKind {
            StreamKind::Pqcn
        }
        fn score(&self, q: &Question) -> Result<(f64, f64)> {
            let eps = 1e-3;
            Ok(if q.gold == 0 {
                (1.0 - eps, eps)
            } else {
                (eps, 1.0 - eps)
            })
        }
    }

    #[test]
    fn oracle_stream_is_perfect() {
        let qs = questions(&[0, 1, 1, 0]);
        let r = evaluate(&[&Oracle], &qs, MixtureMode::WeightedSum).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.low_margin, 0);
    }

    #[test]
    fn single_stream_accuracy_is_argmax_accuracy() {
        let qs = questions(&[0, 1, 1]);
        let s = FixedScorer::constant(StreamKind::Qcn, 0.4, 0.6);
        for mode in [MixtureMode::WeightedSum, MixtureMode::HardChoice] {
            let r = evaluate(&[&s], &qs, mode).unwrap();
            assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
            assert_eq!(r.per_stream, vec![(StreamKind::Qcn, r.accuracy)]);
            assert_eq!(r.agreement_rate, 1.0);
        }
    }

    #[test]
    fn disagreement_resolved_by_confidence() {
        let qs = questions(&[1]);
        let qcn = FixedScorer::constant(StreamKind::Qcn, 0.92, 0.85);
        let pqcn = FixedScorer::constant(StreamKind::Pqcn, 0.2, 0.9);
        let r = evaluate(&[&qcn, &pqcn], &qs, MixtureMode::WeightedSum).unwrap();
        assert_eq!(r.outcomes[0].combined.chosen, 1);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.agreement_rate, 0.0);
        assert_eq!(r.per_stream[0], (StreamKind::Qcn, 0.0));
    }

    #[test]
    fn empty_question_set_is_an_error() {
        let s = FixedScorer::constant(StreamKind::Qcn, 0.4, 0.6);
        assert!(evaluate(&[&s], &[], MixtureMode::WeightedSum).is_err());
    }
}

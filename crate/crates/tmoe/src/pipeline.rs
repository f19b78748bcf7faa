//! Glue between files and the core library: resource building, encoding,
//! per-checkpoint scoring and parallel evaluation.

use std::collections::BTreeMap;
use std::thread;

use tmoe_core::experts::{StreamKind, StreamParams};
use tmoe_core::features::{
    encode_instance, EncodedInstance, RawInstance, RelationLexicon, Resources, WordVectorTable,
};
use tmoe_core::train::{score_question, summarize, Checkpoint, ChoiceScorer, EvalReport, Question};
use tmoe_core::MixtureMode;

use crate::error::Result;

pub fn encode_all(raws: &[RawInstance], res: &Resources) -> Result<Vec<EncodedInstance>> {
    Ok(raws
        .iter()
        .map(|r| encode_instance(r, res))
        .collect::<tmoe_core::Result<_>>()?)
}

/// Encoded train and dev splits sharing one set of lookup tables.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub resources: Resources,
    pub vectors: WordVectorTable,
    pub train: Vec<EncodedInstance>,
    pub dev: Vec<EncodedInstance>,
}

/// Builds the vocabulary and tag sets over both splits, loads the word table
/// and encodes everything.
pub fn prepare(
    train: &[RawInstance],
    dev: &[RawInstance],
    lexicon: RelationLexicon,
    vectors: impl FnOnce(&Resources) -> Result<WordVectorTable>,
    min_count: usize,
) -> Result<Prepared> {
    let corpus: Vec<RawInstance> = train.iter().chain(dev).cloned().collect();
    let resources = Resources::build(&corpus, lexicon, min_count);
    let vectors = vectors(&resources)?;
    Ok(Prepared {
        train: encode_all(train, &resources)?,
        dev: encode_all(dev, &resources)?,
        resources,
        vectors,
    })
}

/// A checkpointed expert with the questions encoded through its own tables,
/// so experts trained on different vocabularies can be mixed.
pub struct EncodedScorer {
    pub stream: StreamParams,
    questions: BTreeMap<String, Question>,
}

impl EncodedScorer {
    pub fn new(
        checkpoint: &Checkpoint,
        lexicon: RelationLexicon,
        raws: &[RawInstance],
    ) -> Result<Self> {
        let res = checkpoint.resources(lexicon)?;
        let encoded = encode_all(raws, &res)?;
        let questions = tmoe_core::train::group_questions(encoded)?
            .into_iter()
            .map(|q| (q.id.clone(), q))
            .collect();
        Ok(EncodedScorer {
            stream: checkpoint.stream.clone(),
            questions,
        })
    }
}

impl ChoiceScorer for EncodedScorer {
    fn kind(&self) -> StreamKind {
        self.stream.kind
    }

    fn score(&self, q: &Question) -> tmoe_core::Result<(f64, f64)> {
        let own = self.questions.get(&q.id).ok_or_else(|| {
            tmoe_core::Error::Config(format!("question `{}` was not encoded", q.id))
        })?;
        self.stream.score(own)
    }
}

pub type SharedScorer<'a> = &'a (dyn ChoiceScorer + Sync);

/// [`tmoe_core::train::evaluate`] over `workers` threads. Questions are
/// split into contiguous chunks and reassembled in input order, so the
/// report does not depend on the worker count.
pub fn evaluate_parallel(
    scorers: &[SharedScorer<'_>],
    questions: &[Question],
    mode: MixtureMode,
    workers: usize,
) -> Result<EvalReport> {
    if scorers.is_empty() {
        return Err(tmoe_core::Error::EmptyPredictions.into());
    }
    let plain: Vec<&dyn ChoiceScorer> = scorers.iter().map(|s| *s as &dyn ChoiceScorer).collect();
    let workers = workers.max(1).min(questions.len().max(1));
    let outcomes = if workers == 1 {
        questions
            .iter()
            .map(|q| score_question(&plain, q, mode))
            .collect::<tmoe_core::Result<Vec<_>>>()?
    } else {
        let chunk = questions.len().div_ceil(workers);
        let parts: Vec<tmoe_core::Result<Vec<_>>> = thread::scope(|s| {
            let handles: Vec<_> = questions
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        let plain: Vec<&dyn ChoiceScorer> =
                            scorers.iter().map(|s| *s as &dyn ChoiceScorer).collect();
                        part.iter()
                            .map(|q| score_question(&plain, q, mode))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(questions.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    Ok(summarize(mode, outcomes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tmoe_core::train::{group_questions, FixedScorer};

    fn questions(n: usize) -> Vec<Question> {
        let raws: Vec<RawInstance> = (0..n)
            .flat_map(|i| {
                let gold = i % 2;
                (0..2).map(move |k| {
                    RawInstance::new(format!("q{i}"), k, "a b", "c", "d", u8::from(k == gold))
                })
            })
            .collect();
        let res = Resources::build(&raws, RelationLexicon::empty(), 1);
        group_questions(encode_all(&raws, &res).unwrap()).unwrap()
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let qs = questions(13);
        let mut a = FixedScorer::constant(StreamKind::Pqcn, 0.6, 0.4);
        for (i, q) in qs.iter().enumerate() {
            a.pairs.insert(q.id.clone(), (0.1 * (i % 7) as f64, 0.5));
        }
        let b = FixedScorer::constant(StreamKind::Qcn, 0.3, 0.8);
        let scorers: Vec<SharedScorer<'_>> = vec![&a, &b];
        let one = evaluate_parallel(&scorers, &qs, MixtureMode::WeightedSum, 1).unwrap();
        for w in [2, 3, 8, 40] {
            assert_eq!(
                evaluate_parallel(&scorers, &qs, MixtureMode::WeightedSum, w).unwrap(),
                one
            );
        }
    }
}

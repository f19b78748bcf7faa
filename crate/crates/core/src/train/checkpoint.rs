use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::StreamParams;
use crate::features::{CorpusFreq, RelationLexicon, Resources, TagVocab, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub best_dev_accuracy: f64,
    /// `scratch`, `entailment`, `story-cloze`, or a fine-tuning tag.
    pub source_task: String,
}

/// A trained expert together with the lookup tables its embedding rows are
/// indexed by.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub stream: StreamParams,
    pub meta: TrainingMeta,
    pub vocab: Vec<String>,
    pub pos_tags: Vec<String>,
    pub ne_tags: Vec<String>,
    pub relations: Vec<String>,
    /// Corpus counts behind the term-frequency feature.
    pub freq: CorpusFreq,
}

impl Checkpoint {
    pub fn new(stream: StreamParams, meta: TrainingMeta, resources: &Resources) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            stream,
            meta,
            vocab: resources.vocab.tokens().to_vec(),
            pos_tags: resources.pos.tags().to_vec(),
            ne_tags: resources.ner.tags().to_vec(),
            relations: resources.lexicon.relations().to_vec(),
            freq: resources.freq.clone(),
        }
    }

    /// Lookup tables for encoding new data the way this expert was trained.
    /// `lexicon` must define the same relation list the checkpoint saw.
    pub fn resources(&self, lexicon: RelationLexicon) -> Result<Resources> {
        if lexicon.relations() != self.relations.as_slice() {
            return Err(Error::Config(format!(
                "lexicon relations {:?} differ from the checkpoint's {:?}",
                lexicon.relations(),
                self.relations
            )));
        }
        let mut vocab = Vocab::from_tokens(self.vocab.clone())?;
        vocab.freeze();
        Ok(Resources {
            vocab,
            pos: TagVocab::from_list(self.pos_tags.clone()),
            ner: TagVocab::from_list(self.ne_tags.clone()),
            lexicon,
            freq: self.freq.clone(),
        })
    }
}

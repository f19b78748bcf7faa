//! Text records to index and feature channels.

mod encode;
mod relations;
mod tokenize;
mod vocab;

pub use encode::{
    encode_instance, handcrafted_features, CorpusFreq, EncodedInstance, EncodedSequence,
    RawInstance, Resources, SeqTags, FEATURE_COLUMNS,
};
pub use relations::{lookup_relations, RelationLexicon, NO_RELATION};
pub use tokenize::{tokenize, tokenize_cased, EMPTY_SENTINEL};
pub use vocab::{
    build_vocab, TagVocab, Vocab, WordVectorTable, PAD, PAD_TOKEN, UNK, UNK_TOKEN, WORD_INIT_RANGE,
};

//! Loading a pre-trained expert into a new task's vocabulary.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::experts::{init_params, param_name, StreamConfig, StreamParams};
use crate::features::{Resources, WordVectorTable};
use crate::tensor::Tensor;

fn copy_rows(
    target: &mut Tensor,
    source: &Tensor,
    src_tokens: &[String],
    dst_tokens: &[String],
) -> usize {
    let d = target.cols();
    let mut copied = 0;
    for (dst, token) in dst_tokens.iter().enumerate() {
        if let Some(src) = src_tokens.iter().position(|t| t == token) {
            target.data_mut()[dst * d..(dst + 1) * d].copy_from_slice(source.row(src));
            copied += 1;
        }
    }
    copied
}

/// Builds parameters for `resources` from a checkpoint.
///
/// Non-embedding tensors are copied verbatim and must match the shapes that
/// `config` implies. Word rows are matched by token; tokens the checkpoint
/// has never seen keep their row from `word_vectors`. Tag and relation tables
/// are copied when their vocabularies are identical and otherwise keep a
/// fresh initialization.
pub fn transfer_load(
    checkpoint: &Checkpoint,
    resources: &Resources,
    word_vectors: &WordVectorTable,
    config: &StreamConfig,
) -> Result<StreamParams> {
    let kind = checkpoint.stream.kind;
    let mut fresh = init_params(kind, config, word_vectors, resources)?;
    let source = &checkpoint.stream.params;

    let word = param_name(kind, "embed", "word");
    let tables: [(String, &[String], &[String]); 3] = [
        (
            param_name(kind, "embed", "pos"),
            &checkpoint.pos_tags,
            resources.pos.tags(),
        ),
        (
            param_name(kind, "embed", "ne"),
            &checkpoint.ne_tags,
            resources.ner.tags(),
        ),
        (
            param_name(kind, "embed", "rel"),
            &checkpoint.relations,
            resources.lexicon.relations(),
        ),
    ];

    let mut mismatched = Vec::new();
    for (name, target) in fresh.params.iter_mut() {
        let Some(src) = source.get(name) else {
            mismatched.push(String::from(name));
            continue;
        };
        if name == word {
            if src.cols() != target.cols() {
                mismatched.push(String::from(name));
                continue;
            }
            let n = copy_rows(target, src, &checkpoint.vocab, resources.vocab.tokens());
            log::info!("{name}: {n} of {} rows transferred", target.rows());
        } else if let Some((_, src_tags, dst_tags)) = tables.iter().find(|(n, _, _)| n == name) {
            if src.cols() != target.cols() {
                mismatched.push(String::from(name));
            } else if src_tags == dst_tags && src.shape() == target.shape() {
                *target = src.clone();
            } else {
                log::warn!(
                    "{name}: tag vocabulary differs from checkpoint, keeping fresh initialization"
                );
            }
        } else if src.shape() != target.shape() {
            mismatched.push(String::from(name));
        } else {
            *target = src.clone();
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::LayerShapes(mismatched));
    }
    for name in source.names() {
        if !fresh.params.contains(name) {
            return Err(Error::Config(format!(
                "checkpoint tensor `{name}` has no counterpart"
            )));
        }
    }
    Ok(fresh)
}

//! The per-stream training loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::{Checkpoint, TrainingMeta};
use super::eval::{evaluate, evaluate_binary, group_questions, Question};
use super::loss::{bce_loss, bce_loss_on_tape};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::experts::{StreamKind, StreamParams};
use crate::features::{EncodedInstance, Resources};
use crate::mixture::MixtureMode;
use crate::rng;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Instances whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    pub dropout: f64,
    pub seed: u64,
    pub clip_norm: f64,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    /// Also measure training-set accuracy after every epoch.
    pub track_train_accuracy: bool,
    /// Stop once the tracked training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-3,
            epochs: 50,
            batch_size: 32,
            dropout: 0.4,
            seed: 0,
            clip_norm: 10.0,
            patience: 10,
            track_train_accuracy: false,
            stop_at_train_accuracy: None,
        }
    }
}

/// Development data: paired questions, or single instances scored at 0.5
/// when the task has no pairing (entailment).
#[derive(Debug, Clone, PartialEq)]
pub enum EvalSet {
    Paired(Vec<Question>),
    Binary(Vec<EncodedInstance>),
}

impl EvalSet {
    /// Pairs the instances when every id has exactly two choices.
    pub fn from_instances(instances: Vec<EncodedInstance>) -> Self {
        match group_questions(instances.clone()) {
            Ok(q) => EvalSet::Paired(q),
            Err(_) => EvalSet::Binary(instances),
        }
    }

    pub fn accuracy(&self, stream: &StreamParams) -> Result<f64> {
        match self {
            EvalSet::Paired(q) => Ok(evaluate(&[stream], q, MixtureMode::WeightedSum)?.accuracy),
            EvalSet::Binary(i) => evaluate_binary(stream, i),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean training-mode loss over the epoch.
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    /// Mean inference-mode loss over the training set, tracked together
    /// with `train_accuracy`.
    pub train_eval_loss: Option<f64>,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: StreamParams,
    /// 0 when no epoch improved on the initial parameters (or none ran).
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub epochs: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn into_checkpoint(self, resources: &Resources, source_task: &str) -> Checkpoint {
        let meta = TrainingMeta {
            epoch: self.best_epoch,
            best_dev_accuracy: self.best_dev_accuracy,
            source_task: source_task.into(),
        };
        Checkpoint::new(self.best, meta, resources)
    }
}

fn mean_loss(stream: &StreamParams, instances: &[EncodedInstance]) -> Result<f64> {
    let mut sum = 0.0;
    for inst in instances {
        sum += bce_loss(stream.predict(inst)?, inst.label);
    }
    Ok(sum / instances.len() as f64)
}

fn add_into(acc: &mut ParamSet, g: &ParamSet) {
    for ((_, a), (_, b)) in acc.iter_mut().zip(g.iter()) {
        a.data_mut()
            .iter_mut()
            .zip(b.data())
            .for_each(|(x, y)| *x += y);
    }
}

/// Trains one expert on its own binary cross-entropy.
///
/// Each epoch shuffles `train` with a seeded generator, averages gradients
/// over `batch_size` instances per Adam step, then scores `dev`. The
/// parameters with the best dev accuracy are kept; training stops after
/// `patience` epochs without improvement. With `epochs == 0` the initial
/// parameters are only evaluated.
pub fn train_stream(
    kind: StreamKind,
    train: &[EncodedInstance],
    dev: &EvalSet,
    config: &TrainConfig,
    initial: StreamParams,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if initial.kind != kind {
        return Err(Error::KindMismatch {
            expected: kind.name(),
            found: initial.kind.name(),
        });
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut stream = initial;
    stream.config.dropout = config.dropout;
    stream.config.validate()?;

    let train_set = if config.track_train_accuracy {
        Some(EvalSet::from_instances(train.to_vec()))
    } else {
        None
    };

    if config.epochs == 0 {
        let acc = dev.accuracy(&stream)?;
        return Ok(TrainOutcome {
            best: stream,
            best_epoch: 0,
            best_dev_accuracy: acc,
            epochs: Vec::new(),
        });
    }

    let adam = AdamConfig {
        lr: config.lr,
        clip_norm: Some(config.clip_norm),
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(&stream.params);
    let mut shuffle_rng = rng::derive(config.seed, "shuffle");
    let mut dropout_rng = Some(rng::derive(config.seed, "dropout"));
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(StreamParams, usize, f64)> = None;
    let mut stale = 0;
    let mut logs = Vec::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = stream.params.zeros_like();
            for &i in batch {
                let mut tape = Tape::training(
                    dropout_rng
                        .take()
                        .expect("generator threaded through tapes"),
                );
                let y = stream.forward(&mut tape, &train[i])?;
                let loss = bce_loss_on_tape(&mut tape, y, train[i].label)?;
                loss_sum += tape.scalar(loss);
                let g = tape.backward(loss, &stream.params)?;
                add_into(&mut acc, &g);
                dropout_rng = tape.into_rng();
            }
            let scale = 1.0 / batch.len() as f64;
            for (_, t) in acc.iter_mut() {
                t.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam_step(&mut stream.params, &acc, &mut state, &adam)?;
        }

        let dev_accuracy = dev.accuracy(&stream)?;
        let (train_accuracy, train_eval_loss) = match &train_set {
            Some(s) => (Some(s.accuracy(&stream)?), Some(mean_loss(&stream, train)?)),
            None => (None, None),
        };
        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy,
            train_eval_loss,
            dev_accuracy,
        });
        log::debug!(
            "{kind} epoch {epoch}: loss {:.6} dev {dev_accuracy:.4}",
            loss_sum / train.len() as f64
        );

        let improved = best.as_ref().is_none_or(|(_, _, b)| dev_accuracy > *b);
        if improved {
            best = Some((stream.clone(), epoch, dev_accuracy));
            stale = 0;
        } else {
            stale += 1;
        }
        if let (Some(target), Some(acc)) = (config.stop_at_train_accuracy, train_accuracy) {
            if acc >= target {
                break;
            }
        }
        if stale >= config.patience {
            break;
        }
    }

    let (best, best_epoch, best_dev_accuracy) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev_accuracy,
        epochs: logs,
    })
}

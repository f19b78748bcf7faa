//! Confidence-weighted combination of per-stream choice probabilities.
//!
//! Each stream scores both choices independently, so its pair `(p1, p2)`
//! need not sum to one. A stream's confidence is how far apart it puts the
//! two choices.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::experts::StreamKind;

/// Total weight below which the combiner falls back to a plain average.
pub const MIN_TOTAL_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamPrediction {
    pub kind: StreamKind,
    pub p1: f64,
    pub p2: f64,
}

impl StreamPrediction {
    pub fn new(kind: StreamKind, p1: f64, p2: f64) -> Self {
        StreamPrediction { kind, p1, p2 }
    }

    /// Index of the preferred choice, ties going to the first.
    pub fn argmax(&self) -> usize {
        argmax(self.p1, self.p2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureMode {
    WeightedSum,
    HardChoice,
}

impl MixtureMode {
    pub fn name(self) -> &'static str {
        match self {
            MixtureMode::WeightedSum => "weighted",
            MixtureMode::HardChoice => "hard",
        }
    }
}

/// Combined probabilities and the 0-based chosen index.
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub p1: f64,
    pub p2: f64,
    pub chosen: usize,
    /// Weight each stream received, normalized to sum to one.
    pub weights: Vec<f64>,
}

fn argmax(p1: f64, p2: f64) -> usize {
    if p2 > p1 {
        1
    } else {
        0
    }
}

/// `|p1 - p2|`.
pub fn confidence_weight(pred: &StreamPrediction) -> f64 {
    libm::fabs(pred.p1 - pred.p2)
}

/// Weighted average of the streams' pairs with confidence weights.
pub fn combine_weighted(preds: &[StreamPrediction]) -> Result<Combined> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let mut weights: Vec<f64> = preds.iter().map(confidence_weight).collect();
    let mut total: f64 = weights.iter().sum();
    if total < MIN_TOTAL_WEIGHT {
        weights.iter_mut().for_each(|w| *w = 1.0);
        total = preds.len() as f64;
    }
    let p1 = preds
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * p.p1)
        .sum::<f64>()
        / total;
    let p2 = preds
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * p.p2)
        .sum::<f64>()
        / total;
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(Combined {
        p1,
        p2,
        chosen: argmax(p1, p2),
        weights,
    })
}

/// The pair of the most confident stream; ties go to the earliest stream.
pub fn combine_hard(preds: &[StreamPrediction]) -> Result<Combined> {
    let mut best = 0;
    let mut best_w = f64::NEG_INFINITY;
    for (i, p) in preds.iter().enumerate() {
        let w = confidence_weight(p);
        if w > best_w {
            best = i;
            best_w = w;
        }
    }
    let Some(p) = preds.get(best) else {
        return Err(Error::EmptyPredictions);
    };
    let mut weights = alloc::vec![0.0; preds.len()];
    weights[best] = 1.0;
    Ok(Combined {
        p1: p.p1,
        p2: p.p2,
        chosen: p.argmax(),
        weights,
    })
}

pub fn combine(mode: MixtureMode, preds: &[StreamPrediction]) -> Result<Combined> {
    match mode {
        MixtureMode::WeightedSum => combine_weighted(preds),
        MixtureMode::HardChoice => combine_hard(preds),
    }
}

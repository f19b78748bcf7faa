//! Word-level sequence attention, single-layer BiLSTM, self-attention
//! summarization and bilinear scoring, all recorded on a [`Tape`].

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Learned weights of one LSTM direction, already on the tape. Each gate has
/// an input weight `[d_in, d_h]`, a recurrent weight `[d_h, d_h]` and a bias
/// `[d_h]`; the arrays are ordered input, forget, output, candidate.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellVars {
    pub w: [Var; 4],
    pub u: [Var; 4],
    pub b: [Var; 4],
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmVars {
    pub fwd: LstmCellVars,
    pub bwd: LstmCellVars,
}

/// Aligned rows and the attention weights that produced them.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub output: Var,
    /// `[m, n]`; `None` when every key was masked.
    pub weights: Option<Var>,
}

/// For each query row, a softmax-weighted combination of key rows.
///
/// `score(i, j) = relu(W q_i) . relu(W k_j)`; masked keys (`true`) receive no
/// weight. With every key masked the output is all zeros.
pub fn seq_attention(
    tape: &mut Tape,
    query: Var,
    key: Var,
    proj: Var,
    key_mask: &[bool],
) -> Result<Attended> {
    let (qs, ks) = (
        tape.value(query).shape().to_vec(),
        tape.value(key).shape().to_vec(),
    );
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::ShapeMismatch {
            op: "seq_attention",
            lhs: qs,
            rhs: ks,
        });
    }
    if key_mask.len() != ks[0] {
        return Err(Error::ShapeMismatch {
            op: "seq_attention",
            lhs: ks,
            rhs: vec![key_mask.len()],
        });
    }
    if key_mask.iter().all(|&m| m) {
        let zeros = tape.constant(Tensor::zeros(&qs));
        return Ok(Attended {
            output: zeros,
            weights: None,
        });
    }
    let qp = tape.matmul(query, proj)?;
    let qp = tape.relu(qp)?;
    let kp = tape.matmul(key, proj)?;
    let kp = tape.relu(kp)?;
    let kt = tape.transpose(kp)?;
    let mut scores = tape.matmul(qp, kt)?;
    if key_mask.iter().any(|&m| m) {
        scores = tape.masked_fill(scores, key_mask)?;
    }
    let alpha = tape.softmax_rows(scores)?;
    let output = tape.matmul(alpha, key)?;
    Ok(Attended {
        output,
        weights: Some(alpha),
    })
}

fn run_direction(
    tape: &mut Tape,
    input: Var,
    cell: &LstmCellVars,
    reverse: bool,
    n: usize,
) -> Result<Vec<Var>> {
    let d_h = tape.value(cell.u[0]).shape()[0];
    let w = tape.concat_cols(&cell.w)?;
    let u = tape.concat_cols(&cell.u)?;
    let b = tape.concat_cols(&cell.b)?;
    let xw = tape.matmul(input, w)?;
    let xw = tape.add(xw, b)?;

    let mut outs: Vec<Var> = Vec::with_capacity(n);
    let mut state: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in order {
        let mut pre = tape.slice_rows(xw, t, 1)?;
        if let Some((h, _)) = state {
            let hu = tape.matmul(h, u)?;
            pre = tape.add(pre, hu)?;
        }
        let i = tape.slice_cols(pre, 0, d_h)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(pre, d_h, d_h)?;
        let f = tape.sigmoid(f)?;
        let o = tape.slice_cols(pre, 2 * d_h, d_h)?;
        let o = tape.sigmoid(o)?;
        let g = tape.slice_cols(pre, 3 * d_h, d_h)?;
        let g = tape.tanh(g)?;
        let ig = tape.mul(i, g)?;
        let c = match state {
            Some((_, c_prev)) => {
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        outs.push(h);
        state = Some((h, c));
    }
    if reverse {
        outs.reverse();
    }
    Ok(outs)
}

/// Single-layer bidirectional LSTM from zero initial states:
/// `[n, d_in] -> [n, 2 d_h]`, forward half first.
pub fn bilstm(tape: &mut Tape, input: Var, params: &BiLstmVars) -> Result<Var> {
    let n = tape.value(input).shape()[0];
    bilstm_with_length(tape, input, params, n)
}

/// As [`bilstm`], but only the first `valid` rows are read; both directions
/// run over that prefix and the remaining rows of the output are zero.
pub fn bilstm_with_length(
    tape: &mut Tape,
    input: Var,
    params: &BiLstmVars,
    valid: usize,
) -> Result<Var> {
    let shape = tape.value(input).shape().to_vec();
    let w_shape = tape.value(params.fwd.w[0]).shape().to_vec();
    if shape.len() != 2 || w_shape.len() != 2 || shape[1] != w_shape[0] {
        return Err(Error::ShapeMismatch {
            op: "bilstm",
            lhs: shape,
            rhs: w_shape,
        });
    }
    if valid == 0 || valid > shape[0] {
        return Err(Error::ShapeMismatch {
            op: "bilstm",
            lhs: shape,
            rhs: vec![valid],
        });
    }
    let fwd = run_direction(tape, input, &params.fwd, false, valid)?;
    let bwd = run_direction(tape, input, &params.bwd, true, valid)?;
    let f = tape.concat_rows(&fwd)?;
    let b = tape.concat_rows(&bwd)?;
    let out = tape.concat_cols(&[f, b])?;
    if valid == shape[0] {
        return Ok(out);
    }
    let width = tape.value(out).cols();
    let pad = tape.constant(Tensor::zeros(&[shape[0] - valid, width]));
    tape.concat_rows(&[out, pad])
}

/// Summary vector and its attention weights.
#[derive(Debug, Clone, Copy)]
pub struct Summary {
    /// `[1, d]`.
    pub output: Var,
    /// `[1, n]`.
    pub weights: Var,
}

/// `beta = softmax(H w)` over unmasked rows, summary `= beta H`.
pub fn self_attention(tape: &mut Tape, hidden: Var, score: Var, mask: &[bool]) -> Result<Summary> {
    let hs = tape.value(hidden).shape().to_vec();
    let ws = tape.value(score).shape().to_vec();
    if hs.len() != 2 || ws.iter().product::<usize>() != hs[1] {
        return Err(Error::ShapeMismatch {
            op: "self_attention",
            lhs: hs,
            rhs: ws,
        });
    }
    if mask.len() != hs[0] {
        return Err(Error::ShapeMismatch {
            op: "self_attention",
            lhs: hs,
            rhs: vec![mask.len()],
        });
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::AllMasked);
    }
    let w = tape.reshape(score, &[hs[1], 1])?;
    let s = tape.matmul(hidden, w)?;
    let mut s = tape.reshape(s, &[1, hs[0]])?;
    if mask.iter().any(|&m| m) {
        s = tape.masked_fill(s, mask)?;
    }
    let weights = tape.softmax_rows(s)?;
    let output = tape.matmul(weights, hidden)?;
    Ok(Summary { output, weights })
}

/// `a^T W b` as a `[1, 1]` tensor. `a` and `b` may be `[d]` or `[1, d]`.
pub fn bilinear_logit(tape: &mut Tape, a: Var, b: Var, w: Var) -> Result<Var> {
    let (la, lb) = (tape.value(a).len(), tape.value(b).len());
    let ws = tape.value(w).shape().to_vec();
    if ws.len() != 2 || ws[0] != la || ws[1] != lb {
        return Err(Error::ShapeMismatch {
            op: "bilinear",
            lhs: vec![la, lb],
            rhs: ws,
        });
    }
    let a = tape.reshape(a, &[1, la])?;
    let b = tape.reshape(b, &[lb, 1])?;
    let aw = tape.matmul(a, w)?;
    tape.matmul(aw, b)
}

//! Test fixtures and a loop-based re-implementation of every layer and
//! stream, written against raw parameter tensors without the tape.

#![allow(dead_code)]

use tmoe_core::experts::{init_params, StreamConfig, StreamKind, StreamParams};
use tmoe_core::features::{
    encode_instance, EncodedInstance, EncodedSequence, RawInstance, RelationLexicon, Resources,
    SeqTags, WordVectorTable,
};
use tmoe_core::ParamSet;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(p: &ParamSet, name: &str) -> Mat {
    let t = p.get(name).unwrap_or_else(|| panic!("missing {name}"));
    let c = t.cols();
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

pub fn vecp(p: &ParamSet, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data().to_vec()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn row_times(x: &[f64], w: &Mat) -> Vec<f64> {
    let n = w[0].len();
    let mut out = vec![0.0; n];
    for j in 0..n {
        let mut s = 0.0;
        for k in 0..x.len() {
            s += x[k] * w[k][j];
        }
        out[j] = s;
    }
    out
}

pub fn attention_weights(q: &Mat, k: &Mat, w: &Mat) -> Mat {
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let kp: Vec<Vec<f64>> = k.iter().map(|r| relu(row_times(r, w))).collect();
    q.iter()
        .map(|qi| {
            let qp = relu(row_times(qi, w));
            let scores: Vec<f64> = kp
                .iter()
                .map(|kj| qp.iter().zip(kj).map(|(a, b)| a * b).sum())
                .collect();
            softmax(&scores)
        })
        .collect()
}

pub fn attention(q: &Mat, k: &Mat, w: &Mat) -> Mat {
    let alpha = attention_weights(q, k, w);
    alpha
        .iter()
        .map(|a| {
            let mut out = vec![0.0; k[0].len()];
            for (j, kj) in k.iter().enumerate() {
                for d in 0..out.len() {
                    out[d] += a[j] * kj[d];
                }
            }
            out
        })
        .collect()
}

pub struct Cell {
    pub w: [Mat; 4],
    pub u: [Mat; 4],
    pub b: [Vec<f64>; 4],
}

pub fn cell(p: &ParamSet, prefix: &str) -> Cell {
    let g = ["i", "f", "o", "c"];
    Cell {
        w: g.map(|x| mat(p, &format!("{prefix}.w_{x}"))),
        u: g.map(|x| mat(p, &format!("{prefix}.u_{x}"))),
        b: g.map(|x| vecp(p, &format!("{prefix}.b_{x}"))),
    }
}

/// Gate-by-gate scalar recurrence.
pub fn lstm(x: &Mat, c: &Cell, reverse: bool) -> Mat {
    let n = x.len();
    let d_h = c.b[0].len();
    let mut h = vec![0.0; d_h];
    let mut cs = vec![0.0; d_h];
    let mut out = vec![vec![0.0; d_h]; n];
    let steps: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for t in steps {
        let mut gates = [
            vec![0.0; d_h],
            vec![0.0; d_h],
            vec![0.0; d_h],
            vec![0.0; d_h],
        ];
        for (g, gate) in gates.iter_mut().enumerate() {
            for u in 0..d_h {
                let mut s = c.b[g][u];
                for k in 0..x[t].len() {
                    s += x[t][k] * c.w[g][k][u];
                }
                for k in 0..d_h {
                    s += h[k] * c.u[g][k][u];
                }
                gate[u] = if g == 3 { s.tanh() } else { sigmoid(s) };
            }
        }
        for u in 0..d_h {
            cs[u] = gates[1][u] * cs[u] + gates[0][u] * gates[3][u];
            h[u] = gates[2][u] * cs[u].tanh();
        }
        out[t] = h.clone();
    }
    out
}

pub fn bilstm(x: &Mat, p: &ParamSet, block: &str) -> Mat {
    let f = lstm(x, &cell(p, &format!("{block}.fwd")), false);
    let b = lstm(x, &cell(p, &format!("{block}.bwd")), true);
    f.into_iter()
        .zip(b)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect()
}

pub fn self_attention_weights(h: &Mat, w: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = h
        .iter()
        .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect();
    softmax(&s)
}

pub fn self_attention(h: &Mat, w: &[f64]) -> Vec<f64> {
    let beta = self_attention_weights(h, w);
    let mut out = vec![0.0; h[0].len()];
    for (j, r) in h.iter().enumerate() {
        for d in 0..out.len() {
            out[d] += beta[j] * r[d];
        }
    }
    out
}

pub fn bilinear(a: &[f64], w: &Mat, b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            s += a[i] * w[i][j] * b[j];
        }
    }
    s
}

fn gather(table: &Mat, ids: &[usize]) -> Mat {
    ids.iter().map(|&i| table[i].clone()).collect()
}

fn hcat(parts: &[&Mat]) -> Mat {
    (0..parts[0].len())
        .map(|r| parts.iter().flat_map(|m| m[r].iter().copied()).collect())
        .collect()
}

/// Word rows and the full per-token channel concatenation.
fn embed(s: &StreamParams, seq: &EncodedSequence) -> (Mat, Mat) {
    let k = s.kind.name();
    let cfg = &s.config;
    let p = &s.params;
    let words = gather(&mat(p, &format!("{k}.embed.word")), &seq.tokens);
    let n = seq.len();
    let chan = |on: bool, name: &str, ids: &[usize], d: usize| {
        if on {
            gather(&mat(p, &format!("{k}.embed.{name}")), ids)
        } else {
            vec![vec![0.0; d]; n]
        }
    };
    let pos = chan(cfg.channels.pos, "pos", &seq.pos, cfg.d_pos);
    let ne = chan(cfg.channels.ne, "ne", &seq.ner, cfg.d_ne);
    let rel = chan(cfg.channels.relations, "rel", &seq.relations, cfg.d_rel);
    let hand: Mat = if cfg.channels.handcrafted {
        seq.features.iter().map(|r| r.to_vec()).collect()
    } else {
        vec![vec![]; n]
    };
    let feats = hcat(&[&words, &pos, &ne, &rel, &hand]);
    (words, feats)
}

/// Copy of `seq` with relation ids reset to 0 and one feature column zeroed.
fn blind(seq: &EncodedSequence, relations: bool, column: usize) -> EncodedSequence {
    let mut out = seq.clone();
    if relations {
        out.relations.iter_mut().for_each(|r| *r = 0);
    }
    out.features.iter_mut().for_each(|row| row[column] = 0.0);
    out
}

fn summarize(s: &StreamParams, seq: &str, input: &Mat) -> Vec<f64> {
    let k = s.kind.name();
    let h = bilstm(input, &s.params, &format!("{k}.{seq}_bilstm"));
    self_attention(&h, &vecp(&s.params, &format!("{k}.{seq}_self_attn.w")))
}

/// Evaluation-mode probability computed without the tape.
pub fn stream_probability(s: &StreamParams, inst: &EncodedInstance) -> f64 {
    let k = s.kind.name();
    let p = &s.params;
    let w = |block: &str| mat(p, &format!("{k}.{block}.w"));
    let logit = match s.kind {
        StreamKind::Pqcn => {
            let (pw, pf) = embed(s, &inst.passage);
            let (qw, qf) = embed(s, &inst.question);
            let (cw, cf) = embed(s, &inst.choice);
            let p_q = attention(&pw, &qw, &w("passage_question_attn"));
            let c_p = attention(&cw, &pw, &w("choice_passage_attn"));
            let c_q = attention(&cw, &qw, &w("choice_question_attn"));
            let ps = summarize(s, "passage", &hcat(&[&pf, &p_q]));
            let qs = summarize(s, "question", &qf);
            let cs = summarize(s, "choice", &hcat(&[&cf, &c_p, &c_q]));
            bilinear(&cs, &w("bilinear_choice_passage"), &ps)
                + bilinear(&cs, &w("bilinear_choice_question"), &qs)
        }
        StreamKind::Qcn => {
            let (qw, qf) = embed(s, &blind(&inst.question, false, 1));
            let (cw, cf) = embed(s, &blind(&inst.choice, true, 1));
            let c_q = attention(&cw, &qw, &w("choice_question_attn"));
            let qs = summarize(s, "question", &qf);
            let cs = summarize(s, "choice", &hcat(&[&cf, &c_q]));
            bilinear(&cs, &w("bilinear_choice_question"), &qs)
        }
        StreamKind::Pcn => {
            let (pw, pf) = embed(s, &blind(&inst.passage, true, 1));
            let (cw, cf) = embed(s, &blind(&inst.choice, false, 2));
            let c_p = attention(&cw, &pw, &w("choice_passage_attn"));
            let ps = summarize(s, "passage", &pf);
            let cs = summarize(s, "choice", &hcat(&[&cf, &c_p]));
            bilinear(&cs, &w("bilinear_choice_passage"), &ps)
        }
    };
    sigmoid(logit)
}

/// Small dimensions for finite-difference checks.
pub fn toy_config(seed: u64) -> StreamConfig {
    StreamConfig {
        d_word: 4,
        d_pos: 3,
        d_ne: 2,
        d_rel: 2,
        d_h: 3,
        d_att: 3,
        dropout: 0.0,
        seed,
        ..StreamConfig::default()
    }
}

pub struct Toy {
    pub resources: Resources,
    pub vectors: WordVectorTable,
    pub instance: EncodedInstance,
}

/// 6-token passage, 4-token question, 3-token choice, with tags and
/// relations so that every embedding table is exercised.
pub fn toy(d_word: usize, seed: u64) -> Toy {
    let mut raw = RawInstance::new(
        "toy",
        0,
        "we lit dry wood in pits",
        "what did they light",
        "the dry wood",
        1,
    );
    let tags =
        |n: usize, set: &[&str]| Some((0..n).map(|i| set[i % set.len()].to_string()).collect());
    raw.pos = Some(SeqTags {
        passage: tags(6, &["PRP", "VBD", "JJ", "NN"]),
        question: tags(4, &["WP", "VBD"]),
        choice: tags(3, &["DT", "JJ", "NN"]),
    });
    raw.ner = Some(SeqTags {
        passage: tags(6, &["O"]),
        question: None,
        choice: tags(3, &["O", "MISC"]),
    });
    let lex = RelationLexicon::from_entries([
        ("light", "wood", "UsedFor"),
        ("wood", "pits", "AtLocation"),
    ]);
    let resources = Resources::build(std::slice::from_ref(&raw), lex, 1);
    let vectors = WordVectorTable::random(&resources.vocab, d_word, seed);
    let instance = encode_instance(&raw, &resources).unwrap();
    Toy {
        resources,
        vectors,
        instance,
    }
}

pub fn toy_stream(kind: StreamKind, seed: u64) -> (Toy, StreamParams) {
    let cfg = toy_config(seed);
    let t = toy(cfg.d_word, seed);
    let s = init_params(kind, &cfg, &t.vectors, &t.resources).unwrap();
    (t, s)
}

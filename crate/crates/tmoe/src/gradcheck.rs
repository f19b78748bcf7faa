//! Finite-difference gradient suite over every layer type and every stream.

use rand::Rng;
use tmoe_core::experts::{init_params, StreamConfig, StreamKind};
use tmoe_core::features::{
    encode_instance, RawInstance, RelationLexicon, Resources, SeqTags, WordVectorTable,
};
use tmoe_core::layers::{self, BiLstmVars, LstmCellVars};
use tmoe_core::rng::{derive, uniform};
use tmoe_core::train::bce_loss_on_tape;
use tmoe_core::{grad_check, ParamSet, Result, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub check: String,
    /// Parameter with the largest relative error.
    pub worst_param: String,
    pub max_rel_error: f64,
}

fn worst(check: &str, errs: std::collections::BTreeMap<String, f64>) -> GradRow {
    let (worst_param, max_rel_error) =
        errs.into_iter().fold(
            (String::new(), 0.0),
            |a, (k, v)| if v > a.1 { (k, v) } else { a },
        );
    GradRow {
        check: check.to_string(),
        worst_param,
        max_rel_error,
    }
}

fn random_set(seed: u64, salt: &str, shapes: &[(&str, Vec<usize>)]) -> ParamSet {
    let mut rng = derive(seed, salt);
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.insert(*name, uniform(&mut rng, shape, 1.0));
    }
    p
}

/// `sum(out * r)` with a fixed random `r`, so every output entry matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = uniform(&mut derive(seed, "cotangent"), &shape, 1.0);
    let rv = tape.constant(r);
    let n: usize = shape.iter().product();
    let flat = tape.reshape(out, &[n])?;
    let rf = tape.reshape(rv, &[n])?;
    let w = tape.mul(flat, rf)?;
    tape.sum(w)
}

fn cell(tape: &mut Tape, p: &ParamSet, dir: &str) -> Result<LstmCellVars> {
    let mut get = |t: &str| -> Result<[Var; 4]> {
        let mut v = Vec::with_capacity(4);
        for g in ["i", "f", "o", "c"] {
            v.push(tape.param(&format!("{dir}.{t}_{g}"), p)?);
        }
        Ok([v[0], v[1], v[2], v[3]])
    };
    Ok(LstmCellVars {
        w: get("w")?,
        u: get("u")?,
        b: get("b")?,
    })
}

/// 6-token passage, 4-token question and 3-token choice with tags and
/// relations.
pub fn toy_instance(
    d_word: usize,
    seed: u64,
) -> (
    Resources,
    WordVectorTable,
    tmoe_core::features::EncodedInstance,
) {
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
    let res = Resources::build(std::slice::from_ref(&raw), lex, 1);
    let vectors = WordVectorTable::random(&res.vocab, d_word, seed);
    let inst = encode_instance(&raw, &res).expect("toy instance encodes");
    (res, vectors, inst)
}

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

/// Runs every check and returns one row per check.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();

    let p = random_set(
        seed,
        "attention",
        &[("q", vec![3, 4]), ("k", vec![5, 4]), ("w", vec![4, 3])],
    );
    let errs = grad_check(
        |tape, p| {
            let (q, k, w) = (
                tape.param("q", p)?,
                tape.param("k", p)?,
                tape.param("w", p)?,
            );
            let out = layers::seq_attention(tape, q, k, w, &[false, false, true, false, false])?;
            project(tape, out.output, seed)
        },
        &p,
        STEP,
    )?;
    rows.push(worst("seq_attention", errs));

    let (d_in, d_h, n) = (3, 3, 4);
    let mut shapes = vec![("x", vec![n, d_in])];
    let names: Vec<(String, Vec<usize>)> = ["fwd", "bwd"]
        .iter()
        .flat_map(|dir| {
            ["i", "f", "o", "c"].iter().flat_map(move |g| {
                [
                    (format!("{dir}.w_{g}"), vec![d_in, d_h]),
                    (format!("{dir}.u_{g}"), vec![d_h, d_h]),
                    (format!("{dir}.b_{g}"), vec![d_h]),
                ]
            })
        })
        .collect();
    shapes.extend(names.iter().map(|(a, b)| (a.as_str(), b.clone())));
    let p = random_set(seed, "bilstm", &shapes);
    let errs = grad_check(
        |tape, p| {
            let vars = BiLstmVars {
                fwd: cell(tape, p, "fwd")?,
                bwd: cell(tape, p, "bwd")?,
            };
            let x = tape.param("x", p)?;
            let h = layers::bilstm(tape, x, &vars)?;
            project(tape, h, seed)
        },
        &p,
        STEP,
    )?;
    rows.push(worst("bilstm", errs));

    let p = random_set(seed, "self-attention", &[("h", vec![5, 6]), ("w", vec![6])]);
    let errs = grad_check(
        |tape, p| {
            let (h, w) = (tape.param("h", p)?, tape.param("w", p)?);
            let s = layers::self_attention(tape, h, w, &[false, false, false, true, false])?;
            project(tape, s.output, seed)
        },
        &p,
        STEP,
    )?;
    rows.push(worst("self_attention", errs));

    let p = random_set(
        seed,
        "bilinear",
        &[("a", vec![3]), ("b", vec![4]), ("w", vec![3, 4])],
    );
    let errs = grad_check(
        |tape, p| {
            let (a, b, w) = (
                tape.param("a", p)?,
                tape.param("b", p)?,
                tape.param("w", p)?,
            );
            let l = layers::bilinear_logit(tape, a, b, w)?;
            tape.sum(l)
        },
        &p,
        STEP,
    )?;
    rows.push(worst("bilinear_logit", errs));

    for kind in StreamKind::ALL {
        let cfg = toy_config(seed);
        let (res, vectors, inst) = toy_instance(cfg.d_word, seed);
        let mut stream = init_params(kind, &cfg, &vectors, &res)?;
        let mut rng = derive(seed, "jitter");
        for (_, t) in stream.params.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.2..0.2));
        }
        let params = stream.params.clone();
        let errs = grad_check(
            |tape, p| {
                let mut probe = stream.clone();
                probe.params = p.clone();
                let y = probe.forward(tape, &inst)?;
                bce_loss_on_tape(tape, y, 1)
            },
            &params,
            STEP,
        )?;
        rows.push(worst(kind.name(), errs));
    }
    Ok(rows)
}

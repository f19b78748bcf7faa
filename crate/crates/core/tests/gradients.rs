mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tmoe_core::experts::StreamKind;
use tmoe_core::layers::{self, BiLstmVars, LstmCellVars};
use tmoe_core::rng::{seeded, uniform};
use tmoe_core::train::bce_loss_on_tape;
use tmoe_core::{grad_check, ParamSet, Primitive, Result, Tape, Tensor, Var};

const STEP: f64 = 1e-5;

fn worst(errs: &std::collections::BTreeMap<String, f64>) -> (String, f64) {
    errs.iter()
        .map(|(k, v)| (k.clone(), *v))
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

/// `sum(out * r)` for a fixed random cotangent `r`.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = seeded(seed ^ 0x5eed);
    let r = uniform(&mut rng, &shape, 1.0);
    let flat_n = r.len();
    let rv = tape.constant(Tensor::new(vec![1, flat_n], r.into_data())?);
    let flat = tape.reshape(out, &[1, flat_n])?;
    let weighted = tape.mul(flat, rv)?;
    tape.sum(weighted)
}

fn away_from(t: &mut Tensor, points: &[f64], gap: f64) {
    for v in t.data_mut() {
        for p in points {
            if (*v - p).abs() < gap {
                *v = p + if *v >= *p { gap } else { -gap };
            }
        }
    }
}

fn check_primitive(prim: Primitive, seed: u64, m: usize, n: usize, k: usize) {
    let mut rng = seeded(seed);
    let mut a = uniform(&mut rng, &[m, n], 1.0);
    let mut b = uniform(&mut rng, &[m, n], 1.0);
    match prim {
        Primitive::MatMul => b = uniform(&mut rng, &[n, k], 1.0),
        Primitive::Mul => b = uniform(&mut rng, &[n], 1.0),
        Primitive::ConcatRows => b = uniform(&mut rng, &[k, n], 1.0),
        Primitive::ConcatLastDim => b = uniform(&mut rng, &[m, k], 1.0),
        Primitive::Relu => away_from(&mut a, &[0.0], 1e-3),
        Primitive::Clamp { lo, hi } => away_from(&mut a, &[lo, hi], 1e-3),
        Primitive::Ln => a.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2),
        _ => {}
    }
    let binary = matches!(
        prim,
        Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::ConcatRows
            | Primitive::ConcatLastDim
    );
    let mut params = ParamSet::new();
    params.insert("a", a);
    if binary {
        params.insert("b", b);
    }
    let errs = grad_check(
        |tape, p| {
            let mut inputs = vec![tape.param("a", p)?];
            if binary {
                inputs.push(tape.param("b", p)?);
            }
            let out = tape.apply(prim.clone(), &inputs)?;
            // Filled entries are constant; their -1e9 magnitude would swamp
            // the central difference of everything else.
            let out = match &prim {
                Primitive::MaskedFill(mask) => {
                    let keep: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
                    let keep = tape.constant(Tensor::new(vec![m, n], keep)?);
                    let flat = tape.reshape(out, &[m * n])?;
                    let keep = tape.reshape(keep, &[m * n])?;
                    let kept = tape.mul(flat, keep)?;
                    tape.reshape(kept, &[m, n])?
                }
                _ => out,
            };
            project(tape, out, seed)
        },
        &params,
        STEP,
    )
    .unwrap();
    let (name, e) = worst(&errs);
    assert!(e < 1e-6, "{prim:?} {m}x{n}x{k}: {name} rel err {e}");
}

fn all_primitives(m: usize, n: usize) -> Vec<Primitive> {
    let mask: Vec<bool> = (0..m * n).map(|i| i % 3 == 1).collect();
    vec![
        Primitive::MatMul,
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::Relu,
        Primitive::SoftmaxRows,
        Primitive::ConcatLastDim,
        Primitive::ConcatRows,
        Primitive::SumRows,
        Primitive::Sum,
        Primitive::Scale(-1.7),
        Primitive::MaskedFill(mask),
        Primitive::Transpose,
        Primitive::Reshape(vec![n, m]),
        Primitive::SliceRows {
            start: m / 2,
            len: m - m / 2,
        },
        Primitive::SliceCols {
            start: 0,
            len: n.div_ceil(2),
        },
        Primitive::Gather(vec![m - 1, 0, m / 2, m - 1]),
        Primitive::Ln,
        Primitive::Clamp { lo: -0.5, hi: 0.4 },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in any::<u64>(), m in 1usize..5, n in 1usize..5, k in 1usize..4) {
        for prim in all_primitives(m, n) {
            check_primitive(prim, seed, m, n, k);
        }
    }
}

#[test]
fn dropout_backward_reuses_the_forward_mask() {
    let mut params = ParamSet::new();
    params.insert("a", uniform(&mut seeded(3), &[4, 5], 1.0));
    let run = |p: &ParamSet| {
        let mut tape = Tape::training(seeded(77));
        let a = tape.param("a", p).unwrap();
        let d = tape.dropout(a, 0.4).unwrap();
        let l = project(&mut tape, d, 1).unwrap();
        (tape.scalar(l), tape.backward(l, p).unwrap())
    };
    let (base, grads) = run(&params);
    let g = grads.get("a").unwrap().data().to_vec();
    let mut probe = params.clone();
    for i in 0..g.len() {
        probe.get_mut("a").unwrap().data_mut()[i] += STEP;
        let (plus, _) = run(&probe);
        probe.get_mut("a").unwrap().data_mut()[i] -= STEP;
        let numeric = (plus - base) / STEP;
        assert!((numeric - g[i]).abs() < 1e-6, "{i}: {numeric} vs {}", g[i]);
    }
}

fn random_params(seed: u64, shapes: &[(&str, &[usize])], limit: f64) -> ParamSet {
    let mut rng = seeded(seed);
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.insert(*name, uniform(&mut rng, shape, limit));
    }
    p
}

#[test]
fn seq_attention_on_three_by_four() {
    for seed in 0..8 {
        let p = random_params(seed, &[("q", &[3, 4]), ("k", &[5, 4]), ("w", &[4, 3])], 1.0);
        let errs = grad_check(
            |tape, p| {
                let (q, k, w) = (
                    tape.param("q", p)?,
                    tape.param("k", p)?,
                    tape.param("w", p)?,
                );
                let out =
                    layers::seq_attention(tape, q, k, w, &[false, true, false, false, false])?;
                project(tape, out.output, seed)
            },
            &p,
            STEP,
        )
        .unwrap();
        let (name, e) = worst(&errs);
        assert!(e < 1e-4, "seed {seed}: {name} {e}");
    }
}

fn lstm_shapes(d_in: usize, d_h: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    for dir in ["fwd", "bwd"] {
        for g in ["i", "f", "o", "c"] {
            v.push((format!("{dir}.w_{g}"), vec![d_in, d_h]));
            v.push((format!("{dir}.u_{g}"), vec![d_h, d_h]));
            v.push((format!("{dir}.b_{g}"), vec![d_h]));
        }
    }
    v
}

fn lstm_vars(tape: &mut Tape, p: &ParamSet, dir: &str) -> Result<LstmCellVars> {
    let mut out = Vec::new();
    for t in ["w", "u", "b"] {
        for g in ["i", "f", "o", "c"] {
            out.push(tape.param(&format!("{dir}.{t}_{g}"), p)?);
        }
    }
    Ok(LstmCellVars {
        w: [out[0], out[1], out[2], out[3]],
        u: [out[4], out[5], out[6], out[7]],
        b: [out[8], out[9], out[10], out[11]],
    })
}

#[test]
fn bilstm_gradients() {
    for (seed, n, d_in, d_h) in [(0, 1, 2, 2), (1, 4, 3, 2), (2, 6, 2, 3)] {
        let shapes = lstm_shapes(d_in, d_h);
        let shapes_x = [n, d_in];
        let mut shape_refs: Vec<(&str, &[usize])> = shapes
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_slice()))
            .collect();
        shape_refs.push(("x", &shapes_x));
        let p = random_params(seed, &shape_refs, 0.8);
        let errs = grad_check(
            |tape, p| {
                let vars = BiLstmVars {
                    fwd: lstm_vars(tape, p, "fwd")?,
                    bwd: lstm_vars(tape, p, "bwd")?,
                };
                let x = tape.param("x", p)?;
                let h = layers::bilstm(tape, x, &vars)?;
                project(tape, h, seed)
            },
            &p,
            STEP,
        )
        .unwrap();
        let (name, e) = worst(&errs);
        assert!(e < 1e-4, "seed {seed}: {name} {e}");
    }
}

#[test]
fn self_attention_gradients() {
    for seed in 0..8 {
        let p = random_params(seed, &[("h", &[5, 4]), ("w", &[4])], 1.0);
        let errs = grad_check(
            |tape, p| {
                let (h, w) = (tape.param("h", p)?, tape.param("w", p)?);
                let s = layers::self_attention(tape, h, w, &[false, false, true, false, false])?;
                project(tape, s.output, seed)
            },
            &p,
            STEP,
        )
        .unwrap();
        let (name, e) = worst(&errs);
        assert!(e < 1e-4, "seed {seed}: {name} {e}");
    }
}

#[test]
fn bilinear_gradients() {
    for seed in 0..8 {
        let p = random_params(seed, &[("a", &[1, 3]), ("b", &[1, 4]), ("w", &[3, 4])], 1.0);
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
        )
        .unwrap();
        let (name, e) = worst(&errs);
        assert!(e < 1e-4, "seed {seed}: {name} {e}");
    }
}

fn stream_errors(kind: StreamKind, seed: u64) -> (String, f64) {
    let (toy, mut s) = toy_stream(kind, seed);
    let mut rng = seeded(seed + 40);
    for (_, t) in s.params.iter_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    let inst = toy.instance.clone();
    let params = s.params.clone();
    let errs = grad_check(
        |tape, p| {
            let mut probe = s.clone();
            probe.params = p.clone();
            let y = probe.forward(tape, &inst)?;
            bce_loss_on_tape(tape, y, 1)
        },
        &params,
        STEP,
    )
    .unwrap();
    worst(&errs)
}

#[test]
fn full_streams_pass_gradient_check() {
    for kind in StreamKind::ALL {
        for seed in [1, 2] {
            let (name, e) = stream_errors(kind, seed);
            assert!(e < 1e-4, "{kind} seed {seed}: {name} {e}");
        }
    }
}

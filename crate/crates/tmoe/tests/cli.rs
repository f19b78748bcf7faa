use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn tmoe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmoe"))
        .env("RUST_LOG", "info")
        .args(args)
        .output()
        .expect("spawn tmoe")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit status")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic suite written by the CLI itself.
fn suite() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    let o = tmoe(&[
        "synth",
        "--out-dir",
        s(&d),
        "--seed",
        "3",
        "--signal",
        "both",
        "--train-questions",
        "12",
        "--dev-questions",
        "8",
        "--d-word",
        "8",
        "--entailment",
        "16",
        "--stories",
        "8",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (dir, d)
}

fn small_train(d: &Path, stream: &str, out: &Path, extra: &[&str]) -> Output {
    let (train, dev, vectors) = (
        d.join("mc_train.jsonl"),
        d.join("mc_dev.jsonl"),
        d.join("vectors.txt"),
    );
    let mut args = vec![
        "train",
        "--data",
        s(&train),
        "--dev",
        s(&dev),
        "--stream",
        stream,
        "--seed",
        "5",
        "--vectors",
        s(&vectors),
        "--d-word",
        "8",
        "--d-h",
        "4",
        "--d-att",
        "6",
        "--epochs",
        "2",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    tmoe(&args)
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&tmoe(&[])), 1);
    assert_eq!(code(&tmoe(&["frobnicate"])), 1);
    assert_eq!(code(&tmoe(&["gradcheck", "--bogus"])), 1);
    let o = tmoe(&[
        "train", "--data", "t.l", "--dev", "d.l", "--stream", "pqcn", "--out", "x",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seed"));
    assert_eq!(
        code(&tmoe(&[
            "ablate", "--data", "t", "--dev", "d", "--stream", "qcn"
        ])),
        1
    );
    assert_eq!(
        code(&tmoe(&[
            "pretrain",
            "--task",
            "entailment",
            "--data",
            "t",
            "--dev",
            "d",
            "--out",
            "x"
        ])),
        1
    );
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&tmoe(&["--help"])), 0);
    assert_eq!(code(&tmoe(&["--version"])), 0);
    assert_eq!(code(&tmoe(&["train", "--help"])), 0);
}

#[test]
fn data_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        "{\"id\":\"a\",\"passage\":\"p\",\"question\":\"q\",\"choices\":[\"x\",\"y\"],\"label\":0}\n{not json}\n",
    )
    .unwrap();
    let out = dir.path().join("m.ckpt");
    let o = tmoe(&[
        "train",
        "--data",
        s(&bad),
        "--dev",
        s(&bad),
        "--stream",
        "qcn",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.jsonl:2"), "{}", stderr(&o));

    let missing = dir.path().join("nope.jsonl");
    let o = tmoe(&[
        "train",
        "--data",
        s(&missing),
        "--dev",
        s(&bad),
        "--stream",
        "qcn",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.jsonl"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"TMOEjunk").unwrap();
    let o = tmoe(&["eval", "--data", s(&bad), "--checkpoint", s(&junk)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_breach_exits_3() {
    let o = tmoe(&["gradcheck", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let worst: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max relative error "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(worst < 1e-3);
    assert_eq!(
        code(&tmoe(&["gradcheck", "--seed", "1", "--tolerance", "1e-30"])),
        3
    );
}

#[test]
fn flags_override_config_file() {
    let (_tmp, d) = suite();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "lr = 0.001\nepochs = 1\n").unwrap();
    let o = small_train(
        &d,
        "qcn",
        &d.join("q.ckpt"),
        &["--config", s(&cfg), "--lr", "0.01"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("\"lr\":0.01"), "{log}");
    assert!(log.contains("\"seed\":5"), "{log}");
    // `--epochs 2` from the flags beats `epochs = 1` from the file.
    assert!(log.contains("\"epochs\":2"), "{log}");

    std::fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let o = small_train(&d, "qcn", &d.join("q.ckpt"), &["--config", s(&cfg)]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

fn tsv_value(text: &str, mode: &str, metric: &str) -> f64 {
    text.lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|f| f[0] == mode && f[1] == metric)
        .unwrap_or_else(|| panic!("{mode} {metric} missing from {text}"))[2]
        .parse()
        .unwrap()
}

#[test]
fn eval_with_one_checkpoint_matches_the_stream() {
    let (_tmp, d) = suite();
    let ckpt = d.join("p.ckpt");
    let o = small_train(&d, "pqcn", &ckpt, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = d.join("r.tsv");
    let o = tmoe(&[
        "eval",
        "--data",
        s(&d.join("mc_dev.jsonl")),
        "--checkpoint",
        s(&ckpt),
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    for mode in ["weighted", "hard"] {
        assert_eq!(
            tsv_value(&text, mode, "accuracy.pqcn"),
            tsv_value(&text, mode, "accuracy.mixture")
        );
        assert_eq!(tsv_value(&text, mode, "questions"), 8.0);
    }
}

#[test]
fn mixture_of_trained_experts_with_different_vocabularies() {
    let (_tmp, d) = suite();
    let (a, b) = (d.join("a.ckpt"), d.join("b.ckpt"));
    let lexicon = d.join("lexicon.tsv");
    assert_eq!(
        code(&small_train(&d, "pqcn", &a, &["--lexicon", s(&lexicon)])),
        0
    );
    let o = small_train(&d, "pcn", &b, &["--min-count", "2", "--no-pos"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = d.join("p.jsonl");
    let o = tmoe(&[
        "predict",
        "--data",
        s(&d.join("mc_dev.jsonl")),
        "--checkpoint",
        s(&a),
        "--checkpoint",
        s(&b),
        "--mode",
        "hard",
        "--out",
        s(&out),
        "--workers",
        "2",
        "--lexicon",
        s(&lexicon),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 8);
    for l in &lines {
        assert_eq!(l["mode"], "hard");
        assert_eq!(l["streams"].as_array().unwrap().len(), 2);
        assert!(l["chosen"].as_u64().unwrap() < 2);
    }
}

#[test]
fn predict_worked_example_through_injection() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("q.jsonl");
    std::fs::write(
        &data,
        r#"{"id":"ex","passage":"p .","question":"q ?","choices":["one","two"],"label":1}"#,
    )
    .unwrap();
    let out = dir.path().join("p.jsonl");
    let o = tmoe(&[
        "predict",
        "--data",
        s(&data),
        "--inject",
        "qcn=0.92,0.85",
        "--inject",
        "pqcn=0.2,0.9",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("choice 2"), "{table}");
    assert!(
        table.contains("w=0.0700") && table.contains("w=0.7000"),
        "{table}"
    );
    let line: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(line["chosen"], 1);
    assert!((line["p1"].as_f64().unwrap() - 2044.0 / 7700.0).abs() < 1e-12);
    assert!((line["p2"].as_f64().unwrap() - 6895.0 / 7700.0).abs() < 1e-12);
    assert!((line["streams"][0]["confidence"].as_f64().unwrap() - 0.07).abs() < 1e-12);

    assert_eq!(
        code(&tmoe(&[
            "predict",
            "--data",
            s(&data),
            "--inject",
            "qcn=1.5,0.2"
        ])),
        1
    );
    assert_eq!(code(&tmoe(&["predict", "--data", s(&data)])), 1);
}

#[test]
fn pretrain_then_fine_tune() {
    let (_tmp, d) = suite();
    let pre = d.join("entail.ckpt");
    let o = tmoe(&[
        "pretrain",
        "--task",
        "entailment",
        "--data",
        s(&d.join("entail_train.jsonl")),
        "--dev",
        s(&d.join("entail_dev.jsonl")),
        "--seed",
        "2",
        "--d-word",
        "8",
        "--d-h",
        "4",
        "--d-att",
        "6",
        "--epochs",
        "1",
        "--out",
        s(&pre),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let c = tmoe::checkpoint::load(&pre).unwrap();
    assert_eq!(c.meta.source_task, "entailment");
    assert_eq!(c.stream.kind, tmoe_core::StreamKind::Qcn);

    let tuned = d.join("tuned.ckpt");
    let o = tmoe(&[
        "train",
        "--data",
        s(&d.join("mc_train.jsonl")),
        "--dev",
        s(&d.join("mc_dev.jsonl")),
        "--stream",
        "qcn",
        "--seed",
        "2",
        "--epochs",
        "1",
        "--init-from",
        s(&pre),
        "--out",
        s(&tuned),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        tmoe::checkpoint::load(&tuned).unwrap().meta.source_task,
        "transfer:entailment"
    );

    // A story checkpoint is a PCN and cannot seed a QCN.
    let story = d.join("story.ckpt");
    let o = tmoe(&[
        "pretrain",
        "--task",
        "story-cloze",
        "--data",
        s(&d.join("story_train.jsonl")),
        "--dev",
        s(&d.join("story_dev.jsonl")),
        "--seed",
        "2",
        "--d-word",
        "8",
        "--d-h",
        "4",
        "--d-att",
        "6",
        "--epochs",
        "1",
        "--out",
        s(&story),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tmoe(&[
        "train",
        "--data",
        s(&d.join("mc_train.jsonl")),
        "--dev",
        s(&d.join("mc_dev.jsonl")),
        "--stream",
        "qcn",
        "--seed",
        "2",
        "--init-from",
        s(&story),
        "--out",
        s(&tuned),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn ablate_writes_one_row_per_flag() {
    let (_tmp, d) = suite();
    let out = d.join("abl.tsv");
    let o = tmoe(&[
        "ablate",
        "--data",
        s(&d.join("mc_train.jsonl")),
        "--dev",
        s(&d.join("mc_dev.jsonl")),
        "--stream",
        "qcn",
        "--seed",
        "1",
        "--d-word",
        "8",
        "--d-h",
        "4",
        "--d-att",
        "6",
        "--epochs",
        "1",
        "--flags",
        "pos,relations",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let keys: Vec<String> = std::fs::read_to_string(&out)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(keys, ["all", "pos", "relations"]);
    let o = tmoe(&[
        "ablate",
        "--data",
        s(&d.join("mc_train.jsonl")),
        "--dev",
        s(&d.join("mc_dev.jsonl")),
        "--stream",
        "qcn",
        "--seed",
        "1",
        "--flags",
        "colour",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn synth_is_deterministic() {
    let (_a, da) = suite();
    let (_b, db) = suite();
    for name in [
        "mc_train.jsonl",
        "mc_dev.jsonl",
        "entail_train.jsonl",
        "story_dev.jsonl",
        "vectors.txt",
        "lexicon.tsv",
    ] {
        assert_eq!(
            std::fs::read(da.join(name)).unwrap(),
            std::fs::read(db.join(name)).unwrap(),
            "{name}"
        );
    }
}

//! Machine-readable and aligned text renderings of evaluation results.

use std::fmt::Write as _;

use serde::Serialize;
use tmoe_core::confidence_weight;
use tmoe_core::train::{EpochLog, EvalReport, QuestionOutcome};

/// `mode<TAB>metric<TAB>value` lines for each report, preceded by a header.
pub fn eval_tsv(reports: &[EvalReport]) -> String {
    let mut s = String::from("mode\tmetric\tvalue\n");
    for r in reports {
        let m = r.mode.name();
        let _ = writeln!(s, "{m}\tquestions\t{}", r.questions);
        for (kind, acc) in &r.per_stream {
            let _ = writeln!(s, "{m}\taccuracy.{kind}\t{acc:.6}");
        }
        let _ = writeln!(s, "{m}\taccuracy.mixture\t{:.6}", r.accuracy);
        let _ = writeln!(s, "{m}\tagreement_rate\t{:.6}", r.agreement_rate);
        let _ = writeln!(s, "{m}\tlow_margin\t{}", r.low_margin);
    }
    s
}

pub fn eval_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}{:<10}{:>9}", "Mode", "Expert", "Accuracy");
    for r in reports {
        let m = r.mode.name();
        for (kind, acc) in &r.per_stream {
            let _ = writeln!(s, "{m:<14}{:<10}{:>8.2}%", kind.name(), 100.0 * acc);
        }
        let _ = writeln!(s, "{m:<14}{:<10}{:>8.2}%", "mixture", 100.0 * r.accuracy);
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(
            s,
            "\n{} questions, experts agree on {:.2}%, {} low-margin answers",
            r.questions,
            100.0 * r.agreement_rate,
            r.low_margin
        );
    }
    s
}

#[derive(Serialize)]
struct StreamLine<'a> {
    stream: &'a str,
    p1: f64,
    p2: f64,
    confidence: f64,
    weight: f64,
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    mode: &'a str,
    /// 0-based, the same convention as the instance file's `label`.
    chosen: usize,
    p1: f64,
    p2: f64,
    streams: Vec<StreamLine<'a>>,
}

pub fn predictions_jsonl(report: &EvalReport) -> String {
    let mut s = String::new();
    for o in &report.outcomes {
        let line = PredictionLine {
            id: &o.id,
            mode: report.mode.name(),
            chosen: o.combined.chosen,
            p1: o.combined.p1,
            p2: o.combined.p2,
            streams: o
                .streams
                .iter()
                .zip(&o.combined.weights)
                .map(|(p, w)| StreamLine {
                    stream: p.kind.name(),
                    p1: p.p1,
                    p2: p.p2,
                    confidence: confidence_weight(p),
                    weight: *w,
                })
                .collect(),
        };
        s.push_str(&serde_json::to_string(&line).expect("plain values serialize"));
        s.push('\n');
    }
    s
}

fn outcome_line(o: &QuestionOutcome) -> String {
    let mut s = format!(
        "{}  choice {}  P=({:.4}, {:.4})",
        o.id,
        o.combined.chosen + 1,
        o.combined.p1,
        o.combined.p2
    );
    for p in &o.streams {
        let _ = write!(
            s,
            "  {}=({:.2}, {:.2}) w={:.4}",
            p.kind,
            p.p1,
            p.p2,
            confidence_weight(p)
        );
    }
    s
}

pub fn predictions_table(report: &EvalReport) -> String {
    let mut s = format!("mode {}\n", report.mode.name());
    for o in &report.outcomes {
        s.push_str(&outcome_line(o));
        s.push('\n');
    }
    s
}

pub fn epoch_tsv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch\ttrain_loss\ttrain_accuracy\tdev_accuracy\n");
    for l in logs {
        let train = l
            .train_accuracy
            .map(|a| format!("{a:.6}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{}\t{:.17e}\t{train}\t{:.6}",
            l.epoch, l.train_loss, l.dev_accuracy
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use tmoe_core::mixture::combine;
    use tmoe_core::{MixtureMode, StreamKind, StreamPrediction};

    fn worked() -> EvalReport {
        let streams = vec![
            StreamPrediction::new(StreamKind::Pqcn, 0.92, 0.85),
            StreamPrediction::new(StreamKind::Qcn, 0.2, 0.9),
        ];
        let combined = combine(MixtureMode::WeightedSum, &streams).unwrap();
        let o = QuestionOutcome {
            id: "w".into(),
            gold: 1,
            streams,
            combined,
        };
        tmoe_core::train::summarize(MixtureMode::WeightedSum, vec![o]).unwrap()
    }

    #[test]
    fn prediction_table_shows_confidences() {
        let t = predictions_table(&worked());
        assert!(t.contains("choice 2"), "{t}");
        assert!(t.contains("w=0.0700") && t.contains("w=0.7000"), "{t}");
        assert!(t.contains("P=(0.2655, 0.8955)"), "{t}");
    }

    #[test]
    fn prediction_lines_are_json() {
        let line = predictions_jsonl(&worked());
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["chosen"], 1);
        assert_eq!(v["streams"][1]["stream"], "qcn");
    }

    #[test]
    fn tsv_lists_every_stream() {
        let t = eval_tsv(&[worked()]);
        assert!(t.contains("weighted\taccuracy.pqcn\t0.000000"));
        assert!(t.contains("weighted\taccuracy.mixture\t1.000000"));
    }
}

//! Evaluation report files: a `key = value` text report and a JSON-lines file
//! with one summary object followed by one object per emotion class.

use std::fmt::Write as _;
use std::path::Path;

use hgnn_core::metrics::EvalReport;
use hgnn_core::Emotion;
use serde_json::json;

use crate::{Error, Result};

pub fn render_text(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "ppl = {}", r.ppl);
    let _ = writeln!(out, "bleu = {}", r.bleu);
    let _ = writeln!(out, "dist1 = {}", r.dist1);
    let _ = writeln!(out, "dist2 = {}", r.dist2);
    let _ = writeln!(out, "emotion_weighted_f1 = {}", r.emotion.weighted_f1);
    let _ = writeln!(out, "emotion_accuracy = {}", r.emotion.accuracy);
    let _ = writeln!(out, "emotion_samples = {}", r.emotion.samples);
    let _ = writeln!(out, "dialogues = {}", r.dialogues);
    let _ = writeln!(out, "unlabeled = {}", r.unlabeled);
    let _ = writeln!(out, "generated_tokens = {}", r.generated_tokens);
    let _ = writeln!(out, "truncated = {}", r.truncated);
    for (e, c) in Emotion::ALL.iter().zip(&r.emotion.per_class) {
        let n = e.name();
        let _ = writeln!(out, "{n}.precision = {}", c.precision);
        let _ = writeln!(out, "{n}.recall = {}", c.recall);
        let _ = writeln!(out, "{n}.f1 = {}", c.f1);
        let _ = writeln!(out, "{n}.support = {}", c.support);
        let _ = writeln!(out, "{n}.predicted = {}", c.predicted);
    }
    out
}

pub fn render_jsonl(r: &EvalReport) -> String {
    let mut lines = vec![json!({
        "kind": "summary",
        "ppl": r.ppl,
        "bleu": r.bleu,
        "dist1": r.dist1,
        "dist2": r.dist2,
        "emotion_weighted_f1": r.emotion.weighted_f1,
        "emotion_accuracy": r.emotion.accuracy,
        "emotion_samples": r.emotion.samples,
        "dialogues": r.dialogues,
        "unlabeled": r.unlabeled,
        "generated_tokens": r.generated_tokens,
        "truncated": r.truncated,
    })];
    for (e, c) in Emotion::ALL.iter().zip(&r.emotion.per_class) {
        lines.push(json!({
            "kind": "class",
            "emotion": e.name(),
            "precision": c.precision,
            "recall": c.recall,
            "f1": c.f1,
            "support": c.support,
            "predicted": c.predicted,
        }));
    }
    let mut out = String::new();
    for l in lines {
        let _ = writeln!(out, "{l}");
    }
    out
}

/// The JSON-lines path that accompanies a text report: `report.txt` gives
/// `report.jsonl`.
pub fn jsonl_path(report: &Path) -> std::path::PathBuf {
    report.with_extension("jsonl")
}

/// Writes the text report to `path` and the JSON-lines report beside it.
/// Returns the JSON-lines path.
pub fn write(path: &Path, r: &EvalReport) -> Result<std::path::PathBuf> {
    std::fs::write(path, render_text(r)).map_err(|e| Error::io(path, e))?;
    let mut jl = jsonl_path(path);
    if jl == path {
        jl = path.with_extension("report.jsonl");
    }
    std::fs::write(&jl, render_jsonl(r)).map_err(|e| Error::io(&jl, e))?;
    Ok(jl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgnn_core::metrics::emotion_weighted_f1;

    fn report() -> EvalReport {
        let golds = [Emotion::Joy, Emotion::Anger, Emotion::Joy];
        let preds = [Emotion::Joy, Emotion::Joy, Emotion::Joy];
        EvalReport {
            ppl: 12.5,
            dist1: 0.5,
            dist2: 0.75,
            bleu: 0.125,
            emotion: emotion_weighted_f1(&preds, &golds).unwrap(),
            dialogues: 3,
            unlabeled: 0,
            generated_tokens: 9,
            truncated: 1,
        }
    }

    #[test]
    fn text_report_is_key_value() {
        let text = render_text(&report());
        for line in text.lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            assert!(!k.is_empty() && !v.is_empty());
        }
        assert!(text.contains("ppl = 12.5\n"));
        assert!(text.contains("joy.support = 2\n"));
    }

    #[test]
    fn jsonl_has_summary_then_classes() {
        let text = render_jsonl(&report());
        let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 1 + Emotion::ALL.len());
        assert_eq!(rows[0]["kind"], "summary");
        assert_eq!(rows[0]["bleu"], 0.125);
        assert!(rows[1..].iter().all(|r| r["kind"] == "class"));
    }
}

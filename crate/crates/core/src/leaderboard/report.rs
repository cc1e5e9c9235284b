//! Line-delimited JSON and aligned-text renderings of reports.
//!
//! Every JSON line carries a `kind` field. Output depends only on the
//! report contents, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde_json::{json, Value};

use super::align::{AlignmentReport, SliceReport};
use super::{Leaderboard, ModelAgreement};
use crate::dataset::Dimension;
use crate::stats::{CorrelationReport, StatsError};

/// How per-model human scores were aggregated, recorded with each leaderboard.
pub const AGGREGATION_NOTE: &str = "arithmetic mean of item MOS per model; accuracy is the share of items whose outcome matches the expected answer";

fn correlation_fields(result: &Result<CorrelationReport, StatsError>) -> Value {
    match result {
        Ok(r) => json!({
            "n": r.n,
            "srcc": r.srcc,
            "krcc": r.krcc,
            "plcc": r.plcc,
            "rmse": r.rmse,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn slice_lines(metric: &str, slice: &SliceReport, out: &mut Vec<Value>) {
    let scope = serde_json::to_value(slice.scope).expect("scope serializes");
    for (dimension, result) in &slice.dimensions {
        let head = merge(
            json!({ "kind": "alignment", "metric": metric, "dimension": dimension, "items": slice.n_items }),
            scope.clone(),
        );
        out.push(merge(head, correlation_fields(result)));
    }
    if let Some(acc) = &slice.qa_accuracy {
        let head = merge(
            json!({ "kind": "qa", "metric": metric, "n": slice.qa_n }),
            scope.clone(),
        );
        let body = match acc {
            Ok(a) => json!({ "accuracy": a }),
            Err(e) => json!({ "error": e.to_string() }),
        };
        out.push(merge(head, body));
    }
}

fn agreement_lines(metric: &str, agreement: &ModelAgreement, out: &mut Vec<Value>) {
    let mut push = |target: &str, result: &Result<CorrelationReport, StatsError>| {
        let head = json!({ "kind": "model-agreement", "metric": metric, "target": target, "models": agreement.n_models });
        out.push(merge(head, correlation_fields(result)));
    };
    for (dimension, result) in &agreement.dimensions {
        push(dimension.as_str(), result);
    }
    push("accuracy", &agreement.accuracy);
    push("overall-rank", &agreement.overall_rank);
    push("acc-rank", &agreement.acc_rank);
}

pub fn alignment_json(report: &AlignmentReport) -> Vec<Value> {
    let mut lines = Vec::new();
    for slice in &report.slices {
        slice_lines(&report.metric_name, slice, &mut lines);
    }
    if let Some(agreement) = &report.models {
        agreement_lines(&report.metric_name, agreement, &mut lines);
    }
    lines
}

pub fn leaderboard_json(board: &Leaderboard) -> Vec<Value> {
    let mut lines = vec![json!({
        "kind": "leaderboard-meta",
        "weights": board.weights,
        "floored": board.floored,
        "aggregation": AGGREGATION_NOTE,
    })];
    for model in &board.models {
        let value = serde_json::to_value(model).expect("aggregate serializes");
        lines.push(merge(json!({ "kind": "model" }), value));
    }
    lines
}

pub fn write_jsonl<W: Write>(lines: &[Value], mut out: W) -> io::Result<()> {
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn correlation_row(label: &str, target: &str, result: &Result<CorrelationReport, StatsError>) -> String {
    match result {
        Ok(r) => format!(
            "{label:<24} {target:<13} {:>6} {:>8.4} {:>8.4} {:>8} {:>9}\n",
            r.n,
            r.srcc,
            r.krcc,
            opt(r.plcc),
            opt(r.rmse)
        ),
        Err(e) => format!("{label:<24} {target:<13} {e}\n"),
    }
}

pub fn alignment_table(report: &AlignmentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "metric: {} ({})", report.metric_name, report.source);
    let _ = writeln!(
        out,
        "{:<24} {:<13} {:>6} {:>8} {:>8} {:>8} {:>9}",
        "slice", "dimension", "n", "SRCC", "KRCC", "PLCC", "RMSE"
    );
    for slice in &report.slices {
        let label = slice.scope.label();
        for (dimension, result) in &slice.dimensions {
            out.push_str(&correlation_row(&label, dimension.as_str(), result));
        }
        match &slice.qa_accuracy {
            Some(Ok(acc)) => {
                let _ = writeln!(out, "{label:<24} {:<13} {:>6} acc {acc:.4}", "qa", slice.qa_n);
            }
            Some(Err(e)) => {
                let _ = writeln!(out, "{label:<24} {:<13} {e}", "qa");
            }
            None => {}
        }
    }
    if let Some(agreement) = &report.models {
        let _ = writeln!(out, "\nper-model agreement over {} models", agreement.n_models);
        for dimension in Dimension::ALL {
            if let Some(result) = agreement.dimensions.get(&dimension) {
                out.push_str(&correlation_row("models", dimension.as_str(), result));
            }
        }
        out.push_str(&correlation_row("models", "accuracy", &agreement.accuracy));
        out.push_str(&correlation_row("models", "overall-rank", &agreement.overall_rank));
        out.push_str(&correlation_row("models", "acc-rank", &agreement.acc_rank));
    }
    out
}

pub fn leaderboard_table(board: &Leaderboard) -> String {
    let mut out = String::new();
    let w = &board.weights;
    let _ = writeln!(
        out,
        "weights: quality {} / alignment {} / preservation {}",
        w.quality, w.alignment, w.preservation
    );
    let _ = writeln!(
        out,
        "{:>4} {:<24} {:>8} {:>9} {:>12} {:>8} {:>8} {:>8} {:>6}",
        "rank", "model", "quality", "alignment", "preservation", "overall", "acc", "acc rank", "items"
    );
    for m in &board.models {
        let _ = writeln!(
            out,
            "{:>4} {:<24} {:>8.2} {:>9.2} {:>12.2} {:>8.2} {:>8.2} {:>8} {:>6}",
            m.rank_overall,
            m.editing_model,
            m.quality,
            m.alignment,
            m.preservation,
            m.overall,
            100.0 * m.qa_accuracy,
            m.rank_acc,
            m.n_items
        );
    }
    if board.floored > 0 {
        let _ = writeln!(out, "note: {} non-positive mean(s) lifted to the floor", board.floored);
    }
    out
}

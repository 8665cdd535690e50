//! Plain-text rendering of a metrics report.

use std::fmt::Write;

use serde_json::Value;

use sopwatch_core::sim::{CategoryMetrics, MetricsReport};

/// Accepts either a bare metrics report or a full run report that embeds
/// one under `metrics`.
pub fn parse_metrics(bytes: &[u8]) -> Result<MetricsReport, serde_json::Error> {
    let v: Value = serde_json::from_slice(bytes)?;
    match v.get("metrics") {
        Some(m) => serde_json::from_value(m.clone()),
        None => serde_json::from_value(v),
    }
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn render(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>6} {:>6} {:>6} {:>12} {:>12}",
        "category", "TP", "FN", "TN", "FP", "sensitivity", "specificity"
    );
    let rows: [(&str, &CategoryMetrics); 3] =
        [("hygiene", &report.hygiene), ("tracing", &report.tracing), ("tracing-spaces", &report.tracing_spaces)];
    for (name, m) in rows {
        let c = &m.counts;
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>6} {:>6} {:>6} {:>12} {:>12}",
            name,
            c.tp,
            c.fn_,
            c.tn,
            c.fp,
            fmt_rate(m.sensitivity),
            fmt_rate(m.specificity)
        );
    }
    let _ = writeln!(
        out,
        "\n{} opportunities, {} violating, {} records scored (match tolerance ±{} s)",
        report.opportunities, report.positives, report.records_scored, report.matching.time_tolerance
    );
    out
}

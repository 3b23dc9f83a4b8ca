//! Output rendering shared by the subcommands: CSV escaping, key/value
//! summaries in the three stdout formats, the per-segment training trace,
//! and the analysis tables.

use std::fmt::Write as _;

use clap::ValueEnum;
use pathfid::metrics::EvalReport;
use pathfid::minifid::TrainOutcome;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Ordered key/value pairs renderable in any stdout format.
#[derive(Default)]
pub struct Summary(Vec<(String, serde_json::Value)>);

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("summary value serializes");
        self.0.push((key.to_string(), value));
    }

    fn plain(v: &serde_json::Value) -> String {
        match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => {
                let mut out = String::new();
                for (k, v) in &self.0 {
                    let _ = writeln!(out, "{k}: {}", Self::plain(v));
                }
                out.trim_end().to_string()
            }
            Format::Json => {
                let mut out = String::from("{\n");
                for (i, (k, v)) in self.0.iter().enumerate() {
                    let comma = if i + 1 < self.0.len() { "," } else { "" };
                    let _ = writeln!(out, "  {}: {v}{comma}", serde_json::json!(k));
                }
                out.push('}');
                out
            }
            Format::Csv => {
                let mut out = String::from("key,value\n");
                for (k, v) in &self.0 {
                    let _ = writeln!(out, "{},{}", csv_field(k), csv_field(&Self::plain(v)));
                }
                out.trim_end().to_string()
            }
        }
    }
}

/// Per-segment training trace: one row per evaluation point, one column per
/// path segment, one stage per training stage.
pub fn trace_csv(stages: &[TrainOutcome]) -> String {
    let hops = stages
        .iter()
        .flat_map(|s| &s.trace)
        .map(|p| p.title_em.len().max(p.facts_em.len()))
        .max()
        .unwrap_or(0);
    let mut header = vec![
        "stage".to_string(),
        "step".to_string(),
        "mean_loss".to_string(),
    ];
    for k in 1..=hops {
        header.push(format!("title_{k}_em"));
        header.push(format!("facts_{k}_em"));
    }
    header.push("answer_em".to_string());
    header.push("all_exact".to_string());

    let mut out = header.join(",");
    out.push('\n');
    for (si, stage) in stages.iter().enumerate() {
        for p in &stage.trace {
            let mut row = vec![
                (si + 1).to_string(),
                p.step.to_string(),
                format!("{:.6}", p.mean_loss),
            ];
            for k in 0..hops {
                row.push(p.title_em.get(k).map(|v| format!("{v:.4}")).unwrap_or_default());
                row.push(p.facts_em.get(k).map(|v| format!("{v:.4}")).unwrap_or_default());
            }
            row.push(format!("{:.4}", p.answer_em));
            row.push(format!("{:.4}", p.all_exact));
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

/// Renders only the analysis sections of a report: the type/support-count
/// breakdown, answer groundedness, and support-quality buckets.
pub fn render_analyses(report: &EvalReport, format: Format) -> String {
    match format {
        Format::Json => {
            let body = serde_json::json!({
                "breakdown": report.breakdown,
                "groundedness": report.groundedness,
                "buckets": report.buckets,
            });
            serde_json::to_string_pretty(&body).expect("analyses serialize")
        }
        Format::Text => {
            let mut out = String::from("breakdown\n");
            let _ = writeln!(
                out,
                "  {:<12} {:>8} {:>6} {:>10} {:>11}",
                "type", "supports", "count", "answer_em", "support_em"
            );
            for r in &report.breakdown {
                let _ = writeln!(
                    out,
                    "  {:<12} {:>8} {:>6} {:>10} {:>11}",
                    r.question_type,
                    r.supports_bin,
                    r.count,
                    opt(r.answer_em),
                    opt(r.support_em)
                );
            }
            out.push_str("groundedness\n");
            for r in &report.groundedness {
                let _ = writeln!(out, "  {:<42} {:>6}", r.label, opt_pct(r.percent));
            }
            out.push_str("buckets\n");
            let _ = writeln!(
                out,
                "  {:<12} {:>6} {:>15} {:>15}",
                "support_f1", "count", "mean_answer_em", "mean_answer_f1"
            );
            for r in &report.buckets {
                let _ = writeln!(
                    out,
                    "  {:<12} {:>6} {:>15} {:>15}",
                    r.bucket,
                    r.count,
                    opt(r.mean_answer_em),
                    opt(r.mean_answer_f1)
                );
            }
            out.trim_end().to_string()
        }
        Format::Csv => {
            let mut out = String::from("section,a,b,count,x,y\n");
            for r in &report.breakdown {
                let _ = writeln!(
                    out,
                    "breakdown,{},{},{},{},{}",
                    csv_field(&r.question_type),
                    csv_field(&r.supports_bin),
                    r.count,
                    opt(r.answer_em),
                    opt(r.support_em)
                );
            }
            for r in &report.groundedness {
                let _ = writeln!(
                    out,
                    "groundedness,{},,,{},",
                    csv_field(&r.label),
                    opt_pct(r.percent)
                );
            }
            for r in &report.buckets {
                let _ = writeln!(
                    out,
                    "buckets,{},,{},{},{}",
                    csv_field(&r.bucket),
                    r.count,
                    opt(r.mean_answer_em),
                    opt(r.mean_answer_f1)
                );
            }
            out.trim_end().to_string()
        }
    }
}

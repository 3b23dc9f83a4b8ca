//! Evaluation and analysis: answer and support EM/F1, per-type breakdowns,
//! answer-groundedness rates, support-F1 bucket correlations, joint metrics,
//! and report rendering as JSON, plain text, or CSV.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QuestionInstance;
use crate::pathcodec::ReasoningPath;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("duplicate prediction for instance {0:?}")]
    DuplicatePrediction(String),
    #[error("prediction {0:?} does not match any gold instance")]
    UnknownPrediction(String),
    #[error("malformed prediction file: {0}")]
    Json(#[from] serde_json::Error),
}

/// SQuAD-style answer normalization: lowercase, remove ASCII punctuation
/// characters, drop the articles a/an/the as whole tokens, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered: String = s
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Exact match plus token/element overlap scores. `em` is 0 or 1; the rest
/// are fractions in [0, 1]. Precision and recall are carried so joint
/// metrics can be derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrF1 {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrF1 {
    const ZERO: PrF1 = PrF1 {
        em: 0.0,
        f1: 0.0,
        precision: 0.0,
        recall: 0.0,
    };
    const ONE: PrF1 = PrF1 {
        em: 1.0,
        f1: 1.0,
        precision: 1.0,
        recall: 1.0,
    };
}

/// Scores a predicted answer against gold: EM is equality of normalized
/// strings, F1 is the harmonic mean of precision and recall over
/// normalized-token multisets. Two answers that both normalize to the
/// empty string score (1, 1).
pub fn answer_scores(pred: &str, gold: &str) -> PrF1 {
    let p = normalized_tokens(pred);
    let g = normalized_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return PrF1::ONE;
    }
    let em = if normalize_answer(pred) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    };
    if p.is_empty() || g.is_empty() {
        return PrF1 { em, ..PrF1::ZERO };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return PrF1 { em, ..PrF1::ZERO };
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    PrF1 {
        em,
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

/// Scores predicted supporting facts against gold as sets of
/// `(title, 0-based sentence index)` pairs. Two empty sets score (1, 1).
pub fn support_scores(
    pred: &BTreeSet<(String, usize)>,
    gold: &BTreeSet<(String, usize)>,
) -> PrF1 {
    if pred.is_empty() && gold.is_empty() {
        return PrF1::ONE;
    }
    let em = if pred == gold { 1.0 } else { 0.0 };
    if pred.is_empty() || gold.is_empty() {
        return PrF1 { em, ..PrF1::ZERO };
    }
    let overlap = pred.intersection(gold).count();
    if overlap == 0 {
        return PrF1 { em, ..PrF1::ZERO };
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    PrF1 {
        em,
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

/// One system output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub instance_id: String,
    pub answer: String,
    pub supports: BTreeSet<(String, usize)>,
    /// The parsed reasoning path when the system produces one; drives the
    /// predicted-passage groundedness rows.
    pub raw_path: Option<ReasoningPath>,
}

impl Prediction {
    pub fn new(instance_id: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            instance_id: instance_id.into(),
            answer: answer.into(),
            supports: BTreeSet::new(),
            raw_path: None,
        }
    }
}

/// Which metric families a run produces. An answer-only baseline scores no
/// supports; a titles-only schema scores no answers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalOptions {
    pub score_answers: bool,
    pub score_supports: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            score_answers: true,
            score_supports: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BreakdownRow {
    pub question_type: String,
    /// Gold support count binned as "2", "3", "4", "5+"; counts below 2
    /// fold into the lowest bin.
    pub supports_bin: String,
    pub count: usize,
    pub answer_em: Option<f64>,
    pub support_em: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundednessKind {
    PredAnswerInGoldPassages,
    PredAnswerInGoldSupports,
    GoldAnswerInPredPassages,
    GoldAnswerInPredSupports,
    PredAnswerInPredPassages,
    PredAnswerInPredSupports,
}

impl GroundednessKind {
    pub const ALL: [GroundednessKind; 6] = [
        Self::PredAnswerInGoldPassages,
        Self::PredAnswerInGoldSupports,
        Self::GoldAnswerInPredPassages,
        Self::GoldAnswerInPredSupports,
        Self::PredAnswerInPredPassages,
        Self::PredAnswerInPredSupports,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Self::PredAnswerInGoldPassages => "pred answer grounded in gold passages",
            Self::PredAnswerInGoldSupports => "pred answer grounded in gold supports",
            Self::GoldAnswerInPredPassages => "gold answer grounded in pred passages",
            Self::GoldAnswerInPredSupports => "gold answer grounded in pred supports",
            Self::PredAnswerInPredPassages => "pred answer grounded in pred passages",
            Self::PredAnswerInPredSupports => "pred answer grounded in pred supports",
        }
    }

    fn needs_pred_answer(&self) -> bool {
        !matches!(
            self,
            Self::GoldAnswerInPredPassages | Self::GoldAnswerInPredSupports
        )
    }

    fn needs_pred_path(&self) -> bool {
        !matches!(
            self,
            Self::PredAnswerInGoldPassages | Self::PredAnswerInGoldSupports
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundednessRow {
    pub kind: GroundednessKind,
    pub label: String,
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BucketRow {
    /// "0.0" for the zero bucket, then "(0.1*(n-1), 0.1*n]" deciles.
    pub bucket: String,
    pub count: usize,
    pub mean_answer_em: Option<f64>,
    pub mean_answer_f1: Option<f64>,
}

/// Final path segment accuracy, reported by training pipelines.
#[derive(Debug, Clone, Serialize)]
pub struct PathSegmentReport {
    /// Per-segment exact-match rates in path order, e.g. T1, F1, T2, F2,
    /// Answer.
    pub segments: Vec<(String, f64)>,
    /// Fraction of instances with every reported segment exact.
    pub all_exact: f64,
    /// For comparison questions only: segment accuracy when the better of
    /// the two hop orders is credited.
    pub comparison_best_of_both_orders: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub num_instances: usize,
    pub answer_em: Option<f64>,
    pub answer_f1: Option<f64>,
    pub support_em: Option<f64>,
    pub support_f1: Option<f64>,
    pub joint_em: Option<f64>,
    pub joint_f1: Option<f64>,
    pub breakdown: Vec<BreakdownRow>,
    pub groundedness: Vec<GroundednessRow>,
    pub buckets: Vec<BucketRow>,
    pub path_segments: Option<PathSegmentReport>,
    pub diagnostics: Vec<String>,
}

fn supports_bin(count: usize) -> &'static str {
    match count {
        0..=2 => "2",
        3 => "3",
        4 => "4",
        _ => "5+",
    }
}

/// Decile index 0 for exactly zero, else n in 1..=10 for (0.1(n-1), 0.1n].
fn bucket_index(f1: f64) -> usize {
    if f1 <= 0.0 {
        return 0;
    }
    let scaled = f1 * 10.0;
    let nearest = scaled.round();
    let n = if (scaled - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        scaled.ceil() as usize
    };
    n.clamp(1, 10)
}

fn bucket_label(n: usize) -> String {
    if n == 0 {
        "0.0".to_string()
    } else {
        format!("({:.1},{:.1}]", 0.1 * (n - 1) as f64, 0.1 * n as f64)
    }
}

/// True when `needle` occurs as a contiguous token run inside `haystack`.
/// Empty needles never match.
fn contains_token_run(haystack: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > haystack.len() {
        return false;
    }
    haystack.windows(needle.len()).any(|w| w == needle)
}

fn grounded_in_texts(answer: &str, texts: impl Iterator<Item = String>) -> bool {
    let needle = normalized_tokens(answer);
    if needle.is_empty() {
        return false;
    }
    for text in texts {
        if contains_token_run(&normalized_tokens(&text), &needle) {
            return true;
        }
    }
    false
}

fn gold_passage_texts(q: &QuestionInstance) -> Vec<String> {
    q.gold_passages().iter().map(|p| p.full_text()).collect()
}

/// Per passage, the selected sentences joined in ascending index order.
fn support_texts(q: &QuestionInstance, supports: &BTreeSet<(String, usize)>) -> Vec<String> {
    let mut grouped: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (title, idx) in supports {
        if let Some(p) = q.passage_by_title(title) {
            if let Some(s) = p.sentences.get(*idx) {
                grouped.entry(title.as_str()).or_default().push(s.as_str());
            }
        }
    }
    grouped
        .values()
        .map(|sentences| sentences.join(" "))
        .collect()
}

/// Texts of the passages a prediction names: the decoded path's hop titles
/// when present, otherwise the titles of its predicted supports (all the
/// official format preserves).
fn pred_passage_texts(q: &QuestionInstance, p: &Prediction) -> Vec<String> {
    let titles: Vec<&str> = match &p.raw_path {
        Some(path) => path.hops.iter().map(|h| h.title.as_str()).collect(),
        None => {
            let set: BTreeSet<&str> = p.supports.iter().map(|(t, _)| t.as_str()).collect();
            set.into_iter().collect()
        }
    };
    titles
        .iter()
        .filter_map(|t| q.passage_by_title(t))
        .map(|p| p.full_text())
        .collect()
}

fn instance_grounded(
    kind: GroundednessKind,
    pred: Option<&Prediction>,
    q: &QuestionInstance,
) -> bool {
    let answer: &str = if kind.needs_pred_answer() {
        match pred {
            Some(p) => &p.answer,
            None => return false,
        }
    } else {
        &q.answer
    };
    let texts: Vec<String> = match kind {
        GroundednessKind::PredAnswerInGoldPassages => gold_passage_texts(q),
        GroundednessKind::PredAnswerInGoldSupports => support_texts(q, &q.gold_supports),
        GroundednessKind::GoldAnswerInPredPassages
        | GroundednessKind::PredAnswerInPredPassages => match pred {
            Some(p) => pred_passage_texts(q, p),
            None => return false,
        },
        GroundednessKind::GoldAnswerInPredSupports
        | GroundednessKind::PredAnswerInPredSupports => match pred {
            Some(p) => support_texts(q, &p.supports),
            None => return false,
        },
    };
    grounded_in_texts(answer, texts.into_iter())
}

/// Percentage of instances whose probe answer occurs as a contiguous
/// normalized-token run inside the probe text named by `kind`.
pub fn groundedness_row(
    kind: GroundednessKind,
    preds: &[Prediction],
    gold: &[QuestionInstance],
) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let by_id: HashMap<&str, &Prediction> =
        preds.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let hits = gold
        .iter()
        .filter(|q| instance_grounded(kind, by_id.get(q.id.as_str()).copied(), q))
        .count();
    100.0 * hits as f64 / gold.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Scores predictions against gold instances. Every prediction must match
/// a gold id and ids must be unique; gold instances without a prediction
/// score zero and are listed in the diagnostics. Aggregates are
/// macro-averages over gold instances.
pub fn evaluate(
    preds: &[Prediction],
    gold: &[QuestionInstance],
    options: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    let gold_ids: BTreeSet<&str> = gold.iter().map(|q| q.id.as_str()).collect();
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        if !gold_ids.contains(p.instance_id.as_str()) {
            return Err(MetricsError::UnknownPrediction(p.instance_id.clone()));
        }
        if by_id.insert(p.instance_id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicatePrediction(p.instance_id.clone()));
        }
    }

    let mut diagnostics = Vec::new();
    let mut answer: Vec<PrF1> = Vec::with_capacity(gold.len());
    let mut support: Vec<PrF1> = Vec::with_capacity(gold.len());
    for q in gold {
        match by_id.get(q.id.as_str()) {
            Some(p) => {
                answer.push(answer_scores(&p.answer, &q.answer));
                support.push(support_scores(&p.supports, &q.gold_supports));
            }
            None => {
                diagnostics.push(format!("missing prediction for instance {:?}; scored 0", q.id));
                answer.push(PrF1::ZERO);
                support.push(PrF1::ZERO);
            }
        }
    }

    let avg = |xs: &[PrF1], f: fn(&PrF1) -> f64| mean(&xs.iter().map(f).collect::<Vec<_>>());
    let answer_em = options.score_answers.then(|| avg(&answer, |s| s.em));
    let answer_f1 = options.score_answers.then(|| avg(&answer, |s| s.f1));
    let support_em = options.score_supports.then(|| avg(&support, |s| s.em));
    let support_f1 = options.score_supports.then(|| avg(&support, |s| s.f1));

    let joint = options.score_answers && options.score_supports;
    let (joint_em, joint_f1) = if joint {
        let mut ems = Vec::with_capacity(gold.len());
        let mut f1s = Vec::with_capacity(gold.len());
        for (a, s) in answer.iter().zip(&support) {
            ems.push(a.em * s.em);
            let jp = a.precision * s.precision;
            let jr = a.recall * s.recall;
            f1s.push(if jp + jr > 0.0 { 2.0 * jp * jr / (jp + jr) } else { 0.0 });
        }
        (Some(mean(&ems)), Some(mean(&f1s)))
    } else {
        (None, None)
    };

    // Breakdown by (question type, gold support count bin).
    let mut cells: BTreeMap<(String, &'static str), (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, q) in gold.iter().enumerate() {
        let key = (
            q.question_type.label().to_string(),
            supports_bin(q.gold_supports.len()),
        );
        let cell = cells.entry(key).or_default();
        cell.0 += 1;
        cell.1.push(answer[i].em);
        cell.2.push(support[i].em);
    }
    let breakdown = cells
        .into_iter()
        .map(|((question_type, bin), (count, aems, sems))| BreakdownRow {
            question_type,
            supports_bin: bin.to_string(),
            count,
            answer_em: options.score_answers.then(|| mean(&aems)),
            support_em: options.score_supports.then(|| mean(&sems)),
        })
        .collect();

    let groundedness = GroundednessKind::ALL
        .iter()
        .map(|&kind| {
            let defined = (!kind.needs_pred_answer() || options.score_answers)
                && (!kind.needs_pred_path() || options.score_supports);
            GroundednessRow {
                kind,
                label: kind.label().to_string(),
                percent: defined.then(|| groundedness_row(kind, preds, gold)),
            }
        })
        .collect();

    // Buckets of instances by support F1, with mean answer scores inside
    // each bucket: the zero bucket plus ten deciles.
    let buckets = if options.score_supports {
        let mut rows = Vec::with_capacity(11);
        for n in 0..=10 {
            let members: Vec<usize> = (0..gold.len())
                .filter(|&i| bucket_index(support[i].f1) == n)
                .collect();
            let count = members.len();
            let (aem, af1) = if count > 0 && options.score_answers {
                (
                    Some(mean(&members.iter().map(|&i| answer[i].em).collect::<Vec<_>>())),
                    Some(mean(&members.iter().map(|&i| answer[i].f1).collect::<Vec<_>>())),
                )
            } else {
                (None, None)
            };
            rows.push(BucketRow {
                bucket: bucket_label(n),
                count,
                mean_answer_em: aem,
                mean_answer_f1: af1,
            });
        }
        rows
    } else {
        Vec::new()
    };

    Ok(EvalReport {
        num_instances: gold.len(),
        answer_em,
        answer_f1,
        support_em,
        support_f1,
        joint_em,
        joint_f1,
        breakdown,
        groundedness,
        buckets,
        path_segments: None,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// Official prediction format
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct OfficialPredictions {
    #[serde(default)]
    answer: BTreeMap<String, String>,
    #[serde(default)]
    sp: BTreeMap<String, Vec<(String, usize)>>,
}

/// Reads the official leaderboard prediction format:
/// `{"answer": {id: string}, "sp": {id: [[title, sent_id], ...]}}`.
pub fn load_official_predictions(json: &str) -> Result<Vec<Prediction>, MetricsError> {
    let parsed: OfficialPredictions = serde_json::from_str(json)?;
    let mut ids: BTreeSet<String> = parsed.answer.keys().cloned().collect();
    ids.extend(parsed.sp.keys().cloned());
    Ok(ids
        .into_iter()
        .map(|id| {
            let answer = parsed.answer.get(&id).cloned().unwrap_or_default();
            let supports = parsed
                .sp
                .get(&id)
                .map(|pairs| pairs.iter().cloned().collect())
                .unwrap_or_default();
            Prediction {
                instance_id: id,
                answer,
                supports,
                raw_path: None,
            }
        })
        .collect())
}

/// Writes predictions in the official leaderboard format.
pub fn to_official_json(preds: &[Prediction]) -> String {
    let answer: BTreeMap<&str, &str> = preds
        .iter()
        .map(|p| (p.instance_id.as_str(), p.answer.as_str()))
        .collect();
    let sp: BTreeMap<&str, Vec<(&str, usize)>> = preds
        .iter()
        .map(|p| {
            (
                p.instance_id.as_str(),
                p.supports.iter().map(|(t, i)| (t.as_str(), *i)).collect(),
            )
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "answer": answer, "sp": sp }))
        .expect("official format serializes")
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt_frac(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))
}

pub fn render_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("instances: {}", report.num_instances));
    line(format!(
        "answer_em: {}  answer_f1: {}",
        fmt_frac(report.answer_em),
        fmt_frac(report.answer_f1)
    ));
    line(format!(
        "support_em: {}  support_f1: {}",
        fmt_frac(report.support_em),
        fmt_frac(report.support_f1)
    ));
    line(format!(
        "joint_em: {}  joint_f1: {}",
        fmt_frac(report.joint_em),
        fmt_frac(report.joint_f1)
    ));
    line(String::new());
    line("breakdown (type x gold supports)".to_string());
    line(format!(
        "{:<12} {:<8} {:>6} {:>10} {:>11}",
        "type", "supports", "count", "answer_em", "support_em"
    ));
    for row in &report.breakdown {
        line(format!(
            "{:<12} {:<8} {:>6} {:>10} {:>11}",
            row.question_type,
            row.supports_bin,
            row.count,
            fmt_frac(row.answer_em),
            fmt_frac(row.support_em)
        ));
    }
    line(String::new());
    line("answer groundedness (%)".to_string());
    for row in &report.groundedness {
        line(format!("{:<45} {}", row.label, fmt_pct(row.percent)));
    }
    if !report.buckets.is_empty() {
        line(String::new());
        line("support-f1 buckets (mean answer scores)".to_string());
        line(format!(
            "{:<10} {:>6} {:>10} {:>10}",
            "bucket", "count", "answer_em", "answer_f1"
        ));
        for row in &report.buckets {
            line(format!(
                "{:<10} {:>6} {:>10} {:>10}",
                row.bucket,
                row.count,
                fmt_frac(row.mean_answer_em),
                fmt_frac(row.mean_answer_f1)
            ));
        }
    }
    if let Some(seg) = &report.path_segments {
        line(String::new());
        line("path segment exact match".to_string());
        for (label, v) in &seg.segments {
            line(format!("{:<8} {:.4}", label, v));
        }
        line(format!("{:<8} {:.4}", "all", seg.all_exact));
        if let Some(v) = seg.comparison_best_of_both_orders {
            line(format!("comparison best-of-both-orders: {v:.4}"));
        }
    }
    for d in &report.diagnostics {
        line(format!("note: {d}"));
    }
    out
}

/// CSV rendering of the breakdown and bucket tables: two headed tables
/// separated by a blank line, ready for plotting tools.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("question_type,supports,count,answer_em,support_em\n");
    for row in &report.breakdown {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.question_type,
            row.supports_bin,
            row.count,
            fmt_frac(row.answer_em),
            fmt_frac(row.support_em)
        ));
    }
    out.push('\n');
    out.push_str("bucket,count,answer_em,answer_f1\n");
    for row in &report.buckets {
        out.push_str(&format!(
            "\"{}\",{},{},{}\n",
            row.bucket,
            row.count,
            fmt_frac(row.mean_answer_em),
            fmt_frac(row.mean_answer_f1)
        ));
    }
    out
}

//! Codec between structured reasoning paths and linearized token sequences.
//!
//! A reasoning path is an ordered list of hops, each a passage title plus
//! the 1-based indices of its evidence sentences, optionally followed by an
//! answer. `linearize` renders a path under one of three target schemas and
//! `parse` inverts it. Parsing is a total function: arbitrary decoder output
//! yields a partial path plus a list of diagnostics, never an error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markers::{
    self, ANSWER_MARKER, MAX_FACT_MARKERS, MAX_HOPS,
};
use crate::{render_tokens, split_tokens};

/// One step of a reasoning path: a passage title and the 1-based indices of
/// its evidence sentences, kept strictly ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub title: String,
    pub facts: BTreeSet<usize>,
}

impl Hop {
    pub fn new(title: impl Into<String>, facts: impl IntoIterator<Item = usize>) -> Self {
        Self {
            title: title.into(),
            facts: facts.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub hops: Vec<Hop>,
    pub answer: Option<String>,
}

impl ReasoningPath {
    pub fn new(hops: Vec<Hop>, answer: Option<String>) -> Self {
        Self { hops, answer }
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty() && self.answer.is_none()
    }

    /// Drops the fields a schema does not carry, leaving what a round trip
    /// through that schema can preserve.
    pub fn restricted_to(&self, schema: PathSchema) -> ReasoningPath {
        let hops = self
            .hops
            .iter()
            .map(|h| Hop {
                title: h.title.clone(),
                facts: if schema == PathSchema::Full {
                    h.facts.clone()
                } else {
                    BTreeSet::new()
                },
            })
            .collect();
        let answer = if schema == PathSchema::TitlesOnly {
            None
        } else {
            self.answer.clone()
        };
        ReasoningPath { hops, answer }
    }

    /// Converts the path's hops into `(title, 0-based sentence index)`
    /// support pairs, the shape the evaluator scores.
    pub fn to_supports(&self) -> BTreeSet<(String, usize)> {
        self.hops
            .iter()
            .flat_map(|h| {
                h.facts
                    .iter()
                    .map(|j| (h.title.clone(), j - 1))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Builds a gold path from per-hop `(title, 0-based sentence indices)`
/// pairs, translating to the codec's 1-based fact indices.
pub fn gold_path(hops: &[(String, Vec<usize>)], answer: Option<String>) -> ReasoningPath {
    ReasoningPath {
        hops: hops
            .iter()
            .map(|(title, idxs)| Hop::new(title.clone(), idxs.iter().map(|i| i + 1)))
            .collect(),
        answer,
    }
}

/// Which segments the training target carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSchema {
    /// `[t1 - t2]`
    TitlesOnly,
    /// `[t1 - t2 - answer]`
    TitlesAnswer,
    /// `[t1 - f1 - t2 - f2 - answer]`
    Full,
}

impl PathSchema {
    pub fn label(&self) -> &'static str {
        match self {
            Self::TitlesOnly => "titles_only",
            Self::TitlesAnswer => "titles_answer",
            Self::Full => "full",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "titles_only" => Some(Self::TitlesOnly),
            "titles_answer" => Some(Self::TitlesAnswer),
            "full" => Some(Self::Full),
            _ => None,
        }
    }

    pub fn has_facts(&self) -> bool {
        *self == Self::Full
    }

    pub fn has_answer(&self) -> bool {
        *self != Self::TitlesOnly
    }
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("schema {schema} requires an answer but the path has none")]
    MissingAnswer { schema: &'static str },
    #[error("fact index {index} in hop {hop} exceeds the marker limit {max}")]
    FactIndexTooLarge { hop: usize, index: usize, max: usize },
    #[error("fact index 0 in hop {hop}; fact indices are 1-based")]
    ZeroFactIndex { hop: usize },
    #[error("path has {hops} hops but only {max} hop markers exist")]
    TooManyHops { hops: usize, max: usize },
    #[error("content token {token:?} collides with a reserved marker")]
    ReservedTokenInContent { token: String },
    #[error("answer suffix is {suffix} tokens, longer than the limit {max}")]
    AnswerSuffixTooLong { suffix: usize, max: usize },
}

/// Renders a path as its target token sequence: per hop `<title-i>` and the
/// title tokens, then under the full schema `<facts-i>` and one fact marker
/// per evidence index, then `<answer>` and the answer tokens unless the
/// schema is titles-only.
pub fn linearize(path: &ReasoningPath, schema: PathSchema) -> Result<Vec<String>, CodecError> {
    if path.hops.len() > MAX_HOPS {
        return Err(CodecError::TooManyHops {
            hops: path.hops.len(),
            max: MAX_HOPS,
        });
    }
    if schema.has_answer() && path.answer.is_none() {
        return Err(CodecError::MissingAnswer {
            schema: schema.label(),
        });
    }
    let push_content = |out: &mut Vec<String>, text: &str| -> Result<(), CodecError> {
        for tok in split_tokens(text) {
            if markers::is_structural(&tok) {
                return Err(CodecError::ReservedTokenInContent { token: tok });
            }
            out.push(tok);
        }
        Ok(())
    };

    let mut out = Vec::new();
    for (i, hop) in path.hops.iter().enumerate() {
        let k = i + 1;
        out.push(markers::title_marker(k));
        push_content(&mut out, &hop.title)?;
        if schema.has_facts() {
            out.push(markers::facts_marker(k));
            for &j in &hop.facts {
                if j == 0 {
                    return Err(CodecError::ZeroFactIndex { hop: k });
                }
                if j > MAX_FACT_MARKERS {
                    return Err(CodecError::FactIndexTooLarge {
                        hop: k,
                        index: j,
                        max: MAX_FACT_MARKERS,
                    });
                }
                out.push(markers::fact_marker(j));
            }
        }
    }
    if schema.has_answer() {
        out.push(ANSWER_MARKER.to_string());
        push_content(&mut out, path.answer.as_deref().unwrap_or(""))?;
    }
    Ok(out)
}

/// What the parser had to tolerate while recovering a path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Diagnostic {
    EmptySequence,
    NoTitleSegments,
    /// A `<title-k>` whose k does not match its encounter order; the hop is
    /// still opened at the encounter position.
    OutOfOrderTitle { found: usize, expected: usize },
    /// A `<facts-k>` whose k does not match the current hop.
    OutOfOrderFacts { found: usize, expected: usize },
    /// A `<facts-k>` with no hop open yet; ignored.
    FactsWithoutTitle { found: usize },
    /// A second `<facts-k>` inside one hop's facts segment.
    DuplicateFactsMarker { hop: usize },
    /// A fact marker outside any facts segment; ignored.
    FactOutsideFacts { index: usize },
    /// The same fact marker repeated within a hop; deduplicated.
    DuplicateFact { hop: usize, index: usize },
    /// A content token before the first title marker; ignored.
    TokenBeforeFirstTitle { token: String },
    /// A content token inside a facts segment; joined to the hop title.
    StrayTokenInFacts { token: String },
    /// The schema expects an answer segment but none was emitted.
    MissingAnswerSegment,
    /// The schema has no answer segment but one was emitted.
    UnexpectedAnswerSegment,
    /// No candidate title shared any token with the generated title.
    NoTitleOverlap { hop: usize, generated: String },
    /// Title reconstruction was asked for but no candidates were given.
    NoCandidates,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::EmptySequence => write!(f, "empty sequence"),
            Self::NoTitleSegments => write!(f, "no title segments"),
            Self::OutOfOrderTitle { found, expected } => {
                write!(f, "title marker <title-{found}> opened hop {expected}")
            }
            Self::OutOfOrderFacts { found, expected } => {
                write!(f, "facts marker <facts-{found}> attached to hop {expected}")
            }
            Self::FactsWithoutTitle { found } => {
                write!(f, "facts marker <facts-{found}> before any title; ignored")
            }
            Self::DuplicateFactsMarker { hop } => {
                write!(f, "repeated facts marker in hop {hop}")
            }
            Self::FactOutsideFacts { index } => {
                write!(f, "fact marker <f{index}> outside a facts segment; ignored")
            }
            Self::DuplicateFact { hop, index } => {
                write!(f, "duplicate fact marker <f{index}> in hop {hop}")
            }
            Self::TokenBeforeFirstTitle { token } => {
                write!(f, "content token {token:?} before the first title; ignored")
            }
            Self::StrayTokenInFacts { token } => {
                write!(f, "content token {token:?} inside a facts segment; joined to title")
            }
            Self::MissingAnswerSegment => write!(f, "no answer segment"),
            Self::UnexpectedAnswerSegment => {
                write!(f, "answer segment present under a titles-only schema")
            }
            Self::NoTitleOverlap { hop, generated } => {
                write!(f, "hop {hop} title {generated:?} shares no token with any candidate")
            }
            Self::NoCandidates => write!(f, "no candidate titles to reconstruct against"),
        }
    }
}

/// A parsed path together with everything the parser had to repair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub path: ReasoningPath,
    pub diagnostics: Vec<Diagnostic>,
}

/// Recovers a reasoning path from decoded tokens. Total over arbitrary
/// input: the sequence splits at the first `<answer>` (everything after it
/// is the answer string verbatim), then `<title-k>` markers open hops in
/// encounter order regardless of k, `<facts-k>` switches the open hop into
/// its facts segment, fact markers collect into the open segment with
/// duplicates removed, and plain tokens join the open hop's title. Anything
/// that cannot attach is dropped with a diagnostic.
pub fn parse(tokens: &[String], schema: PathSchema) -> ParseOutcome {
    let mut diagnostics = Vec::new();
    if tokens.is_empty() {
        diagnostics.push(Diagnostic::EmptySequence);
        return ParseOutcome {
            path: ReasoningPath::default(),
            diagnostics,
        };
    }

    let answer_at = tokens.iter().position(|t| t == ANSWER_MARKER);
    let (body, answer) = match answer_at {
        Some(i) => (&tokens[..i], Some(render_tokens(&tokens[i + 1..]))),
        None => (tokens, None),
    };

    #[derive(PartialEq)]
    enum Region {
        BeforeFirstHop,
        Title,
        Facts,
    }
    let mut region = Region::BeforeFirstHop;
    let mut hops: Vec<(Vec<String>, BTreeSet<usize>)> = Vec::new();

    for token in body {
        if let Some(k) = markers::parse_title_marker(token) {
            let expected = hops.len() + 1;
            if k != expected {
                diagnostics.push(Diagnostic::OutOfOrderTitle { found: k, expected });
            }
            hops.push((Vec::new(), BTreeSet::new()));
            region = Region::Title;
        } else if let Some(k) = markers::parse_facts_marker(token) {
            if hops.is_empty() {
                diagnostics.push(Diagnostic::FactsWithoutTitle { found: k });
                continue;
            }
            let expected = hops.len();
            if region == Region::Facts {
                diagnostics.push(Diagnostic::DuplicateFactsMarker { hop: expected });
            }
            if k != expected {
                diagnostics.push(Diagnostic::OutOfOrderFacts { found: k, expected });
            }
            region = Region::Facts;
        } else if let Some(j) = markers::parse_fact_marker(token) {
            if region == Region::Facts {
                let hop = hops.len();
                if !hops.last_mut().expect("facts region implies a hop").1.insert(j) {
                    diagnostics.push(Diagnostic::DuplicateFact { hop, index: j });
                }
            } else {
                diagnostics.push(Diagnostic::FactOutsideFacts { index: j });
            }
        } else {
            match region {
                Region::BeforeFirstHop => diagnostics.push(Diagnostic::TokenBeforeFirstTitle {
                    token: token.clone(),
                }),
                Region::Title => hops.last_mut().expect("title region implies a hop").0.push(token.clone()),
                Region::Facts => {
                    diagnostics.push(Diagnostic::StrayTokenInFacts {
                        token: token.clone(),
                    });
                    hops.last_mut().expect("facts region implies a hop").0.push(token.clone());
                }
            }
        }
    }

    if hops.is_empty() {
        diagnostics.push(Diagnostic::NoTitleSegments);
    }
    if schema.has_answer() && answer.is_none() {
        diagnostics.push(Diagnostic::MissingAnswerSegment);
    }
    if !schema.has_answer() && answer.is_some() {
        diagnostics.push(Diagnostic::UnexpectedAnswerSegment);
    }

    ParseOutcome {
        path: ReasoningPath {
            hops: hops
                .into_iter()
                .map(|(title_tokens, facts)| Hop {
                    title: render_tokens(&title_tokens),
                    facts,
                })
                .collect(),
            answer,
        },
        diagnostics,
    }
}

/// Cuts a target sequence to `max_len` tokens by dropping from the end of
/// the pre-answer region; the `<answer>` marker and everything after it
/// stay intact. A `<facts-k>` left dangling at the cut with no following
/// fact markers is dropped too.
pub fn truncate_target(tokens: &[String], max_len: usize) -> Result<Vec<String>, CodecError> {
    if tokens.len() <= max_len {
        return Ok(tokens.to_vec());
    }
    let answer_at = tokens.iter().position(|t| t == ANSWER_MARKER);
    let (prefix, suffix) = match answer_at {
        Some(i) => (&tokens[..i], &tokens[i..]),
        None => (tokens, &tokens[tokens.len()..]),
    };
    if suffix.len() > max_len {
        return Err(CodecError::AnswerSuffixTooLong {
            suffix: suffix.len(),
            max: max_len,
        });
    }
    let mut kept: Vec<String> = prefix[..max_len - suffix.len()].to_vec();
    while kept
        .last()
        .is_some_and(|t| markers::parse_facts_marker(t).is_some())
    {
        kept.pop();
    }
    kept.extend(suffix.iter().cloned());
    Ok(kept)
}

fn title_tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Multiset-overlap F1 between two token lists.
fn token_multiset_f1(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::HashMap::new();
    for t in b {
        *counts.entry(t.as_str()).or_insert(0usize) += 1;
    }
    let mut overlap = 0usize;
    for t in a {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / a.len() as f64;
    let r = overlap as f64 / b.len() as f64;
    2.0 * p * r / (p + r)
}

/// Replaces each hop title with the candidate maximizing token-level F1
/// (lowercased whitespace tokens, punctuation retained). Ties break toward
/// the earliest candidate; a title that is already a candidate is kept
/// verbatim. Zero overlap with every candidate falls back to the first
/// candidate and is flagged.
pub fn reconstruct_titles(
    path: &ReasoningPath,
    candidates: &[String],
) -> (ReasoningPath, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();
    if candidates.is_empty() {
        diagnostics.push(Diagnostic::NoCandidates);
        return (path.clone(), diagnostics);
    }
    let cand_tokens: Vec<Vec<String>> = candidates.iter().map(|c| title_tokens(c)).collect();
    let mut out = path.clone();
    for (i, hop) in out.hops.iter_mut().enumerate() {
        if candidates.iter().any(|c| *c == hop.title) {
            continue;
        }
        let gen = title_tokens(&hop.title);
        let mut best = 0usize;
        let mut best_f1 = -1.0f64;
        for (ci, ct) in cand_tokens.iter().enumerate() {
            let f1 = token_multiset_f1(&gen, ct);
            if f1 > best_f1 {
                best_f1 = f1;
                best = ci;
            }
        }
        if best_f1 <= 0.0 {
            diagnostics.push(Diagnostic::NoTitleOverlap {
                hop: i + 1,
                generated: hop.title.clone(),
            });
        }
        hop.title = candidates[best].clone();
    }
    (out, diagnostics)
}

/// Per-segment exact-match flags of a predicted path against gold, indexed
/// by the gold path's hops: `titles[k]` is hop-k title string equality,
/// `facts[k]` is fact-set equality, `answer` is normalized answer equality
/// (two absent answers match).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentFlags {
    pub titles: Vec<bool>,
    pub facts: Vec<bool>,
    pub answer: bool,
}

impl SegmentFlags {
    pub fn all(&self, schema: PathSchema) -> bool {
        self.titles.iter().all(|&t| t)
            && (!schema.has_facts() || self.facts.iter().all(|&f| f))
            && (!schema.has_answer() || self.answer)
    }
}

pub fn path_segment_em(pred: &ReasoningPath, gold: &ReasoningPath) -> SegmentFlags {
    let titles = gold
        .hops
        .iter()
        .enumerate()
        .map(|(i, g)| pred.hops.get(i).is_some_and(|p| p.title == g.title))
        .collect();
    let facts = gold
        .hops
        .iter()
        .enumerate()
        .map(|(i, g)| pred.hops.get(i).is_some_and(|p| p.facts == g.facts))
        .collect();
    let answer = match (&pred.answer, &gold.answer) {
        (Some(p), Some(g)) => {
            crate::metrics::normalize_answer(p) == crate::metrics::normalize_answer(g)
        }
        (None, None) => true,
        _ => false,
    };
    SegmentFlags {
        titles,
        facts,
        answer,
    }
}

/// One line of the prediction dump a decode run writes.
#[derive(Debug, Clone, Serialize)]
pub struct PredictionDump {
    pub instance_id: String,
    pub raw_sequence: String,
    pub parsed: ParsedDump,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParsedDump {
    pub hops: Vec<HopDump>,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HopDump {
    pub title: String,
    pub facts: Vec<usize>,
}

impl PredictionDump {
    pub fn new(instance_id: impl Into<String>, raw: &[String], outcome: &ParseOutcome) -> Self {
        Self {
            instance_id: instance_id.into(),
            raw_sequence: render_tokens(raw),
            parsed: ParsedDump {
                hops: outcome
                    .path
                    .hops
                    .iter()
                    .map(|h| HopDump {
                        title: h.title.clone(),
                        facts: h.facts.iter().copied().collect(),
                    })
                    .collect(),
                answer: outcome.path.answer.clone(),
            },
            diagnostics: outcome.diagnostics.iter().map(|d| d.to_string()).collect(),
        }
    }
}

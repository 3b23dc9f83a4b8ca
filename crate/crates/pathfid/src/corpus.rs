//! Data model for multi-hop QA instances plus ingestion and generation.
//!
//! Three sources produce the same [`QuestionInstance`] shape: the HotpotQA
//! distractor JSON, IIRC-style JSON, and a deterministic synthetic generator
//! used for desk-scale training runs. Synthetic corpora serialize back out
//! in the HotpotQA schema so every downstream tool is format-agnostic.
//!
//! Sentence indices are 0-based everywhere in this module, matching the
//! HotpotQA gold files; the path codec translates to 1-based fact markers
//! at its boundary.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed corpus file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// A titled document split into sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub title: String,
    pub sentences: Vec<String>,
    /// Outgoing hyperlink titles, when the source carries them. Distractor
    /// JSON does not, so this is usually empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<String>,
}

impl Passage {
    pub fn new(title: impl Into<String>, sentences: Vec<String>) -> Self {
        Self {
            title: title.into(),
            sentences,
            links: Vec::new(),
        }
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences.len()
    }

    /// All sentences joined with single spaces.
    pub fn full_text(&self) -> String {
        self.sentences.join(" ")
    }

    fn check(&self) -> Result<(), String> {
        if self.title.trim().is_empty() {
            return Err("passage title is empty".into());
        }
        if self.sentences.is_empty() {
            return Err(format!("passage {:?} has no sentences", self.title));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Bridge,
    Comparison,
    Other,
}

impl QuestionType {
    fn from_label(label: &str) -> Self {
        match label {
            "bridge" => Self::Bridge,
            "comparison" => Self::Comparison,
            _ => Self::Other,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Bridge => "bridge",
            Self::Comparison => "comparison",
            Self::Other => "other",
        }
    }
}

/// One multi-hop question with its candidate passage pool and gold
/// annotations. Supports are `(title, 0-based sentence index)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionInstance {
    pub id: String,
    pub question: String,
    pub passages: Vec<Passage>,
    pub answer: String,
    pub question_type: QuestionType,
    pub gold_supports: BTreeSet<(String, usize)>,
    pub gold_passage_titles: BTreeSet<String>,
}

impl QuestionInstance {
    /// Builds an instance, deriving `gold_passage_titles` from the supports.
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        passages: Vec<Passage>,
        answer: impl Into<String>,
        question_type: QuestionType,
        gold_supports: BTreeSet<(String, usize)>,
    ) -> Self {
        let gold_passage_titles = gold_supports.iter().map(|(t, _)| t.clone()).collect();
        Self {
            id: id.into(),
            question: question.into(),
            passages,
            answer: answer.into(),
            question_type,
            gold_supports,
            gold_passage_titles,
        }
    }

    pub fn passage_by_title(&self, title: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.title == title)
    }

    /// Gold passages in the order they appear in the candidate pool.
    pub fn gold_passages(&self) -> Vec<&Passage> {
        self.passages
            .iter()
            .filter(|p| self.gold_passage_titles.contains(&p.title))
            .collect()
    }

    pub fn candidate_titles(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.title.clone()).collect()
    }

    /// 0-based gold support indices for one passage, ascending.
    pub fn supports_for(&self, title: &str) -> Vec<usize> {
        self.gold_supports
            .iter()
            .filter(|(t, _)| t == title)
            .map(|(_, i)| *i)
            .collect()
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        for p in &self.passages {
            p.check()?;
        }
        for (title, idx) in &self.gold_supports {
            let Some(p) = self.passage_by_title(title) else {
                return Err(format!("supporting fact cites unknown passage {title:?}"));
            };
            if *idx >= p.sentence_count() {
                return Err(format!(
                    "supporting fact ({title:?}, {idx}) out of range for a {}-sentence passage",
                    p.sentence_count()
                ));
            }
        }
        let derived: BTreeSet<String> =
            self.gold_supports.iter().map(|(t, _)| t.clone()).collect();
        if derived != self.gold_passage_titles {
            return Err("gold_passage_titles does not match supports".into());
        }
        Ok(())
    }
}

/// Record that failed ingestion, with the offending field in the reason.
#[derive(Debug, Clone, Serialize)]
pub struct RejectedRecord {
    pub id: String,
    pub reason: String,
}

/// Result of ingesting a corpus file: valid instances plus rejects.
#[derive(Debug, Default)]
pub struct LoadOutcome {
    pub instances: Vec<QuestionInstance>,
    pub rejected: Vec<RejectedRecord>,
}

// ---------------------------------------------------------------------------
// HotpotQA distractor schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct HotpotRecord {
    #[serde(rename = "_id")]
    id: String,
    question: String,
    answer: String,
    #[serde(rename = "type")]
    question_type: String,
    supporting_facts: Vec<(String, usize)>,
    context: Vec<(String, Vec<String>)>,
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_hotpot(path: impl AsRef<Path>) -> Result<LoadOutcome, CorpusError> {
    load_hotpot_str(&read_file(path.as_ref())?)
}

/// Parses a HotpotQA distractor JSON array. Records that fail to parse or
/// violate an invariant are reported in the rejected list, not as errors;
/// only a malformed top-level document is an error.
pub fn load_hotpot_str(json: &str) -> Result<LoadOutcome, CorpusError> {
    let records: Vec<serde_json::Value> = serde_json::from_str(json)?;
    let mut out = LoadOutcome::default();
    for (i, value) in records.into_iter().enumerate() {
        let id = value
            .get("_id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("record-{i}"));
        match serde_json::from_value::<HotpotRecord>(value) {
            Ok(rec) => {
                let instance = QuestionInstance::new(
                    rec.id,
                    rec.question,
                    rec.context
                        .into_iter()
                        .map(|(title, sentences)| Passage::new(title, sentences))
                        .collect(),
                    rec.answer,
                    QuestionType::from_label(&rec.question_type),
                    rec.supporting_facts.into_iter().collect(),
                );
                match instance.validate() {
                    Ok(()) => out.instances.push(instance),
                    Err(reason) => out.rejected.push(RejectedRecord { id, reason }),
                }
            }
            Err(e) => out.rejected.push(RejectedRecord {
                id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Serializes instances back into the HotpotQA schema.
pub fn to_hotpot_json(instances: &[QuestionInstance]) -> String {
    let records: Vec<HotpotRecord> = instances
        .iter()
        .map(|q| HotpotRecord {
            id: q.id.clone(),
            question: q.question.clone(),
            answer: q.answer.clone(),
            question_type: q.question_type.label().to_string(),
            supporting_facts: q.gold_supports.iter().cloned().collect(),
            context: q
                .passages
                .iter()
                .map(|p| (p.title.clone(), p.sentences.clone()))
                .collect(),
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("hotpot schema serializes")
}

pub fn save_hotpot(instances: &[QuestionInstance], path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    fs::write(path, to_hotpot_json(instances)).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// IIRC-style schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct IircRecord {
    title: String,
    text: String,
    questions: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct IircQuestion {
    #[serde(default)]
    qid: Option<String>,
    question: String,
    answer: IircAnswer,
    #[serde(default)]
    context: Vec<IircSnippet>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum IircAnswer {
    #[serde(rename = "span")]
    Span { answer_spans: Vec<IircSpan> },
    #[serde(rename = "binary")]
    Binary { answer_value: serde_json::Value },
    #[serde(rename = "value")]
    Value { answer_value: serde_json::Value },
    #[serde(rename = "none")]
    Unanswerable,
}

#[derive(Deserialize)]
struct IircSpan {
    text: String,
}

#[derive(Deserialize)]
struct IircSnippet {
    passage: String,
    text: String,
}

fn json_scalar_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Bool(b) => b.to_string(),
        serde_json::Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}

impl IircAnswer {
    /// Flattens the four IIRC answer types to one canonical string.
    /// Multi-span answers join with a single space; binary answers
    /// verbalize as yes/no; unanswerable questions get the literal
    /// string "unanswerable".
    fn canonical(&self) -> String {
        match self {
            IircAnswer::Span { answer_spans } => answer_spans
                .iter()
                .map(|s| s.text.trim().to_string())
                .collect::<Vec<_>>()
                .join(" "),
            IircAnswer::Binary { answer_value } => {
                match json_scalar_to_string(answer_value).to_lowercase().as_str() {
                    "true" | "yes" => "yes".to_string(),
                    _ => "no".to_string(),
                }
            }
            IircAnswer::Value { answer_value } => json_scalar_to_string(answer_value),
            IircAnswer::Unanswerable => "unanswerable".to_string(),
        }
    }
}

pub fn load_iirc(path: impl AsRef<Path>) -> Result<LoadOutcome, CorpusError> {
    load_iirc_str(&read_file(path.as_ref())?)
}

/// Parses IIRC-style JSON: an array of articles, each with a main passage
/// and a list of questions whose `context` snippets carry the gold evidence
/// from the main and linked passages. Each evidence snippet becomes one
/// sentence of its source passage, so gold supports stay index-valid by
/// construction. The main passage always comes first in the pool.
pub fn load_iirc_str(json: &str) -> Result<LoadOutcome, CorpusError> {
    let records: Vec<serde_json::Value> = serde_json::from_str(json)?;
    let mut out = LoadOutcome::default();
    for (ri, value) in records.into_iter().enumerate() {
        let rec: IircRecord = match serde_json::from_value(value) {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(RejectedRecord {
                    id: format!("article-{ri}"),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        for (qi, qval) in rec.questions.into_iter().enumerate() {
            let fallback_id = format!("{}::{qi}", rec.title);
            let q: IircQuestion = match serde_json::from_value(qval) {
                Ok(q) => q,
                Err(e) => {
                    out.rejected.push(RejectedRecord {
                        id: fallback_id,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let id = q.qid.clone().unwrap_or(fallback_id);
            let instance = build_iirc_instance(&rec.title, &rec.text, id.clone(), q);
            match instance.validate() {
                Ok(()) => out.instances.push(instance),
                Err(reason) => out.rejected.push(RejectedRecord { id, reason }),
            }
        }
    }
    Ok(out)
}

fn build_iirc_instance(
    main_title: &str,
    main_text: &str,
    id: String,
    q: IircQuestion,
) -> QuestionInstance {
    // Group evidence snippets by source passage, preserving first-seen order.
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::BTreeMap<String, Vec<String>> =
        std::collections::BTreeMap::new();
    for snip in &q.context {
        let name = if snip.passage == "main" {
            main_title.to_string()
        } else {
            snip.passage.clone()
        };
        if snip.text.trim().is_empty() || name.trim().is_empty() {
            continue;
        }
        if !grouped.contains_key(&name) {
            order.push(name.clone());
        }
        grouped.entry(name).or_default().push(snip.text.clone());
    }

    let mut passages = Vec::new();
    let mut supports = BTreeSet::new();
    let main_sentences = grouped
        .get(main_title)
        .cloned()
        .unwrap_or_else(|| vec![main_text.to_string()]);
    if grouped.contains_key(main_title) {
        for i in 0..main_sentences.len() {
            supports.insert((main_title.to_string(), i));
        }
    }
    passages.push(Passage::new(main_title, main_sentences));
    for name in &order {
        if name == main_title {
            continue;
        }
        let sentences = grouped[name].clone();
        for i in 0..sentences.len() {
            supports.insert((name.clone(), i));
        }
        passages.push(Passage::new(name, sentences));
    }

    QuestionInstance::new(
        id,
        q.question,
        passages,
        q.answer.canonical(),
        QuestionType::Other,
        supports,
    )
}

// ---------------------------------------------------------------------------
// Synthetic bridge-chain corpus
// ---------------------------------------------------------------------------

/// Knobs for the deterministic synthetic generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_instances: usize,
    pub num_distractors: usize,
    pub hops: usize,
    /// Size of the filler-word pool used for non-key sentences.
    pub vocab_size: usize,
    pub sentences_per_passage: usize,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_instances: 64,
            num_distractors: 8,
            hops: 2,
            vocab_size: 48,
            sentences_per_passage: 3,
            rng_seed: 7,
        }
    }
}

impl SyntheticConfig {
    fn check(&self) -> Result<(), CorpusError> {
        let err = |m: &str| Err(CorpusError::InvalidConfig(m.to_string()));
        if self.num_instances == 0 {
            return err("num_instances must be positive");
        }
        if self.num_distractors == 0 {
            return err("num_distractors must be positive");
        }
        if self.hops < 2 {
            return err("hops must be at least 2");
        }
        if self.vocab_size == 0 {
            return err("vocab_size must be positive");
        }
        if self.sentences_per_passage == 0 {
            return err("sentences_per_passage must be positive");
        }
        Ok(())
    }
}

const RELATIONS: &[&str] = &[
    "capital", "leader", "founder", "color", "anthem", "motto", "mascot", "currency", "river",
    "stadium", "festival", "dialect", "export", "emblem", "patron", "summit",
];

/// Generates bridge-chain instances: passage j's key sentence maps entity
/// e_{j-1} to e_j, and the final hop's key sentence maps to the answer
/// token, which appears nowhere else in the instance. Gold supports mark
/// exactly the key sentences. Output depends only on the config.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Vec<QuestionInstance>, CorpusError> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let pool_size = (4 * (config.hops + config.num_distractors)).max(32);
    let entities: Vec<String> = (0..pool_size).map(|i| format!("e{i}")).collect();
    let fillers: Vec<String> = (0..config.vocab_size).map(|i| format!("w{i}")).collect();

    let mut used_answers = BTreeSet::new();
    let mut instances = Vec::with_capacity(config.num_instances);
    for idx in 0..config.num_instances {
        let k = config.hops;
        // Distinct titles for gold chain + distractors.
        let mut picks = entities.clone();
        picks.shuffle(&mut rng);
        let chain: Vec<String> = picks[..k].to_vec();
        let distractor_titles: Vec<String> = picks[k..k + config.num_distractors].to_vec();

        let mut rels = RELATIONS.to_vec();
        rels.shuffle(&mut rng);
        let hop_rels: Vec<&str> = rels[..k].to_vec();

        // Answer token unique across the corpus, drawn from the rng so
        // different seeds produce different answers.
        let answer = loop {
            let cand = format!("v{:04x}", rng.random_range(0u32..0x1_0000));
            if used_answers.insert(cand.clone()) {
                break cand;
            }
        };

        let filler_sentence = |rng: &mut ChaCha8Rng| -> String {
            let w = |rng: &mut ChaCha8Rng| fillers[rng.random_range(0..fillers.len())].clone();
            format!("the {} {} was {} .", w(rng), w(rng), w(rng))
        };

        let make_passage = |rng: &mut ChaCha8Rng, title: &str, key: String| -> (Passage, usize) {
            let key_idx = rng.random_range(0..config.sentences_per_passage);
            let sentences: Vec<String> = (0..config.sentences_per_passage)
                .map(|i| if i == key_idx { key.clone() } else { filler_sentence(rng) })
                .collect();
            (Passage::new(title, sentences), key_idx)
        };

        let mut passages = Vec::new();
        let mut supports = BTreeSet::new();
        for j in 0..k {
            let object = if j + 1 < k { chain[j + 1].clone() } else { answer.clone() };
            let key = format!("the {} of {} is {} .", hop_rels[j], chain[j], object);
            let (p, key_idx) = make_passage(&mut rng, &chain[j], key);
            supports.insert((chain[j].clone(), key_idx));
            passages.push(p);
        }
        for title in &distractor_titles {
            // Distractors reuse the gold templates with other entities; the
            // object is always an entity so it can never equal the answer.
            let rel = if rng.random_bool(0.5) {
                hop_rels[rng.random_range(0..k)]
            } else {
                rels[rng.random_range(0..rels.len())]
            };
            let object = loop {
                let cand = &entities[rng.random_range(0..entities.len())];
                if cand != title {
                    break cand.clone();
                }
            };
            let key = format!("the {rel} of {title} is {object} .");
            let (p, _) = make_passage(&mut rng, title, key);
            passages.push(p);
        }
        passages.shuffle(&mut rng);

        // "what is the rel_k of the rel_{k-1} of ... the rel_1 of e0 ?"
        let mut question = String::from("what is");
        for rel in hop_rels.iter().rev() {
            question.push_str(&format!(" the {rel} of"));
        }
        question.push_str(&format!(" {} ?", chain[0]));

        let instance = QuestionInstance::new(
            format!("synth-{idx:04}"),
            question,
            passages,
            answer,
            QuestionType::Bridge,
            supports,
        );
        debug_assert!(instance.validate().is_ok());
        instances.push(instance);
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hotpot_json() -> String {
        serde_json::json!([
            {
                "_id": "t1",
                "question": "who wrote X?",
                "answer": "Ann",
                "type": "bridge",
                "supporting_facts": [["Book X", 0], ["Ann", 1]],
                "context": [
                    ["Book X", ["Book X was written by Ann.", "It sold well."]],
                    ["Ann", ["Ann is a writer.", "Ann wrote Book X in 1999."]],
                    ["Bob", ["Bob is unrelated."]]
                ]
            }
        ])
        .to_string()
    }

    #[test]
    fn loads_hotpot_record() {
        let out = load_hotpot_str(&tiny_hotpot_json()).unwrap();
        assert!(out.rejected.is_empty());
        assert_eq!(out.instances.len(), 1);
        let q = &out.instances[0];
        assert_eq!(q.passages.len(), 3);
        assert_eq!(q.question_type, QuestionType::Bridge);
        assert_eq!(q.gold_passage_titles.len(), 2);
        assert!(q.gold_supports.contains(&("Ann".to_string(), 1)));
    }

    #[test]
    fn empty_array_loads_empty() {
        let out = load_hotpot_str("[]").unwrap();
        assert!(out.instances.is_empty());
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn out_of_range_support_is_rejected_with_id() {
        let json = serde_json::json!([
            {
                "_id": "bad-support",
                "question": "q?",
                "answer": "a",
                "type": "bridge",
                "supporting_facts": [["P", 7]],
                "context": [["P", ["s1.", "s2.", "s3.", "s4.", "s5."]]]
            }
        ])
        .to_string();
        let out = load_hotpot_str(&json).unwrap();
        assert!(out.instances.is_empty());
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].id, "bad-support");
        assert!(out.rejected[0].reason.contains("out of range"));
    }

    #[test]
    fn missing_field_is_rejected_not_fatal() {
        let json = r#"[{"_id": "no-question", "answer": "a", "type": "bridge",
            "supporting_facts": [], "context": [["P", ["s."]]]}]"#;
        let out = load_hotpot_str(json).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert!(out.rejected[0].reason.contains("question"));
    }

    #[test]
    fn hotpot_round_trip_is_lossless() {
        let out = load_hotpot_str(&tiny_hotpot_json()).unwrap();
        let re = load_hotpot_str(&to_hotpot_json(&out.instances)).unwrap();
        assert_eq!(out.instances, re.instances);
    }

    #[test]
    fn synthetic_round_trips_through_hotpot_schema() {
        let corpus = generate_synthetic(&SyntheticConfig {
            num_instances: 4,
            ..Default::default()
        })
        .unwrap();
        let re = load_hotpot_str(&to_hotpot_json(&corpus)).unwrap();
        assert!(re.rejected.is_empty());
        assert_eq!(corpus, re.instances);
    }

    fn tiny_iirc_json() -> String {
        serde_json::json!([
            {
                "title": "Main Topic",
                "text": "Main Topic is a thing with history.",
                "questions": [
                    {
                        "qid": "q-binary",
                        "question": "is it true?",
                        "answer": {"type": "binary", "answer_value": true},
                        "context": [
                            {"passage": "main", "text": "Main Topic is a thing with history."},
                            {"passage": "Linked Page", "text": "Linked Page confirms it."}
                        ]
                    },
                    {
                        "qid": "q-none",
                        "question": "what cannot be known?",
                        "answer": {"type": "none"},
                        "context": []
                    },
                    {
                        "qid": "q-span",
                        "question": "which two?",
                        "answer": {"type": "span", "answer_spans": [
                            {"text": "alpha"}, {"text": "beta"}
                        ]},
                        "context": [
                            {"passage": "Linked Page", "text": "alpha and beta are both here."}
                        ]
                    },
                    {"answer": {"type": "none"}}
                ]
            }
        ])
        .to_string()
    }

    #[test]
    fn iirc_answer_canonicalization() {
        let out = load_iirc_str(&tiny_iirc_json()).unwrap();
        assert_eq!(out.instances.len(), 3);
        let by_id = |id: &str| out.instances.iter().find(|q| q.id == id).unwrap();
        assert_eq!(by_id("q-binary").answer, "yes");
        assert_eq!(by_id("q-none").answer, "unanswerable");
        assert_eq!(by_id("q-span").answer, "alpha beta");
    }

    #[test]
    fn iirc_main_passage_first_and_empty_supports_kept() {
        let out = load_iirc_str(&tiny_iirc_json()).unwrap();
        for q in &out.instances {
            assert_eq!(q.passages[0].title, "Main Topic");
        }
        let none = out.instances.iter().find(|q| q.id == "q-none").unwrap();
        assert!(none.gold_supports.is_empty());
        assert_eq!(none.passages.len(), 1);
    }

    #[test]
    fn iirc_malformed_question_rejected() {
        let out = load_iirc_str(&tiny_iirc_json()).unwrap();
        assert_eq!(out.rejected.len(), 1);
        assert!(out.rejected[0].reason.contains("question"));
    }

    #[test]
    fn synthetic_shape_matches_config() {
        let cfg = SyntheticConfig {
            num_instances: 1,
            num_distractors: 8,
            hops: 2,
            rng_seed: 7,
            ..Default::default()
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        assert_eq!(corpus.len(), 1);
        let q = &corpus[0];
        assert_eq!(q.passages.len(), 10);
        assert_eq!(q.gold_passage_titles.len(), 2);
        assert_eq!(q.gold_supports.len(), 2);
        assert_eq!(q.question_type, QuestionType::Bridge);
        q.validate().unwrap();
    }

    #[test]
    fn synthetic_is_deterministic_per_seed() {
        let cfg = SyntheticConfig {
            num_instances: 6,
            ..Default::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(to_hotpot_json(&a), to_hotpot_json(&b));
    }

    #[test]
    fn different_seeds_differ_in_answers() {
        let mk = |seed| {
            generate_synthetic(&SyntheticConfig {
                num_instances: 3,
                rng_seed: seed,
                ..Default::default()
            })
            .unwrap()
        };
        let a = mk(7);
        let b = mk(8);
        let answers = |c: &[QuestionInstance]| -> Vec<String> {
            c.iter().map(|q| q.answer.clone()).collect()
        };
        assert_ne!(answers(&a), answers(&b));
    }

    #[test]
    fn synthetic_answer_planted_in_exactly_one_gold_key_sentence() {
        let corpus = generate_synthetic(&SyntheticConfig {
            num_instances: 16,
            ..Default::default()
        })
        .unwrap();
        for q in &corpus {
            let mut hits = 0;
            for p in &q.passages {
                for (i, s) in p.sentences.iter().enumerate() {
                    if s.split_whitespace().any(|w| w == q.answer) {
                        hits += 1;
                        assert!(
                            q.gold_supports.contains(&(p.title.clone(), i)),
                            "answer outside a gold key sentence in {}",
                            q.id
                        );
                    }
                }
            }
            assert_eq!(hits, 1, "answer must occur exactly once in {}", q.id);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SyntheticConfig {
            hops: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }
}

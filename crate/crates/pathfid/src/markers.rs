//! Reserved marker tokens shared by input blocks and target reasoning paths.
//!
//! Fact markers `<f1>`..`<f32>` are deliberately the same tokens on both the
//! encoder side (inserted before each sentence of a passage) and the decoder
//! side (emitted as supporting-fact pointers), so a generated `<f3>` refers
//! to the third sentence of the passage named by the enclosing hop.

/// Hard cap on fact markers per passage. HotpotQA passages rarely exceed
/// ~10 sentences; capping keeps the marker vocabulary fixed.
pub const MAX_FACT_MARKERS: usize = 32;

/// Hard cap on hop markers (`<title-k>` / `<facts-k>`).
pub const MAX_HOPS: usize = 8;

/// `<answer>` separates the reasoning path from the answer span.
pub const ANSWER_MARKER: &str = "<answer>";

/// Field prefixes used by the block templates. These are ordinary words to
/// the tokenizer but are reserved so truncation never strands one at the
/// end of a block.
pub const QUESTION_PREFIX: &str = "question:";
pub const TITLE_PREFIX: &str = "title:";
pub const CONTEXT_PREFIX: &str = "context:";

/// Fact marker for 1-based sentence index `i`, e.g. `<f3>`.
pub fn fact_marker(i: usize) -> String {
    debug_assert!(i >= 1 && i <= MAX_FACT_MARKERS);
    format!("<f{i}>")
}

/// Title marker for 1-based hop `k`, e.g. `<title-2>`.
pub fn title_marker(k: usize) -> String {
    format!("<title-{k}>")
}

/// Facts marker for 1-based hop `k`, e.g. `<facts-2>`.
pub fn facts_marker(k: usize) -> String {
    format!("<facts-{k}>")
}

/// Context marker for paired-passage blocks, 1-based slot `k`.
pub fn context_marker(k: usize) -> String {
    format!("<context-{k}>")
}

/// Parses `<fJ>` into `J` if the token is a known fact marker.
pub fn parse_fact_marker(token: &str) -> Option<usize> {
    let inner = token.strip_prefix("<f")?.strip_suffix('>')?;
    let idx: usize = inner.parse().ok()?;
    (1..=MAX_FACT_MARKERS).contains(&idx).then_some(idx)
}

/// Parses `<title-K>` into `K` if the token is a known title marker.
pub fn parse_title_marker(token: &str) -> Option<usize> {
    let inner = token.strip_prefix("<title-")?.strip_suffix('>')?;
    let k: usize = inner.parse().ok()?;
    (1..=MAX_HOPS).contains(&k).then_some(k)
}

/// Parses `<facts-K>` into `K` if the token is a known facts marker.
pub fn parse_facts_marker(token: &str) -> Option<usize> {
    let inner = token.strip_prefix("<facts-")?.strip_suffix('>')?;
    let k: usize = inner.parse().ok()?;
    (1..=MAX_HOPS).contains(&k).then_some(k)
}

/// True for every reserved marker token (not the field prefixes).
pub fn is_marker(token: &str) -> bool {
    token == ANSWER_MARKER
        || token == "<context-1>"
        || token == "<context-2>"
        || parse_fact_marker(token).is_some()
        || parse_title_marker(token).is_some()
        || parse_facts_marker(token).is_some()
}

/// True for tokens that must never dangle at the end of a truncated block:
/// every marker plus the field prefixes.
pub fn is_structural(token: &str) -> bool {
    is_marker(token)
        || token == QUESTION_PREFIX
        || token == TITLE_PREFIX
        || token == CONTEXT_PREFIX
}

/// The full reserved vocabulary, in a fixed order. The model tokenizer
/// registers these before any corpus word so marker ids are stable.
pub fn all_reserved_tokens() -> Vec<String> {
    let mut out = Vec::new();
    for i in 1..=MAX_FACT_MARKERS {
        out.push(fact_marker(i));
    }
    for k in 1..=MAX_HOPS {
        out.push(title_marker(k));
        out.push(facts_marker(k));
    }
    out.push(ANSWER_MARKER.to_string());
    out.push(context_marker(1));
    out.push(context_marker(2));
    out.push(QUESTION_PREFIX.to_string());
    out.push(TITLE_PREFIX.to_string());
    out.push(CONTEXT_PREFIX.to_string());
    out
}

//! Multi-hop question answering as single-sequence reasoning-path prediction.
//!
//! The pipeline reads a corpus of multi-hop questions (HotpotQA distractor
//! format, IIRC, or a deterministic synthetic generator), turns every
//! question+passage pair into an encoder input block, linearizes the gold
//! reasoning path (titles, supporting-fact pointers, answer) into a single
//! target sequence, trains a small fusion-in-decoder encoder-decoder on
//! those pairs, and parses the decoded sequences back into structured
//! predictions that the evaluation suite scores.
//!
//! Modules:
//! - [`corpus`]: data model, loaders, synthetic corpus generation
//! - [`markers`]: the reserved special-token vocabulary
//! - [`blocks`]: per-passage encoder input block construction
//! - [`pathcodec`]: reasoning path <-> token sequence codec
//! - [`hoporder`]: gold passage ordering heuristics
//! - [`metrics`]: answer/support EM+F1, breakdowns, groundedness, buckets
//! - [`minifid`]: the desk-scale fusion-in-decoder model and pipeline

pub mod blocks;
pub mod corpus;
pub mod hoporder;
pub mod markers;
pub mod metrics;
pub mod minifid;
pub mod pathcodec;

/// Splits a rendered text into its whitespace tokens.
///
/// All block and path renderings in this crate are single-space joined, so
/// splitting and re-joining is the identity on anything the crate produces.
pub fn split_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Joins tokens with single spaces, inverse of [`split_tokens`].
pub fn render_tokens(tokens: &[String]) -> String {
    tokens.join(" ")
}

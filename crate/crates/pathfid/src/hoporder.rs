//! Orders an unordered gold passage pair into a reasoning sequence.
//!
//! The passage containing the answer span goes last; when both or neither
//! contain it, the passage that hyperlinks to the other goes first; when
//! links are inconclusive too, lexicographic title order keeps the result
//! deterministic.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Passage;
use crate::metrics::normalize_answer;

#[derive(Debug, Error)]
pub enum HopOrderError {
    #[error("hop ordering needs exactly 2 gold passages, got {0}")]
    WrongGoldCount(usize),
}

/// Outgoing hyperlinks keyed by exact passage title.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct LinkGraph {
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl LinkGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a JSON object mapping title to an array of linked titles.
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json).map(|edges| Self { edges })
    }

    /// Collects the `links` fields passages carry, when any do.
    pub fn from_passages<'a>(passages: impl IntoIterator<Item = &'a Passage>) -> Self {
        let mut graph = Self::new();
        for p in passages {
            for target in &p.links {
                graph.insert(p.title.clone(), target.clone());
            }
        }
        graph
    }

    pub fn insert(&mut self, from: impl Into<String>, to: impl Into<String>) {
        self.edges.entry(from.into()).or_default().insert(to.into());
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.get(from).is_some_and(|s| s.contains(to))
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

fn contains_answer(p: &Passage, normalized_answer: &str) -> bool {
    normalize_answer(&p.full_text()).contains(normalized_answer)
}

/// Orders two gold passages into hop order. Exactly one passage containing
/// the normalized answer as a substring goes last; otherwise a one-way
/// hyperlink decides (linker first); otherwise titles sort
/// lexicographically.
pub fn order_hops<'a>(
    gold: &[&'a Passage],
    answer: &str,
    links: &LinkGraph,
) -> Result<[&'a Passage; 2], HopOrderError> {
    let [a, b] = match gold {
        [a, b] => [*a, *b],
        other => return Err(HopOrderError::WrongGoldCount(other.len())),
    };
    let needle = normalize_answer(answer);
    let in_a = contains_answer(a, &needle);
    let in_b = contains_answer(b, &needle);
    if in_a != in_b {
        return Ok(if in_b { [a, b] } else { [b, a] });
    }
    let a_links_b = links.has_edge(&a.title, &b.title);
    let b_links_a = links.has_edge(&b.title, &a.title);
    if a_links_b != b_links_a {
        return Ok(if a_links_b { [a, b] } else { [b, a] });
    }
    Ok(if a.title <= b.title { [a, b] } else { [b, a] })
}

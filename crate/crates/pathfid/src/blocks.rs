//! Per-passage encoder input blocks for the three model formulations.
//!
//! A plain block renders `question: q title: t context: sentences`; a path
//! block additionally inserts a fact marker before each sentence; a pair
//! block packs two marked passages behind one question for cross-passage
//! attention. Blocks are token sequences ready for the model tokenizer.

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Passage;
use crate::markers::{self, CONTEXT_PREFIX, MAX_FACT_MARKERS, QUESTION_PREFIX, TITLE_PREFIX};
use crate::split_tokens;

/// Default token budget for single-passage blocks.
pub const DEFAULT_MAX_BLOCK_LEN: usize = 256;
/// Default token budget for pair blocks, which hold two passages.
pub const DEFAULT_MAX_PAIR_BLOCK_LEN: usize = 512;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("passage {title:?} has {count} sentences, more than the {max} fact markers")]
    TooManySentences {
        title: String,
        count: usize,
        max: usize,
    },
    #[error("pair anchor {0:?} is not among the candidate passages")]
    UnknownAnchor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Fid,
    Path,
    PathPlus,
}

/// One encoder input: a token sequence plus the passage titles it renders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputBlock {
    pub tokens: Vec<String>,
    pub source_titles: Vec<String>,
    pub kind: BlockKind,
}

impl InputBlock {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn check_question(q: &str) -> Result<(), BlockError> {
    if q.trim().is_empty() {
        Err(BlockError::EmptyQuestion)
    } else {
        Ok(())
    }
}

fn check_marker_budget(p: &Passage) -> Result<(), BlockError> {
    if p.sentence_count() > MAX_FACT_MARKERS {
        Err(BlockError::TooManySentences {
            title: p.title.clone(),
            count: p.sentence_count(),
            max: MAX_FACT_MARKERS,
        })
    } else {
        Ok(())
    }
}

/// Context tokens with a fact marker preceding each sentence:
/// `<f1> s1 <f2> s2 ...`.
fn marked_context(p: &Passage) -> Vec<String> {
    let mut out = Vec::new();
    for (i, sentence) in p.sentences.iter().enumerate() {
        out.push(markers::fact_marker(i + 1));
        out.extend(split_tokens(sentence));
    }
    out
}

/// `question: q title: t context: s1 s2 ...`
pub fn build_fid_block(q: &str, p: &Passage) -> Result<InputBlock, BlockError> {
    check_question(q)?;
    let mut tokens = vec![QUESTION_PREFIX.to_string()];
    tokens.extend(split_tokens(q));
    tokens.push(TITLE_PREFIX.to_string());
    tokens.extend(split_tokens(&p.title));
    tokens.push(CONTEXT_PREFIX.to_string());
    tokens.extend(split_tokens(&p.full_text()));
    Ok(InputBlock {
        tokens,
        source_titles: vec![p.title.clone()],
        kind: BlockKind::Fid,
    })
}

/// `question: q title: t context: <f1> s1 <f2> s2 ...`
pub fn build_path_block(q: &str, p: &Passage) -> Result<InputBlock, BlockError> {
    check_question(q)?;
    check_marker_budget(p)?;
    let mut tokens = vec![QUESTION_PREFIX.to_string()];
    tokens.extend(split_tokens(q));
    tokens.push(TITLE_PREFIX.to_string());
    tokens.extend(split_tokens(&p.title));
    tokens.push(CONTEXT_PREFIX.to_string());
    tokens.extend(marked_context(p));
    Ok(InputBlock {
        tokens,
        source_titles: vec![p.title.clone()],
        kind: BlockKind::Path,
    })
}

/// `question: q <title-1> t1 <context-1> <f1> ... <title-2> t2 <context-2>
/// <f1> ...` packing a passage pair behind one question.
pub fn build_pathplus_block(q: &str, p1: &Passage, p2: &Passage) -> Result<InputBlock, BlockError> {
    check_question(q)?;
    check_marker_budget(p1)?;
    check_marker_budget(p2)?;
    let mut tokens = vec![QUESTION_PREFIX.to_string()];
    tokens.extend(split_tokens(q));
    for (k, p) in [(1, p1), (2, p2)] {
        tokens.push(markers::title_marker(k));
        tokens.extend(split_tokens(&p.title));
        tokens.push(markers::context_marker(k));
        tokens.extend(marked_context(p));
    }
    Ok(InputBlock {
        tokens,
        source_titles: vec![p1.title.clone(), p2.title.clone()],
        kind: BlockKind::PathPlus,
    })
}

/// Derives the pair set for the second-stage model: `(p*, p_n)` for every
/// candidate passage in input order, including `(p*, p*)`.
pub fn build_pair_set<'a>(
    passages: &'a [Passage],
    p_star: &str,
) -> Result<Vec<(&'a Passage, &'a Passage)>, BlockError> {
    let anchor = passages
        .iter()
        .find(|p| p.title == p_star)
        .ok_or_else(|| BlockError::UnknownAnchor(p_star.to_string()))?;
    Ok(passages.iter().map(|p| (anchor, p)).collect())
}

/// Cuts a block to `max_len` tokens from the right, then drops any
/// structural tokens (markers, field prefixes) left dangling at the cut so
/// every retained marker still introduces content.
pub fn truncate_block(block: &InputBlock, max_len: usize) -> InputBlock {
    if block.tokens.len() <= max_len {
        return block.clone();
    }
    let mut tokens: Vec<String> = block.tokens[..max_len].to_vec();
    while tokens.last().is_some_and(|t| markers::is_structural(t)) {
        tokens.pop();
    }
    InputBlock {
        tokens,
        source_titles: block.source_titles.clone(),
        kind: block.kind,
    }
}

//! Word-level tokenizer with reserved marker tokens.
//!
//! Tokens are whitespace-split words; every structural marker is injected
//! as a reserved token ahead of the corpus vocabulary so markers always map
//! to single ids. Ids are assigned in first-seen order, making the
//! vocabulary a deterministic function of the corpus iteration order.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::markers;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tokenizer {
    id_to_token: Vec<String>,
    #[serde(skip)]
    token_to_id: HashMap<String, usize>,
}

impl Tokenizer {
    /// Builds a vocabulary: specials, then every reserved marker, then
    /// corpus tokens in first-seen order.
    pub fn build<'a>(token_streams: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut t = Self {
            id_to_token: Vec::new(),
            token_to_id: HashMap::new(),
        };
        for special in [PAD, BOS, EOS, UNK] {
            t.intern(special);
        }
        for marker in markers::all_reserved_tokens() {
            t.intern(&marker);
        }
        for stream in token_streams {
            for token in stream {
                t.intern(token);
            }
        }
        t
    }

    /// Rebuilds the reverse index after deserialization.
    pub fn from_id_list(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            id_to_token,
            token_to_id,
        }
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len();
        self.id_to_token.push(token.to_string());
        self.token_to_id.insert(token.to_string(), id);
        id
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn bos_id(&self) -> usize {
        1
    }

    pub fn eos_id(&self) -> usize {
        2
    }

    pub fn unk_id(&self) -> usize {
        3
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(3)
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token.get(id).map_or(UNK, String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::split_tokens;

    #[test]
    fn specials_and_markers_are_reserved() {
        let t = Tokenizer::build(std::iter::empty::<&[String]>());
        assert_eq!(t.id(PAD), 0);
        assert_eq!(t.id(BOS), 1);
        assert_eq!(t.id(EOS), 2);
        assert_eq!(t.id(UNK), 3);
        for m in markers::all_reserved_tokens() {
            assert_ne!(t.id(&m), t.unk_id(), "{m} must be in vocab");
            assert_eq!(t.token(t.id(&m)), m);
        }
    }

    #[test]
    fn round_trip_on_known_tokens() {
        let corpus = split_tokens("question: who wrote <title-1> Book X <answer> Ann");
        let t = Tokenizer::build([corpus.as_slice()]);
        let ids = t.encode(&corpus);
        assert_eq!(t.decode(&ids), corpus);
        assert!(ids.iter().all(|&i| i != t.unk_id()));
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let t = Tokenizer::build(std::iter::empty::<&[String]>());
        assert_eq!(t.id("never-seen"), t.unk_id());
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let a = split_tokens("b a c a");
        let b = split_tokens("c d");
        let t1 = Tokenizer::build([a.as_slice(), b.as_slice()]);
        let t2 = Tokenizer::build([a.as_slice(), b.as_slice()]);
        assert_eq!(t1.vocab(), t2.vocab());
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let corpus = split_tokens("alpha beta");
        let t = Tokenizer::build([corpus.as_slice()]);
        let json = serde_json::to_string(&t).unwrap();
        let raw: Tokenizer = serde_json::from_str(&json).unwrap();
        let restored = Tokenizer::from_id_list(raw.id_to_token);
        assert_eq!(restored.id("alpha"), t.id("alpha"));
        assert_eq!(restored.vocab_size(), t.vocab_size());
    }
}

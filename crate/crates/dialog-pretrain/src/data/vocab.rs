//! Frequency-ranked vocabulary with fixed reserved ids.

use super::Corpus;
use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<sos>", "<eos>"];

/// Encoded utterances are capped at this many ids including the
/// sentence markers; longer content is truncated, keeping the end marker.
pub const MAX_UTTERANCE_LEN: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keep the `size` most frequent training-split tokens. Ties break
    /// toward the lexicographically smaller token.
    pub fn build(corpus: &Corpus, size: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for dialog in &corpus.train {
            for turn in &dialog.turns {
                for tok in &turn.tokens {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(size);

        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens)
    }

    /// Rebuild from a serialized token list (reserved entries included).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// `<sos> tokens... <eos>`, truncated to [`MAX_UTTERANCE_LEN`].
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        let keep = tokens.len().min(MAX_UTTERANCE_LEN - 2);
        let mut out = Vec::with_capacity(keep + 2);
        out.push(SOS_ID);
        out.extend(tokens[..keep].iter().map(|t| self.id(t)));
        out.push(EOS_ID);
        out
    }

    /// Content tokens only: drops the sentence markers, stops at the first
    /// end marker.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        let mut out = Vec::new();
        for &id in ids {
            match id {
                SOS_ID | PAD_ID => continue,
                EOS_ID => break,
                _ => out.push(self.token(id).to_string()),
            }
        }
        out
    }
}

//! Corpus ingestion, vocabulary, example construction, and sampling.
//!
//! The corpus file format is UTF-8 JSON:
//!
//! ```text
//! {"train": [Dialog], "valid": [Dialog], "test": [Dialog]}
//! Dialog = {"id": str, "domains": [str],
//!           "turns": [{"speaker": "user"|"system", "text": str,
//!                      "belief": {"<domain>-<slot>": value}?,   // user turns
//!                      "acts": [str]?}]}                        // system turns
//! ```

mod convert;
mod sampling;
pub mod schema;
mod segments;
mod synthetic;
mod vocab;

pub use convert::convert_multiwoz;
pub use sampling::{
    all_utterances, domain_split_indices, subsample, system_utterances, NegativeSampler,
};
pub use segments::{
    context_length_bucket, make_downstream_examples, make_pretrain_segments, Bucket, BspExample,
    DapExample, DownstreamTask, GenExample, RetrievalExample, Segment, TaskExamples,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::{Vocabulary, EOS_ID, MAX_UTTERANCE_LEN, PAD_ID, SOS_ID, UNK_ID};

use crate::error::{Error, Result};
use schema::BeliefSchema;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

/// A single tokenized turn.
#[derive(Debug, Clone)]
pub struct Turn {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
    /// Belief labels keyed `"<domain>-<slot>"`, user turns only.
    pub belief: Option<BTreeMap<String, String>>,
    /// System dialog acts, subset of the 32-act inventory.
    pub acts: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone)]
pub struct Dialog {
    pub id: String,
    pub domains: BTreeSet<String>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub train: Vec<Dialog>,
    pub valid: Vec<Dialog>,
    pub test: Vec<Dialog>,
}

/// What `load` had to skip or repair.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub skipped_dialogs: usize,
    pub repaired_values: usize,
    pub messages: Vec<String>,
}

impl LoadReport {
    const MAX_MESSAGES: usize = 50;

    fn warn(&mut self, msg: String) {
        if self.messages.len() < Self::MAX_MESSAGES {
            self.messages.push(msg);
        }
    }
}

// Serialized (raw) corpus shapes.

#[derive(Debug, Serialize, Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    belief: Option<BTreeMap<String, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acts: Option<Vec<String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawDialog {
    id: String,
    domains: Vec<String>,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCorpus {
    train: Vec<RawDialog>,
    valid: Vec<RawDialog>,
    test: Vec<RawDialog>,
}

/// Lowercase text, splitting punctuation into standalone tokens.
/// Alphanumeric runs stay together; everything else is one token per char.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

impl Corpus {
    /// Load and validate a corpus file. Dialogs that violate structural
    /// invariants (fewer than 2 turns, wrong speaker alternation, empty
    /// turns) are skipped with a warning; unknown belief values are mapped
    /// to `none`, unknown acts dropped.
    pub fn load(path: &Path, schema: &BeliefSchema) -> Result<(Corpus, LoadReport)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let raw: RawCorpus = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::from_raw(raw, schema)
    }

    fn from_raw(raw: RawCorpus, schema: &BeliefSchema) -> Result<(Corpus, LoadReport)> {
        let mut report = LoadReport::default();
        let mut seen_unknown: BTreeSet<(String, String)> = BTreeSet::new();
        let mut convert_split = |dialogs: Vec<RawDialog>| -> Vec<Dialog> {
            let mut out = Vec::with_capacity(dialogs.len());
            'dialog: for d in dialogs {
                if d.turns.len() < 2 {
                    report.skipped_dialogs += 1;
                    report.warn(format!("dialog {}: fewer than 2 turns, skipped", d.id));
                    continue;
                }
                let mut turns = Vec::with_capacity(d.turns.len());
                for (i, t) in d.turns.into_iter().enumerate() {
                    let expected = if i % 2 == 0 {
                        Speaker::User
                    } else {
                        Speaker::System
                    };
                    if t.speaker != expected {
                        report.skipped_dialogs += 1;
                        report.warn(format!(
                            "dialog {}: turn {} speaker out of order, skipped",
                            d.id, i
                        ));
                        continue 'dialog;
                    }
                    let tokens = tokenize(&t.text);
                    if tokens.is_empty() {
                        report.skipped_dialogs += 1;
                        report.warn(format!("dialog {}: turn {} empty, skipped", d.id, i));
                        continue 'dialog;
                    }
                    let belief = t.belief.map(|mut b| {
                        let keys: Vec<String> = b.keys().cloned().collect();
                        for key in keys {
                            match schema.slot_index(&key) {
                                None => {
                                    if seen_unknown.insert((key.clone(), String::new())) {
                                        report.warn(format!("unknown slot {key}, dropped"));
                                    }
                                    b.remove(&key);
                                }
                                Some(s) => {
                                    let val = b.get(&key).unwrap().clone();
                                    if schema.value_index(s, &val).is_none() {
                                        if seen_unknown.insert((key.clone(), val.clone())) {
                                            report.warn(format!(
                                                "unknown value {val:?} for slot {key}, mapped to none"
                                            ));
                                        }
                                        report.repaired_values += 1;
                                        b.insert(key, "none".to_string());
                                    }
                                }
                            }
                        }
                        b
                    });
                    let acts = t.acts.map(|list| {
                        let mut set = BTreeSet::new();
                        for a in list {
                            if schema::act_index(&a).is_some() {
                                set.insert(a);
                            } else if seen_unknown.insert((a.clone(), "act".into())) {
                                report.warn(format!("unknown act {a}, dropped"));
                            }
                        }
                        set
                    });
                    turns.push(Turn {
                        speaker: t.speaker,
                        tokens,
                        belief,
                        acts,
                    });
                }
                out.push(Dialog {
                    id: d.id,
                    domains: d.domains.into_iter().collect(),
                    turns,
                });
            }
            out
        };

        let corpus = Corpus {
            train: convert_split(raw.train),
            valid: convert_split(raw.valid),
            test: convert_split(raw.test),
        };
        if corpus.train.is_empty() {
            return Err(Error::Corpus("train split is empty".into()));
        }
        Ok((corpus, report))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let raw = RawCorpus {
            train: self.train.iter().map(dialog_to_raw).collect(),
            valid: self.valid.iter().map(dialog_to_raw).collect(),
            test: self.test.iter().map(dialog_to_raw).collect(),
        };
        let text = serde_json::to_string_pretty(&raw)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        crate::harness::write_atomic(path, text.as_bytes())
    }

    pub fn split(&self, name: &str) -> &[Dialog] {
        match name {
            "train" => &self.train,
            "valid" => &self.valid,
            _ => &self.test,
        }
    }
}

fn dialog_to_raw(d: &Dialog) -> RawDialog {
    RawDialog {
        id: d.id.clone(),
        domains: d.domains.iter().cloned().collect(),
        turns: d
            .turns
            .iter()
            .map(|t| RawTurn {
                speaker: t.speaker,
                text: t.tokens.join(" "),
                belief: t.belief.clone(),
                acts: t.acts.as_ref().map(|a| a.iter().cloned().collect()),
            })
            .collect(),
    }
}

#[cfg(test)]
pub(crate) fn corpus_from_json(json: &str, schema: &BeliefSchema) -> Result<(Corpus, LoadReport)> {
    let raw: RawCorpus = serde_json::from_str(json).map_err(|e| Error::json("inline", e))?;
    Corpus::from_raw(raw, schema)
}

//! Converter from raw MultiWoz distribution files to the corpus format.
//!
//! Expects a directory containing `data.json` (dialog id -> {goal, log}),
//! `valListFile.txt` / `testListFile.txt` (one dialog id per line), and
//! optionally `dialogue_acts.json` (dialog id -> turn index -> act map).
//! Belief annotations ride on the system turn's `metadata` in the raw
//! format; they are reassigned to the preceding user turn here.

use super::schema::BeliefSchema;
use super::{Corpus, LoadReport};
use crate::error::{Error, Result};
use serde_json::Value;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub fn convert_multiwoz(raw_dir: &Path, schema: &BeliefSchema) -> Result<(Corpus, LoadReport)> {
    let data_path = raw_dir.join("data.json");
    let text = std::fs::read_to_string(&data_path)
        .map_err(|e| Error::io(data_path.display().to_string(), e))?;
    let data: BTreeMap<String, Value> = serde_json::from_str(&text)
        .map_err(|e| Error::json(data_path.display().to_string(), e))?;

    let read_list = |name: &str| -> Result<BTreeSet<String>> {
        let path = raw_dir.join(name);
        if !path.exists() {
            return Ok(BTreeSet::new());
        }
        let text =
            std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(text
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect())
    };
    let valid_ids = read_list("valListFile.txt")?;
    let test_ids = read_list("testListFile.txt")?;

    let acts_path = raw_dir.join("dialogue_acts.json");
    let acts: BTreeMap<String, Value> = if acts_path.exists() {
        let text = std::fs::read_to_string(&acts_path)
            .map_err(|e| Error::io(acts_path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(acts_path.display().to_string(), e))?
    } else {
        BTreeMap::new()
    };

    let mut raw_train = Vec::new();
    let mut raw_valid = Vec::new();
    let mut raw_test = Vec::new();
    for (dialog_id, body) in &data {
        let raw = convert_dialog(dialog_id, body, &acts)?;
        let stem = dialog_id.trim_end_matches(".json");
        if valid_ids.contains(dialog_id) || valid_ids.contains(stem) {
            raw_valid.push(raw);
        } else if test_ids.contains(dialog_id) || test_ids.contains(stem) {
            raw_test.push(raw);
        } else {
            raw_train.push(raw);
        }
    }

    let combined = serde_json::json!({
        "train": raw_train,
        "valid": raw_valid,
        "test": raw_test,
    });
    let raw: super::RawCorpus =
        serde_json::from_value(combined).map_err(|e| Error::json("converted corpus", e))?;
    super::Corpus::from_raw(raw, schema)
}

fn convert_dialog(
    dialog_id: &str,
    body: &Value,
    all_acts: &BTreeMap<String, Value>,
) -> Result<Value> {
    let log = body
        .get("log")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Corpus(format!("dialog {dialog_id}: missing log array")))?;

    let domains: Vec<String> = body
        .get("goal")
        .and_then(Value::as_object)
        .map(|goal| {
            goal.iter()
                .filter(|(k, v)| {
                    !matches!(k.as_str(), "message" | "topic")
                        && v.as_object().map(|o| !o.is_empty()).unwrap_or(false)
                })
                .map(|(k, _)| k.clone())
                .collect()
        })
        .unwrap_or_default();

    let stem = dialog_id.trim_end_matches(".json");
    let dialog_acts = all_acts.get(stem).or_else(|| all_acts.get(dialog_id));

    let mut turns = Vec::new();
    let mut pending_user: Option<Value> = None;
    for (i, entry) in log.iter().enumerate() {
        let text = entry.get("text").and_then(Value::as_str).unwrap_or("");
        let is_system = i % 2 == 1;
        if !is_system {
            pending_user = Some(serde_json::json!({
                "speaker": "user",
                "text": text,
            }));
        } else {
            // The system turn's metadata holds the belief state reached
            // after the user turn; attach it there.
            if let Some(mut user) = pending_user.take() {
                let belief = extract_belief(entry.get("metadata"));
                if !belief.is_empty() {
                    user["belief"] = serde_json::json!(belief);
                }
                turns.push(user);
            }
            let system_turn_index = (i + 1) / 2;
            let acts = extract_acts(dialog_acts, system_turn_index);
            let mut system = serde_json::json!({
                "speaker": "system",
                "text": text,
            });
            if !acts.is_empty() {
                system["acts"] = serde_json::json!(acts);
            }
            turns.push(system);
        }
    }
    if let Some(user) = pending_user.take() {
        turns.push(user);
    }

    Ok(serde_json::json!({
        "id": stem,
        "domains": domains,
        "turns": turns,
    }))
}

/// Flatten `metadata.{domain}.{semi,book}` into `"domain-slot": value`,
/// skipping empties and the nested `booked` list.
fn extract_belief(metadata: Option<&Value>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let Some(meta) = metadata.and_then(Value::as_object) else {
        return out;
    };
    for (domain, sections) in meta {
        let Some(sections) = sections.as_object() else {
            continue;
        };
        for section in ["semi", "book"] {
            let Some(slots) = sections.get(section).and_then(Value::as_object) else {
                continue;
            };
            for (slot, value) in slots {
                if slot == "booked" {
                    continue;
                }
                let Some(value) = value.as_str() else {
                    continue;
                };
                let normalized = value.trim().to_lowercase();
                if normalized.is_empty() || normalized == "not mentioned" {
                    continue;
                }
                out.insert(format!("{domain}-{slot}"), normalized);
            }
        }
    }
    out
}

fn extract_acts(dialog_acts: Option<&Value>, system_turn_index: usize) -> Vec<String> {
    let Some(turn_acts) = dialog_acts
        .and_then(Value::as_object)
        .and_then(|m| m.get(&system_turn_index.to_string()))
    else {
        return Vec::new();
    };
    match turn_acts {
        Value::Object(map) => map.keys().cloned().collect(),
        _ => Vec::new(), // "No Annotation"
    }
}

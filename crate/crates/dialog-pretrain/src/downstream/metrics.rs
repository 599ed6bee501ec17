//! Evaluation metrics: belief F-1, act F-1, Hits@1, and corpus BLEU-4.

use crate::data::schema::BeliefSchema;
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::hash::Hash;

/// Micro F-1 over (turn, slot) pairs with non-`none` values: a pair is a
/// true positive when predicted and gold agree on a non-`none` value,
/// predicted non-`none` values count toward precision, gold non-`none`
/// values toward recall. Index 0 is `none` in every slot.
pub fn f1_belief(predictions: &[Vec<usize>], golds: &[Vec<usize>], schema: &BeliefSchema) -> f64 {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold_count = 0usize;
    for (pred, gold) in predictions.iter().zip(golds) {
        debug_assert_eq!(pred.len(), schema.num_slots());
        for s in 0..schema.num_slots() {
            let p = pred[s];
            let g = gold[s];
            if p != 0 {
                predicted += 1;
            }
            if g != 0 {
                gold_count += 1;
            }
            if p != 0 && p == g {
                tp += 1;
            }
        }
    }
    f1_from_counts(tp, predicted, gold_count)
}

/// Micro F-1 over (example, act) pairs.
pub fn f1_acts(predictions: &[Vec<bool>], golds: &[Vec<bool>]) -> f64 {
    let mut tp = 0usize;
    let mut predicted = 0usize;
    let mut gold_count = 0usize;
    for (pred, gold) in predictions.iter().zip(golds) {
        for (&p, &g) in pred.iter().zip(gold) {
            if p {
                predicted += 1;
            }
            if g {
                gold_count += 1;
            }
            if p && g {
                tp += 1;
            }
        }
    }
    f1_from_counts(tp, predicted, gold_count)
}

fn f1_from_counts(tp: usize, predicted: usize, gold: usize) -> f64 {
    if predicted == 0 || gold == 0 {
        return 0.0;
    }
    let precision = tp as f64 / predicted as f64;
    let recall = tp as f64 / gold as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Fraction of examples whose ground-truth candidate (index 0) scores a
/// strict maximum. Ties count against the scorer.
pub fn hits_at_1(score_rows: &[Vec<f64>]) -> f64 {
    if score_rows.is_empty() {
        return 0.0;
    }
    let hits = score_rows
        .iter()
        .filter(|scores| {
            let gt = scores[0];
            scores[1..].iter().all(|&s| s < gt)
        })
        .count();
    hits as f64 / score_rows.len() as f64
}

/// Corpus-level BLEU-4: modified n-gram precisions pooled over the corpus,
/// geometric mean over orders 1..4, times the brevity penalty. No smoothing:
/// a zero pooled precision at any order gives a zero score.
pub fn bleu4<T: Eq + Hash + Clone>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument(
            "bleu4 needs at least one hypothesis".into(),
        ));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "bleu4 needs parallel lists, got {} hypotheses and {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    const MAX_ORDER: usize = 4;
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len() as u64;
        ref_len += reference.len() as u64;
        for n in 1..=MAX_ORDER {
            if hyp.len() < n {
                continue;
            }
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            if reference.len() >= n {
                for gram in reference.windows(n) {
                    *ref_counts.entry(gram).or_default() += 1;
                }
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for gram in hyp.windows(n) {
                *hyp_counts.entry(gram).or_default() += 1;
            }
            totals[n - 1] += hyp.windows(n).len() as u64;
            for (gram, count) in hyp_counts {
                let clip = ref_counts.get(gram).copied().unwrap_or(0);
                matches[n - 1] += count.min(clip);
            }
        }
    }
    let mut log_precision_sum = 0.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 || matches[n] == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matches[n] as f64 / totals[n] as f64).ln();
    }
    let brevity = if hyp_len == 0 {
        return Ok(0.0);
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(brevity * (log_precision_sum / MAX_ORDER as f64).exp())
}

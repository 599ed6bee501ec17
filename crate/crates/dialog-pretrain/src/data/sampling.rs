//! Negative sampling, training-set subsampling, and domain splits.

use super::{Corpus, Dialog};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeSet;

/// Uniform distribution over a fixed pool of encoded utterances.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    pool: Vec<Vec<u32>>,
}

impl NegativeSampler {
    pub fn new(pool: Vec<Vec<u32>>) -> Self {
        NegativeSampler { pool }
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn pool(&self) -> &[Vec<u32>] {
        &self.pool
    }

    /// Draw `k` utterances i.i.d. uniform from the pool, never returning one
    /// equal to `exclude` (comparison is by token content). Duplicates among
    /// the draws are allowed.
    pub fn sample(
        &self,
        k: usize,
        exclude: &[u32],
        rng: &mut ChaCha20Rng,
    ) -> Result<Vec<Vec<u32>>> {
        if self.pool.len() < k + 1 {
            return Err(Error::InsufficientExamples {
                kind: "negative pool utterances",
                need: k + 1,
                have: self.pool.len(),
            });
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let mut attempts = 0;
            loop {
                let candidate = &self.pool[rng.gen_range(0..self.pool.len())];
                if candidate.as_slice() != exclude {
                    out.push(candidate.clone());
                    break;
                }
                attempts += 1;
                if attempts > 10_000 {
                    return Err(Error::InsufficientExamples {
                        kind: "distinct negative candidates",
                        need: k,
                        have: 0,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Keep `ceil(fraction * |train|)` whole training dialogs, drawn without
/// replacement; validation and test splits pass through untouched.
pub fn subsample(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = corpus.train.len();
    let keep = ((fraction * n as f64).ceil() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::stream(seed, "subsample", 0);
    indices.shuffle(&mut rng);
    indices.truncate(keep);
    indices.sort_unstable();
    Ok(Corpus {
        train: indices.iter().map(|&i| corpus.train[i].clone()).collect(),
        valid: corpus.valid.clone(),
        test: corpus.test.clone(),
    })
}

/// Select fine-tuning examples for the new-domain protocol: `n_in` seeded
/// in-domain training examples plus `n_out` out-of-domain ones, and the
/// indices of the in-domain evaluation examples. Operates on the per-example
/// domain tags so it works for any downstream task.
pub fn domain_split_indices(
    train_domains: &[&BTreeSet<String>],
    eval_domains: &[&BTreeSet<String>],
    target_domain: &str,
    n_in: usize,
    n_out: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut in_domain: Vec<usize> = Vec::new();
    let mut out_domain: Vec<usize> = Vec::new();
    for (i, domains) in train_domains.iter().enumerate() {
        if domains.contains(target_domain) {
            in_domain.push(i);
        } else {
            out_domain.push(i);
        }
    }
    if in_domain.len() < n_in {
        return Err(Error::InsufficientExamples {
            kind: "in-domain training examples",
            need: n_in,
            have: in_domain.len(),
        });
    }
    if out_domain.len() < n_out {
        return Err(Error::InsufficientExamples {
            kind: "out-of-domain training examples",
            need: n_out,
            have: out_domain.len(),
        });
    }
    let mut rng = crate::rng::stream(seed, "domain-split", 0);
    in_domain.shuffle(&mut rng);
    out_domain.shuffle(&mut rng);
    let mut train: Vec<usize> = in_domain[..n_in]
        .iter()
        .chain(&out_domain[..n_out])
        .copied()
        .collect();
    train.sort_unstable();
    let eval: Vec<usize> = eval_domains
        .iter()
        .enumerate()
        .filter(|(_, d)| d.contains(target_domain))
        .map(|(i, _)| i)
        .collect();
    Ok((train, eval))
}

/// All encoded utterances of a set of dialogs, for pretraining pools.
pub fn all_utterances(dialogs: &[Dialog], vocab: &super::Vocabulary) -> Vec<Vec<u32>> {
    dialogs
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| vocab.encode(&t.tokens)))
        .collect()
}

/// System-side utterances only, for downstream retrieval pools.
pub fn system_utterances(dialogs: &[Dialog], vocab: &super::Vocabulary) -> Vec<Vec<u32>> {
    dialogs
        .iter()
        .flat_map(|d| {
            d.turns
                .iter()
                .filter(|t| t.speaker == super::Speaker::System)
                .map(|t| vocab.encode(&t.tokens))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_dialog(id: &str, domain: &str) -> Dialog {
        Dialog {
            id: id.to_string(),
            domains: [domain.to_string()].into_iter().collect(),
            turns: vec![
                super::super::Turn {
                    speaker: super::super::Speaker::User,
                    tokens: vec![id.to_string()],
                    belief: None,
                    acts: None,
                },
                super::super::Turn {
                    speaker: super::super::Speaker::System,
                    tokens: vec!["ok".to_string()],
                    belief: None,
                    acts: None,
                },
            ],
        }
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus {
            train: (0..n).map(|i| make_dialog(&format!("d{i}"), "hotel")).collect(),
            valid: vec![],
            test: vec![],
        }
    }

    #[test]
    fn sampler_excludes_ground_truth() {
        let sampler = NegativeSampler::new(vec![vec![1, 2], vec![3, 4]]);
        let mut rng = crate::rng::stream(0, "neg", 0);
        for _ in 0..50 {
            let got = sampler.sample(1, &[1, 2], &mut rng).unwrap();
            assert_eq!(got, vec![vec![3, 4]]);
        }
    }

    #[test]
    fn sampler_rejects_tiny_pool_and_allows_k_zero() {
        let sampler = NegativeSampler::new(vec![vec![1]]);
        let mut rng = crate::rng::stream(0, "neg", 0);
        assert!(sampler.sample(1, &[9], &mut rng).is_err());
        assert!(sampler.sample(0, &[9], &mut rng).unwrap().is_empty());
    }

    #[test]
    fn sampler_is_empirically_uniform() {
        // 1e5 draws from a 10-item pool with one excluded item: each of the
        // 9 others should land within 3 sigma of 1/9.
        let pool: Vec<Vec<u32>> = (0..10u32).map(|i| vec![i]).collect();
        let sampler = NegativeSampler::new(pool);
        let mut rng = crate::rng::stream(42, "neg-uniform", 0);
        let mut counts = [0usize; 10];
        let n = 100_000;
        for _ in 0..n {
            let got = sampler.sample(1, &[0], &mut rng).unwrap();
            counts[got[0][0] as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / 9.0;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for &c in &counts[1..] {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "freq {freq} vs expected {p}"
            );
        }
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let corpus = corpus_of(7);
        let sub = subsample(&corpus, 1.0, 3).unwrap();
        assert_eq!(sub.train.len(), 7);
        let ids: Vec<&str> = sub.train.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["d0", "d1", "d2", "d3", "d4", "d5", "d6"]);
    }

    #[test]
    fn subsample_uses_ceiling_arithmetic() {
        let corpus = corpus_of(8422);
        let sub = subsample(&corpus, 0.01, 1).unwrap();
        assert_eq!(sub.train.len(), 85);
    }

    #[test]
    fn subsample_is_deterministic_and_a_subset() {
        let corpus = corpus_of(50);
        let a = subsample(&corpus, 0.3, 9).unwrap();
        let b = subsample(&corpus, 0.3, 9).unwrap();
        let ids_a: Vec<&str> = a.train.iter().map(|d| d.id.as_str()).collect();
        let ids_b: Vec<&str> = b.train.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids_a, ids_b);
        let all: BTreeSet<&str> = corpus.train.iter().map(|d| d.id.as_str()).collect();
        assert!(ids_a.iter().all(|id| all.contains(id)));
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let corpus = corpus_of(3);
        assert!(subsample(&corpus, 0.0, 1).is_err());
        assert!(subsample(&corpus, 1.5, 1).is_err());
    }

    #[test]
    fn domain_split_counts_and_eval_filter() {
        let restaurant: BTreeSet<String> = ["restaurant".to_string()].into_iter().collect();
        let hotel: BTreeSet<String> = ["hotel".to_string()].into_iter().collect();
        let train: Vec<&BTreeSet<String>> = (0..100)
            .map(|i| if i % 2 == 0 { &restaurant } else { &hotel })
            .collect();
        let eval: Vec<&BTreeSet<String>> =
            vec![&restaurant, &hotel, &restaurant, &hotel, &restaurant];
        let (tr, ev) = domain_split_indices(&train, &eval, "restaurant", 10, 20, 5).unwrap();
        assert_eq!(tr.len(), 30);
        assert_eq!(ev, vec![0, 2, 4]);
        let in_count = tr.iter().filter(|&&i| i % 2 == 0).count();
        assert_eq!(in_count, 10);

        // n_in = 0 trains purely out-of-domain.
        let (tr0, _) = domain_split_indices(&train, &eval, "restaurant", 0, 20, 5).unwrap();
        assert_eq!(tr0.len(), 20);
        assert!(tr0.iter().all(|&i| i % 2 == 1));

        let err = domain_split_indices(&train, &eval, "restaurant", 51, 0, 5).unwrap_err();
        assert!(err.to_string().contains("have 50"), "{err}");
    }
}

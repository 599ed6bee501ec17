//! The four unsupervised pretraining objectives and the pretraining loop.
//!
//! All four share the hierarchical context encoder. The retrieval-style
//! losses score candidates by dot product against a context state and apply
//! a softmax cross-entropy over the candidate set; generation factors the
//! next utterance into per-token terms via the decoder.

use crate::data::{
    all_utterances, make_pretrain_segments, Corpus, NegativeSampler, Segment, Vocabulary,
};
use crate::encoder::{
    encode_context, encode_response, decode_teacher_forced, Components, DialogModel, ForwardMode,
};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Real;
use crate::training::{run_training, BatchRngs, EpochLog, PipelineConfig, SelectBy, TrainOutcome};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

/// Fixed stream id for validation-time sampling, so validation items are
/// identical across epochs, runs, and models.
const VALID_STREAM: u64 = 0xDA7A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Next-utterance retrieval.
    Nur,
    /// Next-utterance generation.
    Nug,
    /// Masked-utterance retrieval.
    Mur,
    /// Inconsistency identification.
    Ini,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Nur,
        Objective::Nug,
        Objective::Mur,
        Objective::Ini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Nur => "nur",
            Objective::Nug => "nug",
            Objective::Mur => "mur",
            Objective::Ini => "ini",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "nur" => Some(Objective::Nur),
            "nug" => Some(Objective::Nug),
            "mur" => Some(Objective::Mur),
            "ini" => Some(Objective::Ini),
            _ => None,
        }
    }

    pub fn components(self) -> Components {
        Components {
            response_encoder: matches!(self, Objective::Nur | Objective::Mur),
            decoder: matches!(self, Objective::Nug),
            ..Components::default()
        }
    }
}

/// A segment with one utterance replaced by a negative-pool draw.
#[derive(Debug, Clone)]
pub struct CorruptedSegment {
    /// The prefix with position `index` replaced.
    pub utterances: Vec<Vec<u32>>,
    /// Replaced position, 0-based.
    pub index: usize,
    /// The utterance that was replaced.
    pub original: Vec<u32>,
    /// What it was replaced with (never equal to `original`).
    pub replacement: Vec<u32>,
}

/// Replace a uniformly chosen position with a draw from the negative
/// distribution. The input segment is untouched; the replacement never
/// equals the original utterance.
pub fn corrupt_segment(
    segment: &Segment,
    sampler: &NegativeSampler,
    rng: &mut ChaCha20Rng,
) -> Result<CorruptedSegment> {
    let len = segment.len();
    if len < 2 {
        return Err(Error::InvalidArgument(
            "corruption needs a segment of at least 2 utterances".into(),
        ));
    }
    let index = rng.gen_range(0..len);
    let original = segment.full()[index].clone();
    let replacement = sampler.sample(1, &original, rng)?.pop().unwrap();
    let mut utterances = segment.full().to_vec();
    utterances[index] = replacement.clone();
    Ok(CorruptedSegment {
        utterances,
        index,
        original,
        replacement,
    })
}

/// A scalar loss plus the detached candidate scores that produced it.
#[derive(Debug)]
pub struct ScoredLoss {
    pub loss: Var,
    pub scores: Vec<f64>,
}

/// Softmax cross-entropy over a score vector with the target at
/// `target_index`; log-sum-exp is computed stably inside `log_softmax`.
fn cross_entropy_over_scores<F: Real>(
    tape: &mut Tape<F>,
    scores: &[Var],
    target_index: usize,
) -> Result<ScoredLoss> {
    let stacked = tape.concat(scores)?;
    let detached = tape.values(stacked).iter().map(|v| v.as_f64()).collect();
    let log_probs = tape.log_softmax(stacked)?;
    let picked = tape.slice(log_probs, target_index, 1)?;
    let loss = tape.scale(picked, -F::one());
    Ok(ScoredLoss {
        loss,
        scores: detached,
    })
}

fn score_candidates<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    state: Var,
    ground_truth: &[u32],
    negatives: &[Vec<u32>],
    mode: &mut ForwardMode,
) -> Result<Vec<Var>> {
    if negatives.is_empty() {
        return Err(Error::Config(
            "retrieval losses need at least one negative candidate".into(),
        ));
    }
    let mut scores = Vec::with_capacity(negatives.len() + 1);
    let r_gt = encode_response(tape, model, ground_truth, mode)?;
    scores.push(tape.dot(state, r_gt)?);
    for negative in negatives {
        let r = encode_response(tape, model, negative, mode)?;
        scores.push(tape.dot(state, r)?);
    }
    Ok(scores)
}

/// Next-utterance retrieval: score the true next utterance against `K`
/// negatives using the final context state.
pub fn nur_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    context: &[Vec<u32>],
    ground_truth: &[u32],
    negatives: &[Vec<u32>],
    mode: &mut ForwardMode,
) -> Result<ScoredLoss> {
    let states = encode_context(tape, model, context, mode)?;
    let state = *states.last().unwrap();
    let scores = score_candidates(tape, model, state, ground_truth, negatives, mode)?;
    cross_entropy_over_scores(tape, &scores, 0)
}

/// Masked-utterance retrieval: with position `t` replaced, retrieve the
/// original utterance using the corrupted context's state at `t`.
pub fn mur_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    corrupted: &CorruptedSegment,
    negatives: &[Vec<u32>],
    mode: &mut ForwardMode,
) -> Result<ScoredLoss> {
    let states = encode_context(tape, model, &corrupted.utterances, mode)?;
    let state = states[corrupted.index];
    let scores = score_candidates(tape, model, state, &corrupted.original, negatives, mode)?;
    cross_entropy_over_scores(tape, &scores, 0)
}

/// Inconsistency identification: classify which position was replaced by
/// dot products of the final state against every position's state. The
/// score set deliberately includes the final position's self-similarity,
/// exactly as the objective is defined.
pub fn ini_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    corrupted: &CorruptedSegment,
    mode: &mut ForwardMode,
) -> Result<ScoredLoss> {
    let states = encode_context(tape, model, &corrupted.utterances, mode)?;
    let last = *states.last().unwrap();
    let scores = states
        .iter()
        .map(|&s| tape.dot(last, s))
        .collect::<Result<Vec<_>>>()?;
    cross_entropy_over_scores(tape, &scores, corrupted.index)
}

#[derive(Debug)]
pub struct GenerationLoss {
    /// Negative sum of target-token log-probabilities.
    pub loss: Var,
    /// Number of predicted tokens (end marker included), for per-token
    /// reporting.
    pub tokens: usize,
}

/// Next-utterance generation: teacher-forced negative log-likelihood of the
/// target, summed over tokens.
pub fn nug_loss<F: Real>(
    tape: &mut Tape<F>,
    model: &DialogModel<F>,
    context: &[Vec<u32>],
    target: &[u32],
    mode: &mut ForwardMode,
) -> Result<GenerationLoss> {
    if target.len() < 2 {
        return Err(Error::InvalidArgument(
            "generation target is empty".into(),
        ));
    }
    let states = encode_context(tape, model, context, mode)?;
    let state = *states.last().unwrap();
    let log_probs = decode_teacher_forced(tape, model, state, target, mode)?;
    let tokens = log_probs.len();
    let stacked = tape.concat(&log_probs)?;
    let total = tape.sum(stacked);
    Ok(GenerationLoss {
        loss: tape.scale(total, -F::one()),
        tokens,
    })
}

/// Pretraining result: the best-validation model plus the loss trace.
pub struct PretrainOutcome<F: Real> {
    pub model: DialogModel<F>,
    pub vocab: Vocabulary,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

/// Train one objective on the corpus. Negatives and corruption points are
/// resampled every epoch from seeded streams; validation uses streams fixed
/// across epochs and models, and the checkpointed parameters are those of
/// the epoch with the lowest validation loss.
pub fn pretrain<F: Real>(
    objective: Objective,
    corpus: &Corpus,
    config: &PipelineConfig,
    seed: u64,
) -> Result<PretrainOutcome<F>> {
    let vocab = Vocabulary::build(corpus, config.vocab_size);
    let train_segments = make_pretrain_segments(&corpus.train, &vocab);
    if train_segments.is_empty() {
        return Err(Error::InsufficientExamples {
            kind: "pretraining segments",
            need: 1,
            have: 0,
        });
    }
    let valid_segments = make_pretrain_segments(&corpus.valid, &vocab);
    let pool = NegativeSampler::new(all_utterances(&corpus.train, &vocab));
    let mut model = DialogModel::new(config.dims(vocab.len()), objective.components(), seed);

    // Validation items are built once with fixed streams.
    let valid_items: Vec<ValidItem> = valid_segments
        .iter()
        .enumerate()
        .map(|(i, segment)| ValidItem::build(objective, segment, &pool, config, i as u64))
        .collect::<Result<Vec<_>>>()?;

    let k = config.k_negatives;
    let dropout = config.dropout;
    let outcome: TrainOutcome = run_training(
        &mut model,
        train_segments.len(),
        config,
        seed,
        SelectBy::MinValid,
        |model, tape, batch, rngs: &mut BatchRngs| {
            let mut losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let segment = &train_segments[idx];
                let mut mode = ForwardMode::train(dropout, &mut rngs.dropout);
                let loss = match objective {
                    Objective::Nur => {
                        let negatives = pool.sample(k, segment.target(), &mut rngs.sampling)?;
                        nur_loss(
                            tape,
                            model,
                            segment.context(),
                            segment.target(),
                            &negatives,
                            &mut mode,
                        )?
                        .loss
                    }
                    Objective::Nug => {
                        nug_loss(tape, model, segment.context(), segment.target(), &mut mode)?
                            .loss
                    }
                    Objective::Mur => {
                        let corrupted = corrupt_segment(segment, &pool, &mut rngs.sampling)?;
                        let negatives =
                            pool.sample(k, &corrupted.original, &mut rngs.sampling)?;
                        mur_loss(tape, model, &corrupted, &negatives, &mut mode)?.loss
                    }
                    Objective::Ini => {
                        let corrupted = corrupt_segment(segment, &pool, &mut rngs.sampling)?;
                        ini_loss(tape, model, &corrupted, &mut mode)?.loss
                    }
                };
                losses.push(loss);
            }
            let stacked = tape.concat(&losses)?;
            Ok(tape.mean(stacked))
        },
        |model| validation_loss(model, &valid_items),
    )?;

    Ok(PretrainOutcome {
        model,
        vocab,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        best_valid_loss: outcome.best_value,
    })
}

/// Frozen validation example for one objective.
enum ValidItem {
    Retrieval {
        context: Vec<Vec<u32>>,
        target: Vec<u32>,
        negatives: Vec<Vec<u32>>,
    },
    Generation {
        context: Vec<Vec<u32>>,
        target: Vec<u32>,
    },
    Masked {
        corrupted: CorruptedSegment,
        negatives: Vec<Vec<u32>>,
    },
    Inconsistency {
        corrupted: CorruptedSegment,
    },
}

impl ValidItem {
    fn build(
        objective: Objective,
        segment: &Segment,
        pool: &NegativeSampler,
        config: &PipelineConfig,
        index: u64,
    ) -> Result<ValidItem> {
        let mut rng = crate::rng::stream(VALID_STREAM, "pretrain-valid", index);
        Ok(match objective {
            Objective::Nur => ValidItem::Retrieval {
                context: segment.context().to_vec(),
                target: segment.target().clone(),
                negatives: pool.sample(config.k_negatives, segment.target(), &mut rng)?,
            },
            Objective::Nug => ValidItem::Generation {
                context: segment.context().to_vec(),
                target: segment.target().clone(),
            },
            Objective::Mur => {
                let corrupted = corrupt_segment(segment, pool, &mut rng)?;
                let negatives = pool.sample(config.k_negatives, &corrupted.original, &mut rng)?;
                ValidItem::Masked {
                    corrupted,
                    negatives,
                }
            }
            Objective::Ini => ValidItem::Inconsistency {
                corrupted: corrupt_segment(segment, pool, &mut rng)?,
            },
        })
    }
}

/// Mean loss over the frozen validation items, in eval mode.
fn validation_loss<F: Real>(model: &DialogModel<F>, items: &[ValidItem]) -> Result<f64> {
    if items.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for item in items {
        let mut tape = Tape::no_grad();
        let mut mode = ForwardMode::eval();
        let loss = match item {
            ValidItem::Retrieval {
                context,
                target,
                negatives,
            } => nur_loss(&mut tape, model, context, target, negatives, &mut mode)?.loss,
            ValidItem::Generation { context, target } => {
                nug_loss(&mut tape, model, context, target, &mut mode)?.loss
            }
            ValidItem::Masked {
                corrupted,
                negatives,
            } => mur_loss(&mut tape, model, corrupted, negatives, &mut mode)?.loss,
            ValidItem::Inconsistency { corrupted } => {
                ini_loss(&mut tape, model, corrupted, &mut mode)?.loss
            }
        };
        total += tape.scalar(loss).as_f64();
    }
    let mean = total / items.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Train(format!("non-finite validation loss {mean}")));
    }
    Ok(mean)
}

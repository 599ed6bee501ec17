//! Pretraining segments and downstream task examples.

use super::schema::{encode_acts, BeliefSchema};
use super::vocab::Vocabulary;
use super::{Dialog, Speaker};
use std::collections::BTreeSet;

/// A dialog prefix `[u_1 .. u_T]` of encoded utterances. Objectives that
/// predict the last utterance read `context()`/`target()`; objectives that
/// corrupt the prefix read `full()`.
#[derive(Debug, Clone)]
pub struct Segment {
    utterances: Vec<Vec<u32>>,
}

impl Segment {
    pub fn new(utterances: Vec<Vec<u32>>) -> Self {
        Segment { utterances }
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// All utterances but the last.
    pub fn context(&self) -> &[Vec<u32>] {
        &self.utterances[..self.utterances.len() - 1]
    }

    /// The final utterance.
    pub fn target(&self) -> &Vec<u32> {
        self.utterances.last().unwrap()
    }

    /// The whole prefix.
    pub fn full(&self) -> &[Vec<u32>] {
        &self.utterances
    }
}

/// One segment per prefix length `T in [2, n]` per dialog.
pub fn make_pretrain_segments(dialogs: &[Dialog], vocab: &Vocabulary) -> Vec<Segment> {
    let mut out = Vec::new();
    for dialog in dialogs {
        let encoded: Vec<Vec<u32>> = dialog
            .turns
            .iter()
            .map(|t| vocab.encode(&t.tokens))
            .collect();
        for t in 2..=encoded.len() {
            out.push(Segment::new(encoded[..t].to_vec()));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BspExample {
    /// Context up to and including the labeled user turn.
    pub context: Vec<Vec<u32>>,
    /// Per-slot value indices, one per schema slot.
    pub targets: Vec<usize>,
    pub domains: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct DapExample {
    pub context: Vec<Vec<u32>>,
    pub target_bits: Vec<bool>,
    pub domains: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct RetrievalExample {
    pub context: Vec<Vec<u32>>,
    pub target: Vec<u32>,
    pub domains: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct GenExample {
    pub context: Vec<Vec<u32>>,
    pub target: Vec<u32>,
    pub domains: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub enum TaskExamples {
    Bsp(Vec<BspExample>),
    Dap(Vec<DapExample>),
    Nur(Vec<RetrievalExample>),
    Nug(Vec<GenExample>),
}

impl TaskExamples {
    pub fn len(&self) -> usize {
        match self {
            TaskExamples::Bsp(v) => v.len(),
            TaskExamples::Dap(v) => v.len(),
            TaskExamples::Nur(v) => v.len(),
            TaskExamples::Nug(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domains(&self, i: usize) -> &BTreeSet<String> {
        match self {
            TaskExamples::Bsp(v) => &v[i].domains,
            TaskExamples::Dap(v) => &v[i].domains,
            TaskExamples::Nur(v) => &v[i].domains,
            TaskExamples::Nug(v) => &v[i].domains,
        }
    }

    pub fn select(&self, indices: &[usize]) -> TaskExamples {
        match self {
            TaskExamples::Bsp(v) => {
                TaskExamples::Bsp(indices.iter().map(|&i| v[i].clone()).collect())
            }
            TaskExamples::Dap(v) => {
                TaskExamples::Dap(indices.iter().map(|&i| v[i].clone()).collect())
            }
            TaskExamples::Nur(v) => {
                TaskExamples::Nur(indices.iter().map(|&i| v[i].clone()).collect())
            }
            TaskExamples::Nug(v) => {
                TaskExamples::Nug(indices.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DownstreamTask {
    Bsp,
    Dap,
    Nur,
    Nug,
}

impl DownstreamTask {
    pub const ALL: [DownstreamTask; 4] = [
        DownstreamTask::Bsp,
        DownstreamTask::Dap,
        DownstreamTask::Nur,
        DownstreamTask::Nug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DownstreamTask::Bsp => "bsp",
            DownstreamTask::Dap => "dap",
            DownstreamTask::Nur => "nur",
            DownstreamTask::Nug => "nug",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "bsp" => Some(DownstreamTask::Bsp),
            "dap" => Some(DownstreamTask::Dap),
            "nur" => Some(DownstreamTask::Nur),
            "nug" => Some(DownstreamTask::Nug),
            _ => None,
        }
    }

    pub fn metric_name(self) -> &'static str {
        match self {
            DownstreamTask::Bsp | DownstreamTask::Dap => "f1",
            DownstreamTask::Nur => "hits1",
            DownstreamTask::Nug => "bleu4",
        }
    }
}

/// Build the labeled examples for one downstream task. Belief prediction
/// emits one example per labeled user turn (context includes that turn);
/// the other tasks emit one example per system turn (context is everything
/// before it). Returns the examples plus the number of turns skipped for
/// missing labels.
pub fn make_downstream_examples(
    dialogs: &[Dialog],
    task: DownstreamTask,
    vocab: &Vocabulary,
    schema: &BeliefSchema,
) -> (TaskExamples, usize) {
    let mut skipped = 0;
    let mut bsp = Vec::new();
    let mut dap = Vec::new();
    let mut nur = Vec::new();
    let mut nug = Vec::new();
    for dialog in dialogs {
        let encoded: Vec<Vec<u32>> = dialog
            .turns
            .iter()
            .map(|t| vocab.encode(&t.tokens))
            .collect();
        for (i, turn) in dialog.turns.iter().enumerate() {
            match task {
                DownstreamTask::Bsp => {
                    if turn.speaker != Speaker::User {
                        continue;
                    }
                    match &turn.belief {
                        Some(belief) => bsp.push(BspExample {
                            context: encoded[..=i].to_vec(),
                            targets: schema.encode_belief(Some(belief)),
                            domains: dialog.domains.clone(),
                        }),
                        None => skipped += 1,
                    }
                }
                DownstreamTask::Dap => {
                    if turn.speaker != Speaker::System {
                        continue;
                    }
                    match &turn.acts {
                        Some(acts) => dap.push(DapExample {
                            context: encoded[..i].to_vec(),
                            target_bits: encode_acts(acts),
                            domains: dialog.domains.clone(),
                        }),
                        None => skipped += 1,
                    }
                }
                DownstreamTask::Nur => {
                    if turn.speaker != Speaker::System {
                        continue;
                    }
                    nur.push(RetrievalExample {
                        context: encoded[..i].to_vec(),
                        target: encoded[i].clone(),
                        domains: dialog.domains.clone(),
                    });
                }
                DownstreamTask::Nug => {
                    if turn.speaker != Speaker::System {
                        continue;
                    }
                    nug.push(GenExample {
                        context: encoded[..i].to_vec(),
                        target: encoded[i].clone(),
                        domains: dialog.domains.clone(),
                    });
                }
            }
        }
    }
    let examples = match task {
        DownstreamTask::Bsp => TaskExamples::Bsp(bsp),
        DownstreamTask::Dap => TaskExamples::Dap(dap),
        DownstreamTask::Nur => TaskExamples::Nur(nur),
        DownstreamTask::Nug => TaskExamples::Nug(nug),
    };
    (examples, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bucket {
    Short,
    Medium,
    Long,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Short, Bucket::Medium, Bucket::Long];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Short => "short",
            Bucket::Medium => "medium",
            Bucket::Long => "long",
        }
    }
}

/// Context-length bands: fewer than 3 utterances, 3 to 6, and 7 or more.
pub fn context_length_bucket(context_len: usize) -> Bucket {
    debug_assert!(context_len >= 1);
    if context_len < 3 {
        Bucket::Short
    } else if context_len < 7 {
        Bucket::Medium
    } else {
        Bucket::Long
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{corpus_from_json, Corpus};

    fn four_turn_corpus() -> Corpus {
        let schema = BeliefSchema::multiwoz();
        let json = r#"{"train":[{"id":"d","domains":["restaurant"],"turns":[
            {"speaker":"user","text":"i want cheap food","belief":{"restaurant-pricerange":"cheap"}},
            {"speaker":"system","text":"sure , what area ?","acts":["Restaurant-Request"]},
            {"speaker":"user","text":"the centre please","belief":{"restaurant-pricerange":"cheap","restaurant-area":"centre"}},
            {"speaker":"system","text":"how about the golden wok ?","acts":["Restaurant-Recommend"]}]}],
            "valid":[],"test":[]}"#;
        corpus_from_json(json, &schema).unwrap().0
    }

    #[test]
    fn four_turn_dialog_gives_three_segments() {
        let corpus = four_turn_corpus();
        let vocab = Vocabulary::build(&corpus, 1000);
        let segments = make_pretrain_segments(&corpus.train, &vocab);
        assert_eq!(segments.len(), 3);
        assert_eq!(segments[0].len(), 2);
        assert_eq!(segments[2].len(), 4);
        assert_eq!(segments[2].context().len(), 3);
    }

    #[test]
    fn two_turn_dialog_gives_one_segment_and_empty_corpus_none() {
        let schema = BeliefSchema::multiwoz();
        let json = r#"{"train":[{"id":"d","domains":[],"turns":[
            {"speaker":"user","text":"hi"},{"speaker":"system","text":"hello"}]}],
            "valid":[],"test":[]}"#;
        let corpus = corpus_from_json(json, &schema).unwrap().0;
        let vocab = Vocabulary::build(&corpus, 1000);
        assert_eq!(make_pretrain_segments(&corpus.train, &vocab).len(), 1);
        assert!(make_pretrain_segments(&[], &vocab).is_empty());
    }

    #[test]
    fn downstream_counts_match_turn_roles() {
        let corpus = four_turn_corpus();
        let vocab = Vocabulary::build(&corpus, 1000);
        let schema = BeliefSchema::multiwoz();
        let (dap, _) =
            make_downstream_examples(&corpus.train, DownstreamTask::Dap, &vocab, &schema);
        assert_eq!(dap.len(), 2);
        let (bsp, _) =
            make_downstream_examples(&corpus.train, DownstreamTask::Bsp, &vocab, &schema);
        assert_eq!(bsp.len(), 2);
        let (nug, _) =
            make_downstream_examples(&corpus.train, DownstreamTask::Nug, &vocab, &schema);
        if let TaskExamples::Nug(examples) = &nug {
            assert_eq!(examples.len(), 2);
            assert_eq!(examples[0].context.len(), 1);
            assert_eq!(examples[1].context.len(), 3);
        } else {
            panic!("wrong variant");
        }
    }

    #[test]
    fn bsp_context_includes_the_user_turn() {
        let corpus = four_turn_corpus();
        let vocab = Vocabulary::build(&corpus, 1000);
        let schema = BeliefSchema::multiwoz();
        let (bsp, _) =
            make_downstream_examples(&corpus.train, DownstreamTask::Bsp, &vocab, &schema);
        if let TaskExamples::Bsp(examples) = &bsp {
            assert_eq!(examples[0].context.len(), 1);
            assert_eq!(examples[1].context.len(), 3);
            let si = schema.slot_index("restaurant-pricerange").unwrap();
            assert_ne!(examples[0].targets[si], 0);
        } else {
            panic!("wrong variant");
        }
    }

    #[test]
    fn unlabeled_turns_are_skipped_with_count() {
        let schema = BeliefSchema::multiwoz();
        let json = r#"{"train":[{"id":"d","domains":[],"turns":[
            {"speaker":"user","text":"hi"},{"speaker":"system","text":"hello"}]}],
            "valid":[],"test":[]}"#;
        let corpus = corpus_from_json(json, &schema).unwrap().0;
        let vocab = Vocabulary::build(&corpus, 1000);
        let (dap, skipped) =
            make_downstream_examples(&corpus.train, DownstreamTask::Dap, &vocab, &schema);
        assert_eq!(dap.len(), 0);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(context_length_bucket(1), Bucket::Short);
        assert_eq!(context_length_bucket(2), Bucket::Short);
        assert_eq!(context_length_bucket(3), Bucket::Medium);
        assert_eq!(context_length_bucket(6), Bucket::Medium);
        assert_eq!(context_length_bucket(7), Bucket::Long);
        assert_eq!(context_length_bucket(20), Bucket::Long);
    }

    #[test]
    fn segment_construction_is_pure() {
        let corpus = four_turn_corpus();
        let vocab = Vocabulary::build(&corpus, 1000);
        let a = make_pretrain_segments(&corpus.train, &vocab);
        let b = make_pretrain_segments(&corpus.train, &vocab);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.full(), y.full());
        }
    }
}

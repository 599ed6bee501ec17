//! Generate a synthetic dialog corpus and look at what the data pipeline
//! makes of it: vocabulary, pretraining segments, downstream examples,
//! context-length buckets.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example synthetic_corpus
//! ```

use dialog_pretrain::data::{
    context_length_bucket, generate_synthetic, make_downstream_examples, make_pretrain_segments,
    schema::BeliefSchema, DownstreamTask, SyntheticSpec, Vocabulary,
};

fn main() {
    let corpus = generate_synthetic(&SyntheticSpec {
        train: 50,
        valid: 10,
        test: 10,
        seed: 42,
    });
    println!(
        "dialogs: {} train / {} valid / {} test",
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len()
    );

    let sample = &corpus.train[0];
    println!("\nsample dialog {} (domains {:?}):", sample.id, sample.domains);
    for turn in &sample.turns {
        println!("  {:?}: {}", turn.speaker, turn.tokens.join(" "));
        if let Some(belief) = &turn.belief {
            println!("        belief: {belief:?}");
        }
        if let Some(acts) = &turn.acts {
            println!("        acts: {acts:?}");
        }
    }

    let vocab = Vocabulary::build(&corpus, 1000);
    println!("\nvocabulary size (reserved included): {}", vocab.len());

    let segments = make_pretrain_segments(&corpus.train, &vocab);
    println!("pretraining segments (one per prefix): {}", segments.len());

    let schema = BeliefSchema::multiwoz();
    for task in DownstreamTask::ALL {
        let (examples, skipped) =
            make_downstream_examples(&corpus.train, task, &vocab, &schema);
        println!("{} examples: {} (skipped {})", task.name(), examples.len(), skipped);
    }

    let mut buckets = [0usize; 3];
    for segment in &segments {
        match context_length_bucket(segment.context().len()) {
            dialog_pretrain::data::Bucket::Short => buckets[0] += 1,
            dialog_pretrain::data::Bucket::Medium => buckets[1] += 1,
            dialog_pretrain::data::Bucket::Long => buckets[2] += 1,
        }
    }
    println!(
        "\ncontext-length buckets over segments: short {} / medium {} / long {}",
        buckets[0], buckets[1], buckets[2]
    );
}

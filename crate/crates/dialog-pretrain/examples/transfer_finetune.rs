//! The transfer story end to end: pretrain next-utterance generation,
//! carry the context encoder into retrieval fine-tuning on a small data
//! fraction, and compare against a randomly initialized baseline.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example transfer_finetune
//! ```

use dialog_pretrain::checkpoint::{Checkpoint, Provenance};
use dialog_pretrain::data::schema::BeliefSchema;
use dialog_pretrain::data::{generate_synthetic, subsample, DownstreamTask, SyntheticSpec};
use dialog_pretrain::downstream::{finetune, DEFAULT_EVAL_SEED};
use dialog_pretrain::objectives::{pretrain, Objective};
use dialog_pretrain::training::PipelineConfig;

fn main() -> dialog_pretrain::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec {
        train: 120,
        valid: 30,
        test: 30,
        seed: 3,
    });
    let schema = BeliefSchema::multiwoz();
    let config = PipelineConfig {
        epochs: 8,
        vocab_size: 400,
        embed: 24,
        utt_hidden: 20,
        ctx_hidden: 20,
        dec_hidden: 20,
        batch_size: 8,
        dropout: 0.1,
        k_negatives: 3,
        hits_k: 10,
        ..PipelineConfig::default()
    };

    println!("pretraining next-utterance generation on the full corpus...");
    let pre = pretrain::<f64>(Objective::Nug, &corpus, &config, 1)?;
    let ckpt = Checkpoint::from_model(
        &pre.model,
        &pre.vocab,
        Provenance {
            kind: "pretrain".into(),
            objective: Some("nug".into()),
            seed: 1,
            ..Default::default()
        },
    );

    // Both arms fine-tune retrieval on the same 10% of the dialogs.
    let small = subsample(&corpus, 0.1, 1)?;
    println!("fine-tuning retrieval on {} dialogs...", small.train.len());
    let baseline = finetune::<f64>(
        DownstreamTask::Nur,
        &small,
        None,
        &config,
        &schema,
        1,
        DEFAULT_EVAL_SEED,
    )?;
    let transferred = finetune::<f64>(
        DownstreamTask::Nur,
        &small,
        Some(&ckpt),
        &config,
        &schema,
        1,
        DEFAULT_EVAL_SEED,
    )?;

    println!("\nepoch  baseline-hits@1  pretrained-hits@1");
    for (b, t) in baseline.log.iter().zip(&transferred.log) {
        println!("{:>5}  {:>15.4}  {:>17.4}", b.epoch, b.valid_value, t.valid_value);
    }
    println!(
        "\ntest Hits@1: baseline {:.4} vs nug-pretrained {:.4}",
        baseline.test_value, transferred.test_value
    );
    Ok(())
}

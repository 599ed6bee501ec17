//! Pretrain the inconsistency-identification objective on a synthetic
//! corpus, watch the loss trace, and round-trip the checkpoint.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example pretrain_objective
//! ```

use dialog_pretrain::checkpoint::{Checkpoint, Provenance};
use dialog_pretrain::data::{generate_synthetic, SyntheticSpec};
use dialog_pretrain::objectives::{pretrain, Objective};
use dialog_pretrain::training::PipelineConfig;

fn main() -> dialog_pretrain::Result<()> {
    let corpus = generate_synthetic(&SyntheticSpec {
        train: 60,
        valid: 15,
        test: 0,
        seed: 5,
    });
    let config = PipelineConfig {
        epochs: 5,
        vocab_size: 400,
        embed: 24,
        utt_hidden: 16,
        ctx_hidden: 16,
        dec_hidden: 16,
        batch_size: 8,
        dropout: 0.1,
        k_negatives: 3,
        ..PipelineConfig::default()
    };

    let outcome = pretrain::<f64>(Objective::Ini, &corpus, &config, 1)?;
    println!("parameters: {}", outcome.model.store.total_scalars());
    println!("epoch  train-loss  valid-loss");
    for entry in &outcome.log {
        println!(
            "{:>5}  {:>10.4}  {:>10.4}",
            entry.epoch, entry.train_loss, entry.valid_value
        );
    }
    println!(
        "best epoch {} with validation loss {:.4}",
        outcome.best_epoch, outcome.best_valid_loss
    );

    let dir = std::env::temp_dir().join("dialog-pretrain-example");
    let path = dir.join("ini.ckpt");
    let ckpt = Checkpoint::from_model(
        &outcome.model,
        &outcome.vocab,
        Provenance {
            kind: "pretrain".into(),
            objective: Some("ini".into()),
            seed: 1,
            best_epoch: outcome.best_epoch,
            best_value: outcome.best_valid_loss,
            ..Default::default()
        },
    );
    ckpt.save(&path)?;
    let loaded = Checkpoint::<f64>::load(&path)?;
    let original = outcome.model.store.snapshot();
    let restored = loaded.to_model()?.store.snapshot();
    assert_eq!(original, restored, "checkpoint round trip must be bit-exact");
    println!("checkpoint round trip verified at {}", path.display());
    Ok(())
}

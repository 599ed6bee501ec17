//! The evaluation metrics on worked examples: corpus BLEU-4 with hand-
//! counted n-gram precisions, belief and act F-1, and the Hits@1 behavior
//! of a random scorer.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example metrics_tour
//! ```

use dialog_pretrain::data::schema::BeliefSchema;
use dialog_pretrain::downstream::metrics::{bleu4, f1_acts, f1_belief, hits_at_1};
use rand::Rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}

fn main() -> dialog_pretrain::Result<()> {
    // BLEU-4: "a b c d e" vs "a b c d f" has modified precisions
    // 4/5, 3/4, 2/3, 1/2, no brevity penalty -> (0.2)^(1/4).
    let hyp = vec![toks("a b c d e")];
    let reference = vec![toks("a b c d f")];
    let bleu = bleu4(&hyp, &reference)?;
    println!("bleu4 hand example: {bleu:.4} (expected {:.4})", 0.2f64.powf(0.25));

    // Belief F-1 with one agreement, one spurious value, one miss.
    let schema = BeliefSchema::multiwoz();
    let mut pred = vec![0usize; schema.num_slots()];
    let mut gold = vec![0usize; schema.num_slots()];
    pred[0] = 3;
    gold[0] = 3; // true positive
    pred[1] = 2; // false positive
    gold[2] = 4; // false negative
    println!(
        "belief F-1 (1 TP, 1 FP, 1 FN): {}",
        f1_belief(&[pred], &[gold], &schema)
    );

    // Act F-1: predicted {a}, gold {a, b}.
    let mut pred = vec![false; 32];
    let mut gold = vec![false; 32];
    pred[0] = true;
    gold[0] = true;
    gold[1] = true;
    println!("act F-1 (predicted one of two): {:.4}", f1_acts(&[pred], &[gold]));

    // Hits@1 of a random scorer over k = 10 candidates approaches 1/k.
    let mut rng = dialog_pretrain::rng::stream(1, "metrics-tour", 0);
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..10).map(|_| rng.gen::<f64>()).collect())
        .collect();
    println!("random-scorer Hits@1 over 10k examples: {:.4}", hits_at_1(&rows));
    Ok(())
}

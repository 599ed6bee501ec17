//! Inspect the built-in MultiWoz belief schema: 29 slots across 6 domains
//! flattening to a 1784-dimensional concatenated one-hot target, plus the
//! 32-entry system act inventory.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example belief_schema
//! ```

use dialog_pretrain::data::schema::{BeliefSchema, ACT_INVENTORY};

fn main() {
    let schema = BeliefSchema::multiwoz();
    println!("{} slots, total dimension {}", schema.num_slots(), schema.total_dim());
    println!();
    println!("{:<12} {:<14} {:>6} {:>8}", "domain", "slot", "dim", "offset");
    for i in 0..schema.num_slots() {
        let slot = schema.slot(i);
        println!(
            "{:<12} {:<14} {:>6} {:>8}",
            slot.domain,
            slot.slot,
            schema.dim(i),
            schema.offset(i)
        );
    }
    println!();
    println!("per-domain block widths:");
    for (domain, width) in schema.domain_dims() {
        println!("  {domain:<12} {width}");
    }
    println!();
    println!("system act inventory ({} entries):", ACT_INVENTORY.len());
    for act in ACT_INVENTORY {
        println!("  {act}");
    }
}

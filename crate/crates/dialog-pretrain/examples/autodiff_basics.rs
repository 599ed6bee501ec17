//! Tour of the reverse-mode autodiff core: record a forward pass, run the
//! backward sweep, and verify the analytic gradients with finite
//! differences.
//!
//! ```bash
//! cargo run -p dialog-pretrain --example autodiff_basics
//! ```

use dialog_pretrain::gradcheck::{grad_check, GradCheckOptions};
use dialog_pretrain::tape::Tape;
use dialog_pretrain::tensor::{ParamStore, Tensor};

fn main() -> dialog_pretrain::Result<()> {
    // A two-layer scoring function: loss = -log_softmax(W2 tanh(W1 x))[0].
    let mut store = ParamStore::<f64>::new();
    let w1 = store.add(
        "w1",
        Tensor::new(vec![3, 2], vec![0.5, -0.2, 0.1, 0.8, -0.6, 0.3])?,
    );
    let w2 = store.add(
        "w2",
        Tensor::new(vec![2, 3], vec![0.2, -0.4, 0.7, -0.1, 0.5, -0.3])?,
    );

    let mut tape = Tape::new();
    let w1v = tape.param(&store, w1);
    let w2v = tape.param(&store, w2);
    let x = tape.constant(vec![1.0, -1.0], vec![2]);
    let h = tape.matmul(w1v, x)?;
    let h = tape.tanh(h);
    let logits = tape.matmul(w2v, h)?;
    let log_probs = tape.log_softmax(logits)?;
    let picked = tape.slice(log_probs, 0, 1)?;
    let loss = tape.scale(picked, -1.0);
    println!("forward: loss = {:.6}", tape.scalar(loss));

    tape.backward(loss)?;
    tape.write_param_grads(&mut store);
    println!("gradient of w1: {:?}", store.get(w1).grad.as_ref().unwrap());
    println!("gradient of w2: {:?}", store.get(w2).grad.as_ref().unwrap());

    // Central-difference verification of the same function.
    let err = grad_check(&mut store, &GradCheckOptions::default(), |s, grads| {
        let mut tape = Tape::new();
        let w1v = tape.param(s, s.by_name("w1").unwrap());
        let w2v = tape.param(s, s.by_name("w2").unwrap());
        let x = tape.constant(vec![1.0, -1.0], vec![2]);
        let h = tape.matmul(w1v, x)?;
        let h = tape.tanh(h);
        let logits = tape.matmul(w2v, h)?;
        let log_probs = tape.log_softmax(logits)?;
        let picked = tape.slice(log_probs, 0, 1)?;
        let loss = tape.scale(picked, -1.0);
        if grads {
            tape.backward(loss)?;
            tape.write_param_grads(s);
        }
        Ok(tape.scalar(loss))
    })?;
    println!("max relative error vs finite differences: {err:.2e}");
    assert!(err < 1e-6);
    Ok(())
}

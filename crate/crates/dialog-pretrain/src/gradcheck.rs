//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Coordinates sampled per parameter tensor (all, if fewer).
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            max_coords_per_param: 24,
            seed: 02_2019,
        }
    }
}

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must be a deterministic scalar function of the store's
/// parameters. It is called once with `with_grads = true` (and must then
/// leave gradients in the store's grad slots) and twice per sampled
/// coordinate with `with_grads = false`. Returns the maximum of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over sampled
/// coordinates.
pub fn grad_check<F: Real>(
    store: &mut ParamStore<F>,
    opts: &GradCheckOptions,
    mut loss_fn: impl FnMut(&mut ParamStore<F>, bool) -> Result<F>,
) -> Result<f64> {
    store.zero_grads();
    let base = loss_fn(store, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check base loss".into(),
        });
    }
    let analytic: Vec<Vec<F>> = store
        .ids()
        .map(|id| {
            store
                .get(id)
                .grad
                .clone()
                .unwrap_or_else(|| vec![F::zero(); store.get(id).numel()])
        })
        .collect();

    let eps = opts.epsilon;
    let mut rng = crate::rng::stream(opts.seed, "grad-check", 0);
    let mut max_err = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        if !store.get(id).requires_grad {
            continue;
        }
        let numel = store.get(id).numel();
        let coords: Vec<usize> = if numel <= opts.max_coords_per_param {
            (0..numel).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < opts.max_coords_per_param {
                picked.insert(rng.gen_range(0..numel));
            }
            picked.into_iter().collect()
        };
        for c in coords {
            let original = store.get(id).values[c];
            store.get_mut(id).values[c] = original + F::from_f64c(eps);
            let plus = loss_fn(store, false)?.as_f64();
            store.get_mut(id).values[c] = original - F::from_f64c(eps);
            let minus = loss_fn(store, false)?.as_f64();
            store.get_mut(id).values[c] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check perturbation of {}", store.name(id)),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[id.0][c].as_f64();
            let err = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn linear_function_checks_to_machine_precision() {
        let mut store = ParamStore::<f64>::new();
        store.add(
            "w",
            Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap(),
        );
        let err = grad_check(&mut store, &GradCheckOptions::default(), |s, grads| {
            let mut tape = Tape::new();
            let w = tape.param(s, s.by_name("w").unwrap());
            let coeff = tape.constant(vec![2.0, -1.0, 0.5], vec![3]);
            let prod = tape.multiply(w, coeff)?;
            let loss = tape.sum(prod);
            if grads {
                tape.backward(loss)?;
                tape.write_param_grads(s);
            }
            Ok(tape.scalar(loss))
        })
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }

    #[test]
    fn nonlinear_composite_checks_under_1e4() {
        let mut store = ParamStore::<f64>::new();
        store.add(
            "w",
            Tensor::new(vec![2, 2], vec![0.4, -0.3, 0.9, 0.1]).unwrap(),
        );
        store.add("b", Tensor::new(vec![2], vec![0.05, -0.2]).unwrap());
        let err = grad_check(&mut store, &GradCheckOptions::default(), |s, grads| {
            let mut tape = Tape::new();
            let w = tape.param(s, s.by_name("w").unwrap());
            let b = tape.param(s, s.by_name("b").unwrap());
            let x = tape.constant(vec![0.7, -1.1], vec![2]);
            let wx = tape.matmul(w, x)?;
            let z = tape.add(wx, b)?;
            let h = tape.tanh(z);
            let p = tape.log_softmax(h)?;
            let picked = tape.slice(p, 0, 1)?;
            let loss = tape.scale(picked, -1.0);
            if grads {
                tape.backward(loss)?;
                tape.write_param_grads(s);
            }
            Ok(tape.scalar(loss))
        })
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }
}

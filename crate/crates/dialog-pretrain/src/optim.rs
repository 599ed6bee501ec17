//! Adam with bias correction and global-norm gradient clipping.

use crate::tensor::{ParamStore, Real};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams<F: Real> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
}

impl<F: Real> AdamParams<F> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamParams {
            lr: F::from_f64c(lr),
            beta1: F::from_f64c(beta1),
            beta2: F::from_f64c(beta2),
            eps: F::from_f64c(eps),
        }
    }
}

impl<F: Real> Default for AdamParams<F> {
    fn default() -> Self {
        AdamParams::new(0.001, 0.9, 0.999, 1e-8)
    }
}

/// First/second moment estimates per parameter, plus the shared step count.
#[derive(Debug, Clone)]
pub struct AdamState<F: Real> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let m = store
            .ids()
            .map(|id| vec![F::zero(); store.get(id).numel()])
            .collect::<Vec<_>>();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Scale all gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm. Applying this twice equals applying it once.
pub fn clip_gradients<F: Real>(store: &mut ParamStore<F>, max_norm: F) -> F {
    let mut sq = F::zero();
    for id in store.ids() {
        if let Some(g) = &store.get(id).grad {
            for &v in g {
                sq = sq + v * v;
            }
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for id in store.ids() {
            if let Some(g) = &mut store.get_mut(id).grad {
                for v in g.iter_mut() {
                    *v = *v * factor;
                }
            }
        }
    }
    norm
}

/// One Adam update from the store's grad slots. Parameters without a grad
/// slot (or with `requires_grad == false`) are left untouched, including
/// their moment estimates.
pub fn adam_step<F: Real>(store: &mut ParamStore<F>, state: &mut AdamState<F>, hp: &AdamParams<F>) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = F::one() - hp.beta1.powi(t);
    let bc2 = F::one() - hp.beta2.powi(t);
    for id in store.ids() {
        let tensor = store.get_mut(id);
        if !tensor.requires_grad {
            continue;
        }
        let Some(grad) = tensor.grad.take() else {
            continue;
        };
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        for ((p, &g), (mi, vi)) in tensor
            .values
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = hp.beta1 * *mi + (F::one() - hp.beta1) * g;
            *vi = hp.beta2 * *vi + (F::one() - hp.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *p = *p - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_relative_eq;

    fn store2() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        s.add("b", Tensor::new(vec![1], vec![0.0]).unwrap());
        s
    }

    #[test]
    fn clip_scales_norm_ten_down_to_five() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        s.get_mut(id).grad = Some(vec![6.0, 8.0]); // norm 10
        let pre = clip_gradients(&mut s, 5.0);
        assert_relative_eq!(pre, 10.0);
        assert_eq!(s.get(id).grad.as_ref().unwrap(), &vec![3.0, 4.0]);
    }

    #[test]
    fn clip_leaves_small_gradients_unchanged() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![0.0]).unwrap());
        s.get_mut(id).grad = Some(vec![1.0]);
        clip_gradients(&mut s, 5.0);
        assert_eq!(s.get(id).grad.as_ref().unwrap(), &vec![1.0]);
    }

    #[test]
    fn clip_three_four_five_is_exactly_at_bound() {
        // Global norm of (3, 4) across two tensors is 5; max_norm 5 leaves both alone.
        let mut s = store2();
        let a = s.by_name("a").unwrap();
        let b = s.by_name("b").unwrap();
        s.get_mut(a).grad = Some(vec![3.0, 0.0]);
        s.get_mut(b).grad = Some(vec![4.0]);
        let pre = clip_gradients(&mut s, 5.0);
        assert_relative_eq!(pre, 5.0);
        assert_eq!(s.get(a).grad.as_ref().unwrap(), &vec![3.0, 0.0]);
        assert_eq!(s.get(b).grad.as_ref().unwrap(), &vec![4.0]);
    }

    #[test]
    fn clip_is_idempotent() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![3], vec![0.0; 3]).unwrap());
        s.get_mut(id).grad = Some(vec![10.0, -2.0, 7.0]);
        clip_gradients(&mut s, 5.0);
        let once = s.get(id).grad.clone().unwrap();
        clip_gradients(&mut s, 5.0);
        let twice = s.get(id).grad.clone().unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        s.get_mut(id).grad = Some(vec![0.0, 0.0]);
        let mut state = AdamState::new(&s);
        adam_step(&mut s, &mut state, &AdamParams::default());
        assert_eq!(s.get(id).values, vec![1.5, -0.5]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_about_lr() {
        // Hand evaluation at t=1: m_hat = g, v_hat = g^2, so the update is
        // lr * g / (|g| + eps) = lr / (1 + 1e-8) for g = 1.
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        s.get_mut(id).grad = Some(vec![1.0]);
        let mut state = AdamState::new(&s);
        adam_step(&mut s, &mut state, &AdamParams::default());
        let expected = 1.0 - 0.001 / (1.0 + 1e-8);
        assert_relative_eq!(s.get(id).values[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn adam_never_increases_param_with_positive_gradient() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![1], vec![0.3]).unwrap());
        let mut state = AdamState::new(&s);
        let mut prev = 0.3;
        for _ in 0..2 {
            s.get_mut(id).grad = Some(vec![0.7]);
            adam_step(&mut s, &mut state, &AdamParams::default());
            let cur = s.get(id).values[0];
            assert!(cur < prev);
            prev = cur;
        }
        assert_eq!(state.step_count(), 2);
    }
}

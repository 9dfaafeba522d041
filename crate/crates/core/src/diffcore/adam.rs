use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one update to every parameter of `store` and clears the gradients.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if let Some((_, p)) = store.iter().find(|(_, p)| p.grad.is_none()) {
        return Err(Error::contract(format!(
            "parameter `{}` has no gradient; run backward and absorb first",
            p.name
        )));
    }
    if state.first.len() != store.len() {
        state.first = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        state.second = state.first.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps, wd) = (
        state.beta1,
        state.beta2,
        state.learning_rate,
        state.epsilon,
        state.weight_decay,
    );

    for ((p, m), v) in store
        .params_mut()
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let grad = p.grad.take().expect("checked above");
        let values = p.value.data_mut();
        for (((x, &g), m), v) in values
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *x -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *x);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(value));
        s.params_mut()[id.index()].grad = Some(Tensor::scalar(grad));
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store_with(0.5, 1.0);
        let mut st = AdamState::new(1e-3, 0.0);
        adam_step(&mut s, &mut st).unwrap();
        let delta = s.iter().next().unwrap().1.value.item() - 0.5;
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut s = store_with(2.0, 0.0);
        let mut st = AdamState::new(1e-3, 1e-5);
        adam_step(&mut s, &mut st).unwrap();
        let after = s.iter().next().unwrap().1.value.item();
        assert!((after - 2.0 * (1.0 - 1e-3 * 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn gradients_are_cleared() {
        let mut s = store_with(1.0, 0.3);
        let mut st = AdamState::new(1e-3, 1e-5);
        adam_step(&mut s, &mut st).unwrap();
        assert!(s.iter().all(|(_, p)| p.grad.is_none()));
        let err = adam_step(&mut s, &mut st).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(st.step_count(), 1);
    }
}

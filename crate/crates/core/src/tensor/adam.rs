use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        // lr == 0 is accepted so a run can be used as a frozen-parameter baseline.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("adam: lr must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("adam: {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("adam: eps must be > 0"));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = |n| vec![T::zero(); n];
        Self {
            m: params.iter().map(|(_, p)| zeros(p.value().numel())).collect(),
            v: params.iter().map(|(_, p)| zeros(p.value().numel())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update using the gradients accumulated in `params`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    config: &AdamConfig,
) -> Result<()> {
    config.validate()?;
    if state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "adam state tracks {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        if state.m[i].len() != p.value().numel() {
            return Err(Error::shape(format!(
                "adam state for {} has {} values, parameter has {}",
                p.name(),
                state.m[i].len(),
                p.value().numel()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(config.beta1);
    let b2 = T::from_f64_lossy(config.beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - config.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - config.beta2.powi(t));
    let lr = T::from_f64_lossy(config.lr);
    let eps = T::from_f64_lossy(config.eps);

    for (i, p) in params.iter_mut().enumerate() {
        let (value, grad) = p.value_and_grad_mut();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..value.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            value[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("adam update of {}", p.name())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(v: f64) -> (ParamStore<f64>, crate::tensor::ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("theta", Tensor::scalar(v)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(0.7);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.get(id).value().data(), &[0.7]);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = scalar_store(0.0);
        s.get_mut(id).grad_mut()[0] = 1.0;
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            lr: 0.01,
            ..Default::default()
        };
        adam_step(&mut s, &mut st, &cfg).unwrap();
        let moved = -s.get(id).value().data()[0];
        assert!((moved - 0.01 / (1.0 + 1e-8)).abs() < 1e-12, "{moved}");
    }

    #[test]
    fn minimizes_quadratic() {
        let (mut s, id) = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut reached = None;
        for step in 1..=200 {
            let theta = s.get(id).value().data()[0];
            s.zero_grad();
            s.get_mut(id).grad_mut()[0] = 2.0 * theta;
            adam_step(&mut s, &mut st, &cfg).unwrap();
            if s.get(id).value().data()[0].abs() < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "theta = {}", s.get(id).value().data()[0]);
    }

    #[test]
    fn rejects_mismatched_state() {
        let (s, _) = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let mut bigger = s.clone();
        bigger.register("other", Tensor::zeros(&[3])).unwrap();
        assert!(adam_step(&mut bigger, &mut st, &AdamConfig::default()).is_err());
    }
}

//! AdamW with decoupled weight decay, the slanted triangular learning-rate
//! schedule, and an exponential moving average over trainable parameters.

use crate::params::ParamStore;
use crate::tensor::{contract_error, TensorError};
use serde::{Deserialize, Serialize};

/// AdamW hyper-parameters. Defaults: `beta1 = 0.9`, `beta2 = 0.98`,
/// `eps = 1e-6`, `weight_decay = 0.01`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamwConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        AdamwConfig { beta1: 0.9, beta2: 0.98, eps: 1e-6, weight_decay: 0.01 }
    }
}

/// Moments plus schedule position for one parameter store.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamwConfig,
    pub peak_lr: f64,
    pub total_steps: u64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamwConfig, peak_lr: f64, total_steps: u64) -> Self {
        OptimizerState {
            config,
            peak_lr,
            total_steps,
            step: 0,
            first_moment: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
            second_moment: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Slanted triangular schedule: linear `0 -> peak` over the first
/// `ceil(0.06 * total)` steps, then linear `peak -> 0` over the rest.
pub fn lr_at(step: u64, total: u64, peak: f64) -> Result<f64, TensorError> {
    if total == 0 {
        return Err(contract_error("schedule needs a positive total step count"));
    }
    if step > total {
        return Err(contract_error(format!("step {step} exceeds total {total}")));
    }
    let warmup = ((0.06 * total as f64).ceil() as u64).max(1);
    if step <= warmup {
        Ok(peak * step as f64 / warmup as f64)
    } else {
        Ok(peak * (total - step) as f64 / (total - warmup) as f64)
    }
}

/// One AdamW update using the learning rate the schedule assigns to the
/// incremented step counter.
pub fn adamw_step(params: &mut ParamStore, state: &mut OptimizerState) -> Result<(), TensorError> {
    let lr = lr_at(state.step + 1, state.total_steps, state.peak_lr)?;
    adamw_step_with_lr(params, state, lr)
}

/// One AdamW update at an explicit learning rate: bias-corrected moment
/// update plus decoupled weight decay `p -= lr * wd * p`.
pub fn adamw_step_with_lr(
    params: &mut ParamStore,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<(), TensorError> {
    if state.first_moment.len() != params.len() {
        return Err(contract_error("optimizer state does not match parameter count"));
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for (idx, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let grad = tensor
            .grad()
            .ok_or_else(|| contract_error(format!("parameter {idx} has no gradient")))?
            .to_vec();
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        if m.len() != grad.len() {
            return Err(contract_error(format!("moment length drift on parameter {idx}")));
        }
        let values = tensor.values_mut();
        for i in 0..grad.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            values[i] -= lr * cfg.weight_decay * values[i];
        }
    }
    Ok(())
}

/// Shadow copy of every trainable parameter, updated as
/// `shadow <- decay * shadow + (1 - decay) * param`.
#[derive(Clone, Debug)]
pub struct EmaState {
    pub decay: f64,
    shadow: Vec<Vec<f64>>,
}

impl EmaState {
    /// The shadow starts as a copy of the current parameters. `decay` must
    /// lie in `[0, 1)`; zero degenerates to tracking the raw parameters.
    pub fn new(params: &ParamStore, decay: f64) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&decay) {
            return Err(contract_error(format!("EMA decay {decay} outside [0, 1)")));
        }
        Ok(EmaState {
            decay,
            shadow: params.tensors().iter().map(|t| t.values().to_vec()).collect(),
        })
    }

    pub fn update(&mut self, params: &ParamStore) -> Result<(), TensorError> {
        if self.shadow.len() != params.len() {
            return Err(contract_error("EMA shadow does not match parameter count"));
        }
        for (shadow, tensor) in self.shadow.iter_mut().zip(params.tensors()) {
            if shadow.len() != tensor.len() {
                return Err(contract_error("EMA shadow shape drift"));
            }
            for (s, p) in shadow.iter_mut().zip(tensor.values()) {
                *s = self.decay * *s + (1.0 - self.decay) * p;
            }
        }
        Ok(())
    }

    pub fn shadow(&self) -> &[Vec<f64>] {
        &self.shadow
    }

    /// A parameter store holding the shadow weights, for evaluation.
    pub fn shadowed(&self, params: &ParamStore) -> Result<ParamStore, TensorError> {
        params.with_values(&self.shadow)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: Vec<f64>) -> (ParamStore, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.add("w", Tensor::matrix(1, n, values).unwrap());
        (s, id)
    }

    #[test]
    fn zero_grad_applies_only_decoupled_decay() {
        let (mut store, id) = store_with(vec![2.0, -4.0]);
        store.get_mut(id).set_grad(Some(vec![0.0, 0.0]));
        let mut state = OptimizerState::new(&store, AdamwConfig::default(), 0.0, 1);
        let lr = 0.5;
        adamw_step_with_lr(&mut store, &mut state, lr).unwrap();
        let shrink = 1.0 - lr * 0.01;
        assert_eq!(store.get(id).values(), &[2.0 * shrink, -4.0 * shrink]);
    }

    #[test]
    fn zero_grad_zero_decay_leaves_params_unchanged() {
        let (mut store, id) = store_with(vec![1.5]);
        store.get_mut(id).set_grad(Some(vec![0.0]));
        let cfg = AdamwConfig { weight_decay: 0.0, ..AdamwConfig::default() };
        let mut state = OptimizerState::new(&store, cfg, 0.0, 1);
        adamw_step_with_lr(&mut store, &mut state, 0.3).unwrap();
        assert_eq!(store.get(id).values(), &[1.5]);
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let (mut store, _) = store_with(vec![1.0]);
        let mut state = OptimizerState::new(&store, AdamwConfig::default(), 0.0, 1);
        assert!(adamw_step_with_lr(&mut store, &mut state, 0.1).is_err());
    }

    #[test]
    fn identical_seeds_identical_updates() {
        let run = || {
            let (mut store, id) = store_with(vec![0.2, 0.4, 0.6]);
            let mut state = OptimizerState::new(&store, AdamwConfig::default(), 0.0, 10);
            let mut rng = crate::rng::Rng::new(5);
            for _ in 0..10 {
                let g: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                store.get_mut(id).set_grad(Some(g));
                adamw_step_with_lr(&mut store, &mut state, 0.01).unwrap();
            }
            store.get(id).values().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lr_at(0, 100, 2.0).unwrap(), 0.0);
        assert_eq!(lr_at(6, 100, 2.0).unwrap(), 2.0); // ceil(0.06 * 100) = 6
        assert_eq!(lr_at(100, 100, 2.0).unwrap(), 0.0);
        assert!(lr_at(101, 100, 2.0).is_err());
        assert!(lr_at(0, 0, 2.0).is_err());
    }

    #[test]
    fn schedule_peak_is_exact_maximum_and_piecewise_linear() {
        let total = 250; // 0.06 * 250 = 15 exactly
        let peak = 1.3;
        let values: Vec<f64> = (0..=total).map(|s| lr_at(s, total, peak).unwrap()).collect();
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, peak);
        assert_eq!(values[15], peak);
        // Piecewise linearity: constant increments on each side.
        for w in values[..15].windows(2) {
            assert!((w[1] - w[0] - peak / 15.0).abs() < 1e-12);
        }
        for w in values[16..].windows(2) {
            assert!((w[1] - w[0] + peak / 235.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_single_update_from_zero_shadow() {
        let (store, _) = store_with(vec![1.0]);
        let mut ema = EmaState::new(&store, 0.9999).unwrap();
        ema.shadow = vec![vec![0.0]];
        ema.update(&store).unwrap();
        assert!((ema.shadow()[0][0] - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn ema_fixed_point_and_zero_decay() {
        let (store, _) = store_with(vec![0.7, -0.2]);
        let mut ema = EmaState::new(&store, 0.5).unwrap();
        ema.update(&store).unwrap();
        assert_eq!(ema.shadow()[0], vec![0.7, -0.2]);

        let mut ema0 = EmaState::new(&store, 0.0).unwrap();
        ema0.shadow = vec![vec![9.0, 9.0]];
        ema0.update(&store).unwrap();
        assert_eq!(ema0.shadow()[0], vec![0.7, -0.2]);
    }

    #[test]
    fn ema_rejects_bad_decay() {
        let (store, _) = store_with(vec![1.0]);
        assert!(EmaState::new(&store, 1.0).is_err());
        assert!(EmaState::new(&store, -0.1).is_err());
    }
}

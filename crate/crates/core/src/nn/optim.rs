use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Noam schedule normalized so that the apex equals `peak` at `step == warmup`.
pub fn lr_schedule(step: u64, peak: f64, warmup: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    peak * (s / w).min((w / s).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub peak_lr: f64,
    pub warmup: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, epsilon: 1e-9, peak_lr: 1e-3, warmup: 200 }
    }
}

/// Bias-corrected Adam moments plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.shape());
        Self {
            config,
            first: store.iter().map(|(_, _, t)| zeros(t)).collect(),
            second: store.iter().map(|(_, _, t)| zeros(t)).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        lr_schedule(self.step.max(1), self.config.peak_lr, self.config.warmup)
    }
}

/// One Adam update with the learning rate taken from [`lr_schedule`].
pub fn optimizer_step(store: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        bail!(Shape, "{} gradients / {} moments for {} parameters", grads.len(), state.first.len(), store.len());
    }
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if g.shape() != store.get(id).shape() {
                bail!(Shape, "gradient {:?} for parameter {} {:?}", g.shape(), store.name(id), store.get(id).shape());
            }
            g.check_finite("gradient")?;
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let lr = lr_schedule(state.step, c.peak_lr, c.warmup);
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let i = id.index();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = store.get_mut(id).data_mut();
        match grads.get(id) {
            Some(g) => {
                for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                }
            }
            None => {
                // absent gradient is zero: moments decay, parameters move only by leftover momentum
                for ((p, m), v) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m *= c.beta1;
                    *v *= c.beta2;
                    if *m != 0.0 {
                        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamId;

    #[test]
    fn schedule_shape() {
        let (peak, w) = (1e-4, 1000);
        assert_eq!(lr_schedule(w, peak, w), peak);
        assert!((lr_schedule(4 * w, peak, w) - peak / 2.0).abs() < 1e-18);
        assert!((lr_schedule(w / 2, peak, w) - peak / 2.0).abs() < 1e-18);
        let mut prev = 0.0;
        for s in 1..=w {
            let r = lr_schedule(s, peak, w);
            assert!(r > prev);
            prev = r;
        }
        for s in w + 1..5 * w {
            let r = lr_schedule(s, peak, w);
            assert!(r < prev);
            prev = r;
        }
    }

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v)).unwrap();
        s
    }

    fn grad(v: f64) -> Gradients {
        let mut g = Gradients::empty(1);
        g.accumulate(ParamId(0), &Tensor::scalar(v));
        g
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(1.5);
        let mut st = OptimizerState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            optimizer_step(&mut store, &grad(0.0), &mut st).unwrap();
        }
        assert_eq!(store.get(ParamId(0)).item(), 1.5);
        assert_eq!(st.step(), 5);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let cfg = AdamConfig { warmup: 1, peak_lr: 1e-2, epsilon: 0.0, ..Default::default() };
        let mut store = scalar_store(0.0);
        let mut st = OptimizerState::new(&store, cfg);
        let mut prev = 0.0;
        for step in 1..=50u64 {
            optimizer_step(&mut store, &grad(1.0), &mut st).unwrap();
            let now = store.get(ParamId(0)).item();
            let expected = lr_schedule(step, cfg.peak_lr, cfg.warmup);
            assert!(((prev - now) - expected).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = (w - 2)^2
        let cfg = AdamConfig { warmup: 1, peak_lr: 1e-2, ..Default::default() };
        let mut store = scalar_store(0.0);
        let mut st = OptimizerState::new(&store, cfg);
        let f = |w: f64| (w - 2.0) * (w - 2.0);
        let mut last = f(0.0);
        for _ in 0..2 {
            let w = store.get(ParamId(0)).item();
            optimizer_step(&mut store, &grad(2.0 * (w - 2.0)), &mut st).unwrap();
            let now = f(store.get(ParamId(0)).item());
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut store = scalar_store(0.0);
        let mut st = OptimizerState::new(&store, AdamConfig::default());
        assert!(optimizer_step(&mut store, &grad(f64::NAN), &mut st).is_err());
        let mut g = Gradients::empty(1);
        g.accumulate(ParamId(0), &Tensor::zeros(&[2]));
        assert!(optimizer_step(&mut store, &g, &mut st).is_err());
        assert_eq!(st.step(), 0);
    }
}

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nd::ParamStore;

fn check_finite(params: &ParamStore) -> Result<()> {
    for (_, name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Plain gradient descent; gradients are zeroed afterwards.
pub fn sgd_step(params: &mut ParamStore, lr: f64) -> Result<()> {
    check_finite(params)?;
    for (_, t) in params.iter_mut() {
        let Some(g) = t.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (w, g) in t.data_mut().iter_mut().zip(&g) {
            *w -= lr * g;
        }
        t.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: 1e-3,
        }
    }
}

/// Adam moment state for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        check_finite(params)?;
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, lr } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, (_, t)) in params.iter_mut().enumerate() {
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
            t.zero_grad();
        }
        Ok(())
    }
}

/// One-shot Adam update for callers that keep no optimizer around.
pub fn adam_step(params: &mut ParamStore, config: AdamConfig) -> Result<()> {
    Adam::new(config, params).step(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nd::Tensor;

    fn single(w: f64, g: f64) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(w));
        store.get_mut(id).accumulate_grad(&[g]);
        store
    }

    #[test]
    fn sgd_on_square() {
        // f(w) = w^2, f'(1) = 2
        let mut store = single(1.0, 2.0);
        sgd_step(&mut store, 0.1).unwrap();
        let w = store.by_name("w").unwrap();
        assert!((w.item() - 0.8).abs() < 1e-15);
        assert_eq!(w.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = single(0.37, 0.0);
        sgd_step(&mut store, 0.5).unwrap();
        assert_eq!(store.by_name("w").unwrap().item(), 0.37);
        let mut store = single(0.37, 0.0);
        adam_step(&mut store, AdamConfig::default()).unwrap();
        assert_eq!(store.by_name("w").unwrap().item(), 0.37);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for g in [1e-4, 0.3, 7.0, -250.0, 1e6] {
            let mut store = single(0.0, g);
            let cfg = AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            };
            adam_step(&mut store, cfg).unwrap();
            let step = store.by_name("w").unwrap().item();
            assert!((step.abs() - 0.01).abs() < 1e-5, "g={g} step={step}");
            assert_eq!(step.signum(), -g.signum());
        }
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut store = single(1.0, f64::NAN);
        let err = sgd_step(&mut store, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { .. }));
        let mut store = single(1.0, f64::INFINITY);
        assert!(adam_step(&mut store, AdamConfig::default()).is_err());
    }
}

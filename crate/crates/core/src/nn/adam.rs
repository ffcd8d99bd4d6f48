use ndarray::ArrayD;

use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient; 0 disables it.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: None,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<ArrayD<T>> {
            store
                .iter()
                .map(|(_, p)| ArrayD::zeros(p.value.raw_dim()))
                .collect()
        };
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub(crate) fn from_state(
        config: AdamConfig,
        step: u64,
        m: Vec<ArrayD<T>>,
        v: Vec<ArrayD<T>>,
    ) -> Self {
        Adam { config, step, m, v }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[ArrayD<T>], &[ArrayD<T>]) {
        (&self.m, &self.v)
    }

    /// Applies one update to every trainable parameter, then zeroes all gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (_, p) in store.iter() {
            if p.trainable && p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter '{}'",
                    p.name
                )));
            }
        }
        let clip_scale = match self.config.grad_clip {
            Some(max_norm) => {
                let sq: f64 = store
                    .iter()
                    .filter(|(_, p)| p.trainable)
                    .flat_map(|(_, p)| p.grad.iter().map(|g| g.f64() * g.f64()))
                    .sum();
                let norm = sq.sqrt();
                if norm > max_norm {
                    T::of(max_norm / norm)
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::of(c.learning_rate);
        let eps = T::of(c.eps);
        let wd = T::of(c.weight_decay);

        for (i, p) in store.iter_mut().enumerate() {
            if p.trainable {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                ndarray::Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(m)
                    .and(v)
                    .for_each(|w, &g, m, v| {
                        let g = g * clip_scale + wd * *w;
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    });
            }
            p.grad.fill(T::zero());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store(values: ArrayD<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", values, true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(array![1.0, -2.0].into_dyn());
        let before = s.clone();
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        adam.step(&mut s).unwrap();
        assert_eq!(s, before);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store(array![0.0, 0.0, 0.0].into_dyn());
        let id = s.find("w").unwrap();
        s.get_mut(id).grad = array![3.0, -0.5, 1e-3].into_dyn();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut adam = Adam::new(&s, cfg);
        adam.step(&mut s).unwrap();
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps)
        for (w, g) in s.value(id).iter().zip([3.0f64, -0.5, 1e-3]) {
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-15, "{w} vs {expect}");
            assert!((w.abs() - 0.01).abs() < 1e-7);
        }
        assert!(s.get(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store(array![0.0].into_dyn());
        let id = s.find("w").unwrap();
        s.get_mut(id).grad = array![f64::NAN].into_dyn();
        let mut adam = Adam::new(&s, AdamConfig::default());
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("frozen", array![1.0].into_dyn(), false).unwrap();
        s.get_mut(id).grad = array![5.0].into_dyn();
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(id)[[0]], 1.0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut s = store(array![0.3, -0.7].into_dyn());
            let id = s.find("w").unwrap();
            let mut adam = Adam::new(&s, AdamConfig::default());
            for k in 0..50 {
                let w = s.value(id).clone();
                s.get_mut(id).grad = w.mapv(|x| 2.0 * x + k as f64 * 1e-3);
                adam.step(&mut s).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut s = store(array![0.0].into_dyn());
        let id = s.find("w").unwrap();
        s.get_mut(id).grad = array![100.0].into_dyn();
        let cfg = AdamConfig {
            grad_clip: Some(1.0),
            ..Default::default()
        };
        let mut adam = Adam::new(&s, cfg);
        adam.step(&mut s).unwrap();
        let (m, _) = adam.moments();
        assert!((m[0][[0]] - 0.1).abs() < 1e-12);
    }
}

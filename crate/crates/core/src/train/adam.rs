use serde::{Deserialize, Serialize};

use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: ParamSet> AdamState<P> {
    pub fn new(params: &P) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update. Weight decay is added to the
    /// gradient as `weight_decay * param`.
    pub fn step(
        &mut self,
        params: &mut P,
        grads: &P,
        lr: f64,
        weight_decay: f64,
        cfg: &AdamConfig,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            assert_eq!(p.dim(), g.dim(), "gradient shape mismatch");
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    let g = g + weight_decay * *p;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![array![[1.5, -2.0]]];
        let g = vec![Array2::zeros((1, 2))];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &g, 0.1, 0.0, &AdamConfig::default());
        assert_eq!(p[0], array![[1.5, -2.0]]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_lr() {
        let mut p = vec![array![[0.0]]];
        let g = vec![array![[1.0]]];
        let mut s = AdamState::new(&p);
        s.step(&mut p, &g, 0.1, 0.0, &AdamConfig::default());
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0][[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_tends_to_lr() {
        let mut p = vec![array![[0.0]]];
        let g = vec![array![[0.3]]];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..5000 {
            s.step(&mut p, &g, 0.01, 0.0, &cfg);
            delta = prev - p[0][[0, 0]];
            prev = p[0][[0, 0]];
        }
        assert!((delta - 0.01).abs() < 1e-8, "{delta}");
    }

    #[test]
    fn weight_decay_acts_as_gradient() {
        let mut a = vec![array![[2.0]]];
        let mut b = vec![array![[2.0]]];
        let cfg = AdamConfig::default();
        let mut sa = AdamState::new(&a);
        let mut sb = AdamState::new(&b);
        sa.step(&mut a, &vec![array![[0.0]]], 0.1, 0.5, &cfg);
        sb.step(&mut b, &vec![array![[1.0]]], 0.1, 0.0, &cfg);
        assert_eq!(a[0][[0, 0]].to_bits(), b[0][[0, 0]].to_bits());
    }
}

//! Adam optimizer with bias correction.

use crate::error::{DynastyError, Result};
use crate::tensor::Tensor;

/// Adam state: per-parameter first/second moments plus the step counter.
/// Built against a fixed parameter set; the set may not change afterwards.
pub struct Adam {
    names: Vec<String>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &[(String, Tensor)]) -> Self {
        Adam {
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            m: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Scale every gradient so the global L2 norm does not exceed
    /// `max_norm`. No-op when already within bounds or when no gradient
    /// exists yet.
    pub fn clip_global_norm(params: &[(String, Tensor)], max_norm: f64) {
        let mut total = 0.0;
        for (_, t) in params {
            if let Some(g) = t.grad() {
                total += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let norm = total.sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for (_, t) in params {
                if let Some(mut g) = t.grad() {
                    for v in &mut g {
                        *v *= scale;
                    }
                    t.zero_grad();
                    t.accumulate_grad(&g).expect("rescaled gradient stays finite");
                }
            }
        }
    }

    /// One bias-corrected update:
    /// `p -= lr · m̂ / (√v̂ + eps)`. Every parameter must carry a gradient.
    pub fn step(&mut self, params: &[(String, Tensor)], lr: f64) -> Result<()> {
        if params.len() != self.names.len() {
            return Err(DynastyError::Contract(format!(
                "optimizer was built for {} parameters, got {}",
                self.names.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, (name, p)) in params.iter().enumerate() {
            let grad = p.grad().ok_or_else(|| {
                DynastyError::Contract(format!("parameter `{name}` has no gradient"))
            })?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_values(|values| {
                for j in 0..values.len() {
                    let g = grad[j];
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                    let m_hat = m[j] / bc1;
                    let v_hat = v[j] / bc2;
                    values[j] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                }
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let p = Tensor::parameter(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        p.accumulate_grad(&[0.0, 0.0, 0.0]).unwrap();
        let mut adam = Adam::new(&params);
        adam.step(&params, 1e-3).unwrap();
        assert_eq!(p.values_vec(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        // independent scalar simulation of the Adam recurrence
        let (beta1, beta2, eps, lr, g) = (0.9, 0.999, 1e-8, 1e-3, 0.37);
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut sim_updates = Vec::new();
        for t in 1..=1000u32 {
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t as i32));
            let v_hat = v / (1.0 - beta2.powi(t as i32));
            sim_updates.push(lr * m_hat / (v_hat.sqrt() + eps));
        }
        assert!((sim_updates[999].abs() / lr - 1.0).abs() < 0.01);

        // the implementation must track the simulation step for step
        let p = Tensor::parameter(&[1], vec![5.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        let mut adam = Adam::new(&params);
        let mut prev = 5.0;
        for t in 0..1000 {
            p.zero_grad();
            p.accumulate_grad(&[g]).unwrap();
            adam.step(&params, lr).unwrap();
            let now = p.values_vec()[0];
            let update = prev - now;
            assert!(
                (update - sim_updates[t]).abs() < 1e-15,
                "step {t}: impl {update} vs sim {}",
                sim_updates[t]
            );
            prev = now;
        }
        assert!(((prev - 5.0).abs() / (1000.0 * lr) - 1.0).abs() < 0.05);
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let run = || -> Vec<f64> {
            let p = Tensor::parameter(&[2], vec![0.3, -0.4]).unwrap();
            let params = vec![("p".to_string(), p.clone())];
            let mut adam = Adam::new(&params);
            for step in 0..50 {
                p.zero_grad();
                let vals = p.values_vec();
                p.accumulate_grad(&[vals[0] * 0.1 + step as f64 * 1e-4, vals[1] * -0.2]).unwrap();
                adam.step(&params, 1e-2).unwrap();
            }
            p.values_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let p = Tensor::parameter(&[1], vec![1.0]).unwrap();
        let q = Tensor::parameter(&[1], vec![2.0]).unwrap();
        let params = vec![("alpha".to_string(), p.clone()), ("beta".to_string(), q)];
        p.accumulate_grad(&[0.5]).unwrap();
        let mut adam = Adam::new(&params);
        let err = adam.step(&params, 1e-3).unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }

    #[test]
    fn global_norm_clip_rescales() {
        let p = Tensor::parameter(&[2], vec![0.0, 0.0]).unwrap();
        let params = vec![("p".to_string(), p.clone())];
        p.accumulate_grad(&[3.0, 4.0]).unwrap();
        Adam::clip_global_norm(&params, 1.0);
        let g = p.grad().unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((g[0] / g[1] - 0.75).abs() < 1e-12);
    }
}

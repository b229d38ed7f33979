//! Adam with classic L2 weight decay (decay added to the gradient before the
//! moment updates) and bias-corrected moments.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

pub struct Adam<F> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<F>) -> Self {
        let m = params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        let v = params.iter().map(|p| vec![F::zero(); p.data.len()]).collect();
        Adam { cfg, step: 0, m, v }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over the whole parameter set. `grads[i]` pairs with
    /// parameter i; missing entries count as zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &[Option<Vec<F>>]) -> Result<()> {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::of_f64(self.cfg.beta1);
        let b2 = F::of_f64(self.cfg.beta2);
        let lr = F::of_f64(self.cfg.lr);
        let eps = F::of_f64(self.cfg.eps);
        let wd = F::of_f64(self.cfg.weight_decay);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);

        for (i, grad) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            if let Some(g) = grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("gradient of parameter '{}'", p.name),
                    });
                }
            }
            let zero = F::zero();
            for e in 0..p.data.len() {
                let raw = grad.as_ref().map_or(zero, |g| g[e]);
                let g = raw + wd * p.data[e];
                let m = &mut self.m[i][e];
                let v = &mut self.v[i][e];
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                p.data[e] = p.data[e] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(vals: Vec<f64>) -> ParamSet<f64> {
        let mut s = ParamSet::new();
        let n = vals.len();
        s.add("w", vec![n], vals);
        s
    }

    #[test]
    fn zero_gradient_zero_decay_is_a_noop() {
        let mut params = one_param(vec![1.0, -2.0, 3.0]);
        let before = params.get(0).data.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, &[Some(vec![0.0; 3])]).unwrap();
        adam.step(&mut params, &[None]).unwrap();
        assert_eq!(params.get(0).data, before);
    }

    #[test]
    fn first_step_moves_by_about_lr_against_gradient_sign() {
        let mut params = one_param(vec![0.0, 0.0]);
        let cfg = AdamConfig { lr: 1e-2, ..Default::default() };
        let mut adam = Adam::new(cfg, &params);
        adam.step(&mut params, &[Some(vec![3.0, -0.5])]).unwrap();
        // With zero state, mhat/sqrt(vhat) = sign(g) up to the eps correction.
        assert!((params.get(0).data[0] + 1e-2).abs() < 1e-5);
        assert!((params.get(0).data[1] - 1e-2).abs() < 1e-5);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = one_param(vec![1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Some(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = ||w - w*||^2, gradient 2(w - w*)
        let target = [0.3, -1.2, 2.5, 0.0];
        let mut params = one_param(vec![0.0; 4]);
        let cfg = AdamConfig { lr: 5e-2, ..Default::default() };
        let mut adam = Adam::new(cfg, &params);
        for _ in 0..200 {
            let g: Vec<f64> = params
                .get(0)
                .data
                .iter()
                .zip(target.iter())
                .map(|(w, t)| 2.0 * (w - t))
                .collect();
            adam.step(&mut params, &[Some(g)]).unwrap();
        }
        for (w, t) in params.get(0).data.iter().zip(target.iter()) {
            assert!((w - t).abs() < 1e-3, "{w} vs {t}");
        }
    }
}

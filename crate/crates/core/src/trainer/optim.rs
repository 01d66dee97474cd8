//! AdamW with decoupled weight decay and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::model::{Params, Scalar, TensorInfo};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 norm above which gradients are rescaled; 0 disables.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1)")))
            }
        };
        unit("optim.beta1", self.beta1)?;
        unit("optim.beta2", self.beta2)?;
        if !(self.eps > 0.0) {
            return Err(Error::Config("optim.eps must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("optim.weight_decay and optim.clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<F> {
    pub config: AdamConfig,
    /// First and second moment estimates, in parameter tensor order.
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub steps: u64,
    decay: Vec<bool>,
}

/// Euclidean norm over every gradient tensor.
pub fn global_norm<F: Scalar>(grads: &Params<F>) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| {
            let v = v.to_f64().unwrap();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamConfig, params: &Params<F>) -> Self {
        let info = params.tensor_info();
        Self {
            config,
            m: info.iter().map(|t| vec![F::zero(); t.len]).collect(),
            v: info.iter().map(|t| vec![F::zero(); t.len]).collect(),
            steps: 0,
            decay: info.iter().map(|t| t.decay).collect(),
        }
    }

    pub fn from_state(config: AdamConfig, info: &[TensorInfo], m: Vec<Vec<F>>, v: Vec<Vec<F>>, steps: u64) -> Self {
        Self {
            config,
            m,
            v,
            steps,
            decay: info.iter().map(|t| t.decay).collect(),
        }
    }

    /// Clips `grads` in place, applies one update and returns the norm
    /// before clipping.
    pub fn step(&mut self, params: &mut Params<F>, grads: &mut Params<F>, lr: f64) -> f64 {
        let norm = global_norm(grads);
        let c = self.config;
        if c.clip_norm > 0.0 && norm > c.clip_norm {
            let s = F::of(c.clip_norm / norm);
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= s);
            }
        }
        self.steps += 1;
        let bc1 = 1.0 - c.beta1.powi(self.steps.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps.min(i32::MAX as u64) as i32);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (one_b1, one_b2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
        let step_size = F::of(lr / bc1);
        let inv_bc2_sqrt = F::of(1.0 / bc2.sqrt());
        let eps = F::of(c.eps);
        let wd = F::of(lr * c.weight_decay);
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let decay = self.decay[i] && c.weight_decay > 0.0;
            for (((w, &gr), m), v) in p.iter_mut().zip(g).zip(&mut self.m[i]).zip(&mut self.v[i]) {
                *m = b1 * *m + one_b1 * gr;
                *v = b2 * *v + one_b2 * gr * gr;
                if decay {
                    *w -= wd * *w;
                }
                *w -= step_size * *m / ((*v).sqrt() * inv_bc2_sqrt + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::model::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 1,
            hidden: 4,
            heads: 1,
            ff: 4,
            vocab_size: 8,
            seq_len: 4,
            tied: true,
            init_std: 0.1,
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = Params::<f64>::init(&cfg(), 1);
        let before = p.clone();
        let mut g = Params::<f64>::init(&cfg(), 2);
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        opt.step(&mut p, &mut g, 0.0);
        assert_eq!(p, before);
        assert_eq!(opt.steps, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // with bias correction the first update is lr * g / (|g| + eps)
        let mut p = Params::<f64>::zeros(&cfg());
        let mut g = Params::<f64>::zeros(&cfg());
        g.out_b[3] = 0.5;
        g.out_b[4] = -2.0;
        let config = AdamConfig {
            clip_norm: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = AdamW::new(config, &p);
        opt.step(&mut p, &mut g, 0.1);
        assert!((p.out_b[3] + 0.1).abs() < 1e-6);
        assert!((p.out_b[4] - 0.1).abs() < 1e-6);
        assert_eq!(p.out_b[0], 0.0);
    }

    #[test]
    fn clipping_rescales() {
        let p0 = Params::<f64>::zeros(&cfg());
        let mut g = Params::<f64>::zeros(&cfg());
        g.out_b[0] = 3.0;
        g.out_b[1] = 4.0;
        let mut p = p0.clone();
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        let norm = opt.step(&mut p, &mut g, 1e-3);
        assert!((norm - 5.0).abs() < 1e-12);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_only_on_matrices() {
        let mut p = Params::<f64>::zeros(&cfg());
        p.out_b.fill(1.0);
        p.layers[0].w_o.fill(1.0);
        let mut g = Params::<f64>::zeros(&cfg());
        let mut opt = AdamW::new(AdamConfig::default(), &p);
        opt.step(&mut p, &mut g, 0.5);
        assert_eq!(p.out_b[0], 1.0);
        assert!((p.layers[0].w_o[[0, 0]] - (1.0 - 0.5 * 0.01)).abs() < 1e-15);
    }
}

//! AdamW with decoupled weight decay, and the warmup + cosine learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::tensor::Element;

/// Named parameter tensor. `active` lists the coalesced index ranges the
/// optimizer may update; entries outside every range (masked-out convolution
/// weights, running statistics) are never written by training, so they keep
/// their initial bits exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub active: Vec<(usize, usize)>,
}

impl<T: Element> Parameter<T> {
    pub fn dense(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Parameter<T> {
        let len = value.len();
        debug_assert_eq!(shape.iter().product::<usize>(), len);
        Parameter { name: name.into(), shape, value, active: vec![(0, len)] }
    }

    pub fn frozen(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Parameter<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Parameter { name: name.into(), shape, value, active: Vec::new() }
    }

    pub fn with_active(
        name: impl Into<String>,
        shape: Vec<usize>,
        value: Vec<T>,
        active: Vec<(usize, usize)>,
    ) -> Parameter<T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(active.windows(2).all(|w| w[0].1 <= w[1].0), "ranges must be sorted");
        Parameter { name: name.into(), shape, value, active }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Number of trainable entries.
    pub fn active_len(&self) -> usize {
        self.active.iter().map(|&(a, b)| b - a).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 }
    }
}

/// AdamW: bias-corrected first/second moments plus weight decay applied
/// directly to the parameter, decoupled from the moment update.
#[derive(Debug)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Element> AdamW<T> {
    pub fn new(params: &[Parameter<T>], cfg: AdamWConfig) -> AdamW<T> {
        AdamW {
            cfg,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment buffers and step counter, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<T>], &[Vec<T>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<T>>, v: Vec<Vec<T>>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::ShapeMismatch("optimizer state arity mismatch".into()));
        }
        for (have, got) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if have.len() != got.len() {
                return Err(Error::ShapeMismatch("optimizer state length mismatch".into()));
            }
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// One update with the given learning rate. `grads[k]` must match
    /// `params[k]` in length; only active ranges are touched.
    pub fn step(&mut self, params: &mut [Parameter<T>], grads: &[Vec<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient buffers for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_b1 = T::from_f64(1.0 - self.cfg.beta1);
        let one_b2 = T::from_f64(1.0 - self.cfg.beta2);
        let inv_bc1 = T::from_f64(1.0 / (1.0 - self.cfg.beta1.powi(t)));
        let inv_bc2 = T::from_f64(1.0 / (1.0 - self.cfg.beta2.powi(t)));
        let eps = T::from_f64(self.cfg.eps);
        let lr_t = T::from_f64(lr);
        let wd = T::from_f64(self.cfg.weight_decay);
        for (k, p) in params.iter_mut().enumerate() {
            if grads[k].len() != p.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient length {} for parameter {} of length {}",
                    grads[k].len(),
                    p.name,
                    p.len()
                )));
            }
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for &(lo, hi) in &p.active {
                for i in lo..hi {
                    let gi = g[i];
                    m[i] = b1 * m[i] + one_b1 * gi;
                    v[i] = b2 * v[i] + one_b2 * gi * gi;
                    let mhat = m[i] * inv_bc1;
                    let vhat = v[i] * inv_bc2;
                    let theta = p.value[i];
                    p.value[i] = theta - lr_t * (mhat / (vhat.sqrt() + eps) + wd * theta);
                }
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr` over `warmup_steps`, then cosine decay
/// to exactly 0 at `total_steps`. The decay midpoint is exactly `base_lr/2`.
pub fn lr_schedule(step: u64, total_steps: u64, warmup_steps: u64, base_lr: f64) -> Result<f64> {
    if warmup_steps >= total_steps {
        return Err(Error::InvalidParameter(format!(
            "warmup {warmup_steps} must be shorter than total {total_steps}"
        )));
    }
    if step > total_steps {
        return Err(Error::InvalidParameter(format!(
            "step {step} beyond total {total_steps}"
        )));
    }
    if step <= warmup_steps && warmup_steps > 0 {
        // The integer ratio is computed first so the warmup endpoint yields
        // exactly 1.0 and therefore exactly base_lr.
        return Ok(base_lr * (step as f64 / warmup_steps as f64));
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

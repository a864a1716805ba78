use super::params::ParamTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update on every parameter. Gradients are left in
/// place; the caller zeroes them. No parameter is touched when any gradient
/// holds a non-finite entry.
pub fn adam_step(params: &mut [ParamTensor], lr: f64, cfg: AdamConfig) -> Result<()> {
    if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let g = p.grad.as_slice();
        let m = p.m.as_mut_slice();
        let v = p.v.as_mut_slice();
        let w = p.value.as_mut_slice();
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [ParamTensor], max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.as_slice())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.as_mut_slice().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Step decay: `base_lr` until `start_epoch`, then multiplied by `factor`
/// at `start_epoch` and again every `period` epochs after it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub start_epoch: usize,
    pub period: usize,
    pub factor: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.base_lr, self.start_epoch, self.period, self.factor)
    }
}

pub fn lr_schedule(epoch: usize, base_lr: f64, start_epoch: usize, period: usize, factor: f64) -> f64 {
    if epoch < start_epoch {
        return base_lr;
    }
    let decays = (epoch - start_epoch) / period.max(1) + 1;
    base_lr * factor.powi(decays as i32)
}

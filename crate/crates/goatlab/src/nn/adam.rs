//! Adam optimizer with bias correction.
//!
//! Moment buffers mirror the network's parameter shapes. The update is the
//! standard one: with step count `t`,
//! `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
//! `p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.

use crate::error::{Error, Result};
use crate::nn::net::{Network, ParamGrads};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    cfg: AdamConfig,
    m: ParamGrads,
    v: ParamGrads,
    t: u64,
}

impl AdamState {
    pub fn new(net: &Network, cfg: AdamConfig) -> Result<AdamState> {
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::config(format!(
                "adam betas must lie in [0,1), got {}/{}",
                cfg.beta1, cfg.beta2
            )));
        }
        if !(cfg.eps > 0.0) {
            return Err(Error::config(format!("adam eps must be positive, got {}", cfg.eps)));
        }
        Ok(AdamState { cfg, m: ParamGrads::zeros_like(net), v: ParamGrads::zeros_like(net), t: 0 })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One optimizer step in place. Rejects non-finite gradients, naming the
    /// first offending entry.
    pub fn step(&mut self, net: &mut Network, grads: &ParamGrads, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        check_finite(grads)?;
        if grads.weights.len() != self.m.weights.len() {
            return Err(Error::shape("gradient layer count does not match optimizer state"));
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let corr1 = 1.0 - b1.powi(self.t as i32);
        let corr2 = 1.0 - b2.powi(self.t as i32);
        let eps = self.cfg.eps;
        let (weights, biases) = net.params_mut();
        for k in 0..weights.len() {
            update_slice(
                &mut weights[k],
                &grads.weights[k],
                &mut self.m.weights[k],
                &mut self.v.weights[k],
                b1,
                b2,
                corr1,
                corr2,
                eps,
                lr,
            )?;
            update_slice(
                &mut biases[k],
                &grads.biases[k],
                &mut self.m.biases[k],
                &mut self.v.biases[k],
                b1,
                b2,
                corr1,
                corr2,
                eps,
                lr,
            )?;
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    b1: f64,
    b2: f64,
    corr1: f64,
    corr2: f64,
    eps: f64,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "gradient length {} does not match parameter length {}",
            grads.len(),
            params.len()
        )));
    }
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / corr1;
        let v_hat = v[i] / corr2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

fn check_finite(grads: &ParamGrads) -> Result<()> {
    for (k, w) in grads.weights.iter().enumerate() {
        if let Some(i) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient at layer {k} weight {i}: {}",
                w[i]
            )));
        }
    }
    for (k, b) in grads.biases.iter().enumerate() {
        if let Some(i) = b.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient at layer {k} bias {i}: {}", b[i])));
        }
    }
    Ok(())
}

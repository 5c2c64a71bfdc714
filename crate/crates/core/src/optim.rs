//! The two optimizers used by the adversarial game: plain SGD for the
//! discriminator and Siamese, Adam for the generator and emulator.

use crate::error::{Error, Result};
use crate::nets::Network;

/// p <- p - lr * g, element-wise.
pub fn sgd_step(p: &mut [f32], g: &[f32], lr: f32) {
    debug_assert_eq!(p.len(), g.len());
    for (pv, gv) in p.iter_mut().zip(g.iter()) {
        *pv -= lr * gv;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-tensor Adam moments. The step count lives here so a checkpoint can
/// resume bias correction exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// Standard Adam update with bias-corrected moments; t is incremented before
/// the correction, so the first step uses t = 1.
pub fn adam_step(p: &mut [f32], g: &[f32], st: &mut AdamState, hp: &AdamParams) {
    debug_assert_eq!(p.len(), g.len());
    debug_assert_eq!(p.len(), st.m.len());
    st.t += 1;
    let c1 = 1.0 / (1.0 - (hp.beta1 as f64).powi(st.t as i32)) as f32;
    let c2 = 1.0 / (1.0 - (hp.beta2 as f64).powi(st.t as i32)) as f32;
    for i in 0..p.len() {
        st.m[i] = hp.beta1 * st.m[i] + (1.0 - hp.beta1) * g[i];
        st.v[i] = hp.beta2 * st.v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let m_hat = st.m[i] * c1;
        let v_hat = st.v[i] * c2;
        p[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// SGD over every parameter of one network, driven by the gradient slots.
/// Parameters whose slot was never touched are left alone.
#[derive(Debug, Clone, Copy)]
pub struct NetSgd {
    pub lr: f32,
}

impl NetSgd {
    pub fn step(&self, net: &mut Network) {
        for idx in 0..net.len() {
            let t = net.param_mut(idx);
            if t.grad().is_some() {
                let (data, grad) = t.data_grad_mut();
                sgd_step(data, grad, self.lr);
            }
        }
    }
}

/// Adam over every parameter of one network, with one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct NetAdam {
    pub hp: AdamParams,
    states: Vec<AdamState>,
}

impl NetAdam {
    pub fn new(net: &Network, hp: AdamParams) -> Self {
        let states = (0..net.len()).map(|i| AdamState::new(net.param(i).numel())).collect();
        NetAdam { hp, states }
    }

    pub fn step(&mut self, net: &mut Network) {
        for idx in 0..net.len() {
            let t = net.param_mut(idx);
            if t.grad().is_some() {
                let (data, grad) = t.data_grad_mut();
                adam_step(data, grad, &mut self.states[idx], &self.hp);
            }
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Restores moments saved in a checkpoint; shapes must match the network.
    pub fn restore(&mut self, states: Vec<AdamState>) -> Result<()> {
        if states.len() != self.states.len()
            || states
                .iter()
                .zip(self.states.iter())
                .any(|(a, b)| a.m.len() != b.m.len() || a.v.len() != b.v.len())
        {
            return Err(Error::Checkpoint("optimizer state does not match network".into()));
        }
        self.states = states;
        Ok(())
    }
}

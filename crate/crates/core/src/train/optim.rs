//! Adam with exponentially decaying learning rate, and gradient accumulation.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Gradients laid out exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub ModelParams);

impl Grads {
    pub fn zeros(like: &ModelParams) -> Self {
        Grads(like.zeros_like())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.0.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Deref for Grads {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for Grads {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

/// `lr(step) = max(floor, initial * exp(-step / decay))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            initial: lr,
            decay: f64::INFINITY,
            floor: 0.0,
        }
    }

    /// Decay constant chosen so the rate reaches `floor` after `steps` steps.
    pub fn reaching_floor(initial: f64, floor: f64, steps: usize) -> Self {
        let decay = if floor > 0.0 && initial > floor && steps > 0 {
            steps as f64 / (initial / floor).ln()
        } else {
            f64::INFINITY
        };
        Self { initial, decay, floor }
    }

    pub fn lr(&self, step: u64) -> f64 {
        (self.initial * (-(step as f64) / self.decay).exp()).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// First moments, flat in parameter declaration order.
    pub m: Vec<f64>,
    /// Second moments, same layout.
    pub v: Vec<f64>,
    pub schedule: LrSchedule,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, schedule: LrSchedule) -> Self {
        let n = params.param_count();
        Self {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
            schedule,
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }
}

/// One bias-corrected Adam update. Returns the learning rate used.
pub fn adam_step(state: &mut OptimizerState, params: &mut ModelParams, grads: &Grads) -> Result<f64> {
    let n = params.param_count();
    if grads.param_count() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Validation(format!(
            "adam shapes: params {n}, grads {}, moments {}/{}",
            grads.param_count(),
            state.m.len(),
            state.v.len()
        )));
    }
    let lr = state.schedule.lr(state.step);
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let mut i = 0;
    let g_tensors = grads.tensors();
    for (p, (_, g)) in params.tensors_mut().into_iter().zip(g_tensors) {
        for (theta, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gi;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            i += 1;
        }
    }
    Ok(lr)
}

/// Mean of `expected` microbatch gradients.
pub fn accumulate_gradients(grads: &[Grads], expected: usize) -> Result<Grads> {
    if grads.len() != expected || expected == 0 {
        return Err(Error::Validation(format!(
            "expected {expected} microbatch gradients, got {}",
            grads.len()
        )));
    }
    let mut out = grads[0].clone();
    for g in &grads[1..] {
        if g.param_count() != out.param_count() {
            return Err(Error::Validation("microbatch gradients differ in shape".into()));
        }
        let src = g.tensors();
        for (dst, (_, s)) in out.tensors_mut().into_iter().zip(src) {
            dst.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        }
    }
    if expected > 1 {
        out.scale(1.0 / expected as f64);
    }
    Ok(out)
}

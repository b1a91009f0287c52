use radreg_nn::Param;

use crate::error::{Error, Result};

/// Target decay at step `k` of `total`: rises from `tau_base` to 1 along a
/// half cosine.
pub fn ema_schedule(tau_base: f64, step: u64, total: u64) -> f64 {
    if total == 0 || step >= total {
        return 1.0;
    }
    let ratio = step as f64 / total as f64;
    1.0 - (1.0 - tau_base) * ((std::f64::consts::PI * ratio).cos() + 1.0) / 2.0
}

/// `target <- tau * target + (1 - tau) * online`, elementwise in f64.
pub fn ema_update(target: &mut [f32], online: &[f32], tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::ShapeMismatch(format!("target has {} values, online has {}", target.len(), online.len())));
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = (tau * *t as f64 + (1.0 - tau) * *o as f64) as f32;
    }
    Ok(())
}

/// Applies [`ema_update`] to matching parameter lists (buffers included).
pub fn ema_update_params(target: Vec<&mut Param>, online: Vec<&Param>, tau: f64) -> Result<()> {
    if target.len() != online.len() {
        return Err(Error::ShapeMismatch(format!("{} target tensors vs {} online tensors", target.len(), online.len())));
    }
    for (t, o) in target.into_iter().zip(online) {
        if t.shape != o.shape {
            return Err(Error::ShapeMismatch(format!("{}: {:?} vs {:?}", t.name, t.shape, o.shape)));
        }
        ema_update(&mut t.value, &o.value, tau)?;
    }
    Ok(())
}

/// Schedule position of a moving-average target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaState {
    pub tau_base: f64,
    pub step: u64,
    pub total_steps: u64,
}

impl EmaState {
    pub fn new(tau_base: f64, total_steps: u64) -> Self {
        EmaState {
            tau_base,
            step: 0,
            total_steps,
        }
    }

    pub fn tau(&self) -> f64 {
        ema_schedule(self.tau_base, self.step, self.total_steps)
    }

    /// Moves the target towards the online parameters with the current decay
    /// and advances the step. Returns the decay used.
    pub fn update(&mut self, target: Vec<&mut Param>, online: Vec<&Param>) -> Result<f64> {
        let tau = self.tau();
        ema_update_params(target, online, tau)?;
        self.step += 1;
        Ok(tau)
    }
}

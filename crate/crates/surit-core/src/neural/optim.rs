//! Moment-based optimizer with global gradient clipping.

use super::params::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients with a larger global norm are rescaled onto this ball.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 2e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 5.0 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.eps > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("eps and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators with bias correction. Zero
/// gradients provably leave parameters bit-identical: both moments stay
/// zero and the update is exactly 0.0.
pub struct Adam {
    cfg: OptimConfig,
    m: ModelParams,
    v: ModelParams,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: OptimConfig, template: &ModelParams) -> Result<Adam> {
        cfg.validate()?;
        Ok(Adam { cfg, m: template.zeros_like(), v: template.zeros_like(), steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Returns the pre-clip global gradient norm; a
    /// non-finite norm aborts with a divergence error before touching
    /// any state.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<f64> {
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::Diverged {
                where_: format!("optimizer step {}", self.steps + 1),
                what: format!("gradient norm is {norm}"),
            });
        }
        let scale = if norm > self.cfg.clip_norm { self.cfg.clip_norm / norm } else { 1.0 };
        self.steps += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.steps as i32);
        let (b1, b2, lr, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.lr, self.cfg.eps);

        let mut ms = self.m.named_mut();
        let mut vs = self.v.named_mut();
        let gs = grads.named();
        for (((pname, p), (_, m)), ((_, v), (gname, g))) in params
            .named_mut()
            .into_iter()
            .zip(ms.iter_mut())
            .zip(vs.iter_mut().zip(gs.iter()))
        {
            debug_assert_eq!(&pname, gname, "parameter/gradient order mismatch");
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            let gd = g.data();
            for i in 0..pd.len() {
                let gi = gd[i] * scale;
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                pd[i] -= lr * (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

//! Minibatch training driver. Per-sample gradients are computed in
//! parallel but reduced in index order, so results are bit-identical
//! regardless of thread count. The stepwise schedule trains the token
//! path first, then freezes everything but the speaker head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{sample_loss_and_grad, LossBreakdown, LossConfig, LossMode};
use crate::data::Dataset;
use crate::neural::optim::{Adam, OptimConfig};
use crate::neural::params::ModelParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// One phase optimizing token loss + lambda * speaker loss.
    Joint,
    /// Token phase for `epochs`, then a speaker-only phase for
    /// `sid_epochs` with the front-end and token head frozen.
    Stepwise,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Second-phase epochs; only the stepwise mode reads this.
    pub sid_epochs: usize,
    pub batch_size: usize,
    pub mode: TrainMode,
    pub optim: OptimConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 10,
            sid_epochs: 10,
            batch_size: 32,
            mode: TrainMode::Joint,
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        self.optim.validate()?;
        self.loss.validate()
    }
}

/// One optimizer step's record; written out as CSV by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_asr: f64,
    pub l_sid: f64,
    pub l_joint: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str = "epoch,step,l_asr,l_sid,l_joint,grad_norm";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.l_asr, self.l_sid, self.l_joint, self.grad_norm
        )
    }
}

fn shuffle_seed(seed: u64, epoch: u64) -> u64 {
    let mut z = seed ^ epoch.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(13);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

/// Trains in place. On divergence the error is returned and `params`
/// holds the state after the last successful step, so the caller can
/// checkpoint it. Log rows accumulated so far stay in `log`.
pub fn train(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    log: &mut Vec<TrainLogRow>,
) -> Result<()> {
    cfg.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    match cfg.mode {
        TrainMode::Joint => run_phase(params, data, cfg, LossMode::Joint, cfg.epochs, 0, log),
        TrainMode::Stepwise => {
            run_phase(params, data, cfg, LossMode::AsrOnly, cfg.epochs, 0, log)?;
            run_phase(params, data, cfg, LossMode::SidOnly, cfg.sid_epochs, cfg.epochs, log)
        }
    }
}

fn run_phase(
    params: &mut ModelParams,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: LossMode,
    epochs: usize,
    epoch_offset: usize,
    log: &mut Vec<TrainLogRow>,
) -> Result<()> {
    // Each phase gets a fresh optimizer: moments from one objective do
    // not leak into the next.
    let mut opt = Adam::new(cfg.optim.clone(), params)?;
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut step = log.last().map_or(0, |r| r.step);
    for e in 0..epochs {
        let epoch = epoch_offset + e;
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let pref: &ModelParams = params;
            let results: Vec<(LossBreakdown, ModelParams)> = batch
                .par_iter()
                .map(|&i| {
                    sample_loss_and_grad(pref, &data.samples[i], &data.speakers, &cfg.loss, mode)
                        .map_err(|e| match e {
                            Error::NonFinite(what) => Error::Diverged {
                                where_: format!("forward pass at step {}", step + 1),
                                what: what.to_string(),
                            },
                            other => other,
                        })
                })
                .collect::<Result<_>>()?;
            let inv_b = 1.0 / batch.len() as f64;
            let mut gsum = params.zeros_like();
            let (mut asr, mut sid, mut joint) = (0.0, 0.0, 0.0);
            for (bd, g) in &results {
                asr += bd.asr;
                sid += bd.sid;
                joint += bd.joint;
                gsum.add_scaled(g, 1.0);
            }
            gsum.scale(inv_b);
            asr *= inv_b;
            sid *= inv_b;
            joint *= inv_b;
            if !joint.is_finite() {
                return Err(Error::Diverged {
                    where_: format!("batch loss at step {}", step + 1),
                    what: format!("mean loss {joint}"),
                });
            }
            let grad_norm = opt.step(params, &gsum)?;
            step += 1;
            log.push(TrainLogRow { epoch, step, l_asr: asr, l_sid: sid, l_joint: joint, grad_norm });
        }
    }
    Ok(())
}

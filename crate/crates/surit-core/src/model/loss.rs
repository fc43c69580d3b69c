//! Per-sample loss composition and gradient assembly. One call runs the
//! whole pipeline on one mixture: splice, split into two streams,
//! optionally halve the frame rate, score both transducer heads, and
//! backpropagate everything into one parameter-shaped gradient.
//!
//! The token loss pairs stream one with the first-spoken reference by
//! construction; the permutation-invariant alternative scores both
//! assignments and follows the cheaper one. The speaker loss always
//! keeps the construction order and applies the per-stream latency
//! shaping: stream two's penalty window is shifted by the mixture's
//! onset delay converted to model frames.

use super::asr::{asr_backward, asr_encode_audio, asr_encode_labels, asr_join, AsrAudio, AsrJoin, AsrLabel};
use super::front::{time_red_backward, time_red_forward, unmix_backward, unmix_forward};
use super::sid::{sid_backward, sid_forward};
use super::{acc, SpeakerInventory};
use crate::data::{feature_pipeline, SyntheticSpeaker, SPLICE};
use crate::lattice::{apply_latency_penalty, scale_blank_gradient, transducer_grad, transducer_loss, LatencyConfig, Occupancy};
use crate::neural::params::{AsrParams, ModelParams};
use crate::neural::tensor::Tensor;
use crate::{Error, MixtureSample, Result};

/// Which objective a pass optimizes. The stepwise schedule uses the two
/// single-head modes; `SidOnly` also freezes the front-end and token
/// head by never producing gradients for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Joint,
    AsrOnly,
    SidOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the speaker term in the joint objective.
    pub lambda: f64,
    /// Score both stream/reference assignments and keep the cheaper
    /// one (token loss only).
    pub pit: bool,
    /// Latency shaping for the speaker head; `t_delay` is derived per
    /// stream from the sample, so the field here is the stream-one
    /// baseline (normally zero).
    pub latency: LatencyConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda: 10.0, pit: false, latency: LatencyConfig::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "speaker loss weight must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        self.latency.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub asr: f64,
    pub sid: f64,
    pub joint: f64,
}

fn asr_pair(p: &AsrParams, audio: &AsrAudio, label: &AsrLabel) -> Result<(AsrJoin, f64, Occupancy)> {
    let join = asr_join(p, audio, label)?;
    let (loss, occ) = transducer_loss(&join.lattice)?;
    Ok((join, loss, occ))
}

/// Full forward and backward for one sample. Returns the loss split and
/// the gradient of the mode's objective with respect to every
/// parameter; tensors outside the objective's reach stay exactly zero.
pub fn sample_loss_and_grad(
    p: &ModelParams,
    sample: &MixtureSample,
    pool: &[SyntheticSpeaker],
    cfg: &LossConfig,
    mode: LossMode,
) -> Result<(LossBreakdown, ModelParams)> {
    cfg.validate()?;
    let x = feature_pipeline(&sample.features)?;
    let ufwd = unmix_forward(&p.unmix, &x);
    let (tr1, tr2) = match &p.time_red {
        Some(l) => (
            Some(time_red_forward(l, &ufwd.h1)),
            Some(time_red_forward(l, &ufwd.h2)),
        ),
        None => (None, None),
    };
    let stream1: &Tensor = tr1.as_ref().map_or(&ufwd.h1, |f| &f.out);
    let stream2: &Tensor = tr2.as_ref().map_or(&ufwd.h2, |f| &f.out);
    let mut delay_frames = sample.delay / SPLICE;
    if p.time_red.is_some() {
        delay_frames /= 2;
    }

    let mut grads = p.zeros_like();
    let mut d1 = Tensor::zeros(stream1.shape());
    let mut d2 = Tensor::zeros(stream2.shape());

    let mut asr_loss = 0.0;
    if mode != LossMode::SidOnly {
        let a1 = asr_encode_audio(&p.asr, stream1);
        let a2 = asr_encode_audio(&p.asr, stream2);
        let l1 = asr_encode_labels(&p.asr, &sample.y1)?;
        let l2 = asr_encode_labels(&p.asr, &sample.y2)?;
        let (j11, loss11, occ11) = asr_pair(&p.asr, &a1, &l1)?;
        let (j22, loss22, occ22) = asr_pair(&p.asr, &a2, &l2)?;
        let direct = loss11 + loss22;
        let chosen: [(&AsrAudio, &AsrLabel, AsrJoin, Occupancy); 2];
        if cfg.pit {
            let (j12, loss12, occ12) = asr_pair(&p.asr, &a1, &l2)?;
            let (j21, loss21, occ21) = asr_pair(&p.asr, &a2, &l1)?;
            let swapped = loss12 + loss21;
            // A tie keeps the construction-order pairing.
            if swapped < direct {
                asr_loss = swapped;
                chosen = [(&a1, &l2, j12, occ12), (&a2, &l1, j21, occ21)];
            } else {
                asr_loss = direct;
                chosen = [(&a1, &l1, j11, occ11), (&a2, &l2, j22, occ22)];
            }
        } else {
            asr_loss = direct;
            chosen = [(&a1, &l1, j11, occ11), (&a2, &l2, j22, occ22)];
        }
        let daccs = [&mut d1, &mut d2];
        let streams = [stream1, stream2];
        for (i, (audio, label, join, occ)) in chosen.into_iter().enumerate() {
            let lg = transducer_grad(&join.lattice, &occ)?;
            let ds = asr_backward(&p.asr, streams[i], audio, label, &join, &lg, 1.0, &mut grads.asr);
            acc(daccs[i], &ds);
        }
    }

    let mut sid_loss = 0.0;
    let run_sid = match mode {
        LossMode::AsrOnly => false,
        LossMode::SidOnly => true,
        LossMode::Joint => cfg.lambda > 0.0,
    };
    if run_sid {
        let inv = SpeakerInventory::from_sample(sample, pool)?;
        let t1 = inv.index_of(sample.s1)?;
        let t2 = inv.index_of(sample.s2)?;
        let weight = match mode {
            LossMode::SidOnly => 1.0,
            _ => cfg.lambda,
        };
        let daccs = [&mut d1, &mut d2];
        let plan = [(stream1, t1, 0usize), (stream2, t2, delay_frames)];
        for (i, (stream, tidx, tdel)) in plan.into_iter().enumerate() {
            let mut f = sid_forward(&p.sid, stream, &inv, tidx)?;
            let lcfg = LatencyConfig { t_delay: tdel, ..cfg.latency };
            apply_latency_penalty(&mut f.lattice, &lcfg)?;
            let (ls, occ) = transducer_loss(&f.lattice)?;
            sid_loss += ls;
            let mut lg = transducer_grad(&f.lattice, &occ)?;
            scale_blank_gradient(&mut lg, cfg.latency.alpha)?;
            let ds = sid_backward(&p.sid, stream, &inv, &f, &lg, weight, &mut grads.sid);
            acc(daccs[i], &ds);
        }
    }

    let joint = match mode {
        LossMode::Joint => asr_loss + cfg.lambda * sid_loss,
        LossMode::AsrOnly => asr_loss,
        LossMode::SidOnly => sid_loss,
    };

    if mode != LossMode::SidOnly {
        let (dh1, dh2) = if let (Some(l), Some(f1), Some(f2)) = (&p.time_red, &tr1, &tr2) {
            let gtr = grads.time_red.as_mut().expect("gradient mirrors parameter layout");
            let a = time_red_backward(l, f1, &d1, gtr);
            let b = time_red_backward(l, f2, &d2, gtr);
            (a, b)
        } else {
            (d1, d2)
        };
        unmix_backward(&p.unmix, &ufwd, &dh1, &dh2, &mut grads.unmix);
    }

    Ok((LossBreakdown { asr: asr_loss, sid: sid_loss, joint }, grads))
}

//! Streaming greedy decoders for both transducer heads, with the
//! emission frame of every output recorded so speaker-label latency can
//! be measured. Both decoders walk the stream one frame at a time and
//! carry recurrent state forward with single steps, so output at frame
//! t can never depend on frames after t.

use serde::{Deserialize, Serialize};

use crate::model::SpeakerInventory;
use crate::neural::ops::{gru_step, Linear};
use crate::neural::params::{AsrParams, SidParams};
use crate::neural::tensor::Tensor;
use crate::{Error, Result};

/// Labels allowed within one frame before a blank is forced; keeps the
/// greedy loop finite when a label stays dominant.
pub const MAX_SYMBOLS_PER_FRAME: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Token,
    Speaker,
}

/// One decoder output. `symbol` is a token id for the token head and an
/// inventory index for the speaker head. `frame` is 1-based and counts
/// the frames the decoder actually saw (after any frame-rate halving).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeEvent {
    pub kind: EventKind,
    pub symbol: usize,
    pub frame: usize,
}

/// tanh joint for a single (audio, label) pair, summed in the same
/// order as the batched forward: audio half, then bias + label half.
fn joint_node(l: &Linear, audio: &[f64], label: &[f64]) -> Vec<f64> {
    let j = l.w.rows();
    let cols = l.w.cols();
    let split = audio.len();
    debug_assert_eq!(cols, split + label.len());
    let wd = l.w.data();
    let bd = l.b.data();
    let mut act = vec![0.0; j];
    for (o, slot) in act.iter_mut().enumerate() {
        let row = &wd[o * cols..(o + 1) * cols];
        let mut sf = 0.0;
        for i in 0..split {
            sf += row[i] * audio[i];
        }
        let mut sg = bd[o];
        for (i, lv) in label.iter().enumerate() {
            sg += row[split + i] * lv;
        }
        *slot = (sf + sg).tanh();
    }
    act
}

fn linear_row(l: &Linear, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (l.w.rows(), l.w.cols());
    debug_assert_eq!(x.len(), inp);
    let wd = l.w.data();
    let bd = l.b.data();
    let mut y = vec![0.0; out];
    for (o, slot) in y.iter_mut().enumerate() {
        let row = &wd[o * inp..(o + 1) * inp];
        let mut acc = bd[o];
        for i in 0..inp {
            acc += row[i] * x[i];
        }
        *slot = acc;
    }
    y
}

/// Argmax with ties broken toward blank (index 0), and otherwise toward
/// the lowest index. Blank-leaning ties keep latency numbers honest: an
/// emission must strictly beat staying silent.
fn pick_symbol(logits: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = logits[0];
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Greedy token decoding over one separated stream. Per frame: take the
/// argmax of the joint distribution, emit and advance the label state
/// on a label, advance time on blank; after `MAX_SYMBOLS_PER_FRAME`
/// labels in one frame a blank is forced.
pub fn greedy_decode_asr(p: &AsrParams, stream: &Tensor) -> Vec<DecodeEvent> {
    let t_len = stream.rows();
    let mut events = Vec::new();
    let mut h1 = vec![0.0; p.enc1.hidden()];
    let mut h2 = vec![0.0; p.enc2.hidden()];
    // Label context starts at the state reached from the start token.
    let mut g = gru_step(&p.lab, p.embed.row(0), &vec![0.0; p.lab.hidden()]);
    for t in 1..=t_len {
        h1 = gru_step(&p.enc1, stream.row(t - 1), &h1);
        h2 = gru_step(&p.enc2, &h1, &h2);
        let mut emitted = 0;
        loop {
            if emitted == MAX_SYMBOLS_PER_FRAME {
                break;
            }
            let act = joint_node(&p.joint, &h2, &g);
            let logits = linear_row(&p.out, &act);
            let pick = pick_symbol(&logits);
            if pick == 0 {
                break;
            }
            events.push(DecodeEvent { kind: EventKind::Token, symbol: pick, frame: t });
            g = gru_step(&p.lab, p.embed.row(pick), &g);
            emitted += 1;
        }
    }
    events
}

/// Greedy speaker decoding over one separated stream. At each frame the
/// blank probability b (sigmoid of the blank logit) is compared with
/// the best factored label probability (1-b) * max_k P(k); the argmax
/// speaker is emitted the first time the label branch strictly wins.
/// One emission ends the search: the stream carries one speaker, so
/// only blank is allowed afterwards. Returns the events (0 or 1) and
/// t_e, the emission frame, or the stream length if nothing was
/// emitted.
pub fn greedy_decode_sid(
    p: &SidParams,
    stream: &Tensor,
    inv: &SpeakerInventory,
) -> Result<(Vec<DecodeEvent>, usize)> {
    let pdim = p.lab_proj.w.cols();
    if inv.profile_dim() != pdim {
        return Err(Error::Shape(format!(
            "profile dim {} does not match head dim {pdim}",
            inv.profile_dim()
        )));
    }
    let t_len = stream.rows();
    let mut h = vec![0.0; p.enc.hidden()];
    for t in 1..=t_len {
        h = gru_step(&p.enc, stream.row(t - 1), &h);
        let act = joint_node(&p.joint, &h, p.start.data());
        let blank_logit = linear_row(&p.blank, &act)[0];
        let z = linear_row(&p.spk_proj, &act);

        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        let mut dots = vec![0.0; inv.len()];
        for (k, slot) in dots.iter_mut().enumerate() {
            let prof = inv.profile(k);
            let mut d = 0.0;
            for i in 0..pdim {
                d += z[i] * prof[i];
            }
            *slot = d;
            if d > best_dot {
                best = k;
                best_dot = d;
            }
        }
        // max_k softmax(dots)_k = 1 / sum_k exp(dots_k - max), computed
        // against the max so nothing overflows.
        let denom: f64 = dots.iter().map(|d| (d - best_dot).exp()).sum();
        let p_best = 1.0 / denom;
        let b = 1.0 / (1.0 + (-blank_logit).exp());
        if (1.0 - b) * p_best > b {
            let ev = DecodeEvent { kind: EventKind::Speaker, symbol: best, frame: t };
            return Ok((vec![ev], t));
        }
    }
    Ok((Vec::new(), t_len))
}

/// Latency summary over an evaluation set; inputs are (t_e, stream
/// length) pairs, one per utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_t_e: f64,
    /// Mean of t_e / T, the fraction of each stream consumed before the
    /// speaker was named.
    pub mean_ratio: f64,
    pub p50_t_e: f64,
    pub p90_t_e: f64,
}

pub fn latency_stats(samples: &[(usize, usize)]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("latency stats over an empty set"));
    }
    let n = samples.len() as f64;
    let mut sum_te = 0.0;
    let mut sum_ratio = 0.0;
    for &(t_e, t_len) in samples {
        if t_len == 0 {
            return Err(Error::InvalidInput("zero-length stream in latency stats".into()));
        }
        sum_te += t_e as f64;
        sum_ratio += t_e as f64 / t_len as f64;
    }
    let mut sorted: Vec<usize> = samples.iter().map(|&(t_e, _)| t_e).collect();
    sorted.sort_unstable();
    // Nearest-rank quantile: smallest value with at least q of the mass
    // at or below it.
    let rank = |q: f64| -> f64 {
        let r = (q * sorted.len() as f64).ceil() as usize;
        sorted[r.max(1) - 1] as f64
    };
    Ok(LatencyStats {
        mean_t_e: sum_te / n,
        mean_ratio: sum_ratio / n,
        p50_t_e: rank(0.5),
        p90_t_e: rank(0.9),
    })
}

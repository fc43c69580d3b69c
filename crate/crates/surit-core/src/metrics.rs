//! Permutation-aware evaluation: Levenshtein edit distance, two-stream
//! token error under the better stream assignment, speaker error rate
//! over decoded inventory labels, and the driver that decodes a whole
//! dataset into one report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::decode::{greedy_decode_asr, greedy_decode_sid, latency_stats, LatencyStats};
use crate::model::{separate_streams, SpeakerInventory};
use crate::neural::params::ModelParams;
use crate::{Error, Result};

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(hyp: &[T], rf: &[T]) -> usize {
    // One rolling row of the (|hyp|+1) x (|rf|+1) grid; row[j] holds the
    // distance from the hypothesis prefix consumed so far to rf[..j].
    let n = rf.len();
    let mut row: Vec<usize> = (0..=n).collect();
    for (i, h) in hyp.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for j in 1..=n {
            let up = row[j];
            let cost = if *h == rf[j - 1] { 0 } else { 1 };
            row[j] = (diag + cost).min(up + 1).min(row[j - 1] + 1);
            diag = up;
        }
    }
    row[n]
}

/// Summed edit distance under the better of the two stream-to-reference
/// assignments; the flag reports whether the swapped pairing won. Ties
/// keep the direct pairing.
fn best_assignment<T: PartialEq>(hyps: [&[T]; 2], refs: [&[T]; 2]) -> (usize, bool) {
    let direct = edit_distance(hyps[0], refs[0]) + edit_distance(hyps[1], refs[1]);
    let swapped = edit_distance(hyps[1], refs[0]) + edit_distance(hyps[0], refs[1]);
    if swapped < direct {
        (swapped, true)
    } else {
        (direct, false)
    }
}

/// Two-stream token errors for one utterance: the better-assignment
/// error count and the total reference length. Corpus rates divide the
/// summed errors by the summed reference lengths.
pub fn permutation_wer<T: PartialEq>(hyps: [&[T]; 2], refs: [&[T]; 2]) -> (usize, usize) {
    let (errors, _) = best_assignment(hyps, refs);
    (errors, refs[0].len() + refs[1].len())
}

/// One utterance's decoded and reference speaker-label sequences as
/// inventory indices; a stream that never emitted has an empty list.
#[derive(Debug, Clone, Default)]
pub struct SpeakerLabels {
    pub hyp: [Vec<usize>; 2],
    pub rf: [Vec<usize>; 2],
}

/// Speaker error rate: the better-assignment summed edit distance
/// between decoded and reference speaker lists, averaged over both
/// streams of every utterance.
pub fn ser(utts: &[SpeakerLabels]) -> Result<f64> {
    if utts.is_empty() {
        return Err(Error::EmptyInput("speaker error rate over no utterances"));
    }
    let total: usize = utts
        .iter()
        .map(|u| {
            best_assignment(
                [&u.hyp[0][..], &u.hyp[1][..]],
                [&u.rf[0][..], &u.rf[1][..]],
            )
            .0
        })
        .sum();
    Ok(total as f64 / (2.0 * utts.len() as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UttEval {
    pub utt_id: String,
    /// True when the token streams scored better against the swapped
    /// reference pairing.
    pub swapped: bool,
    pub token_errors: usize,
    pub ref_tokens: usize,
    /// Better-assignment speaker errors for this utterance (0, 1 or 2).
    pub speaker_errors: usize,
    /// Speaker emission frame per stream (stream length if the head
    /// never fired) and the shared stream length.
    pub t_e1: usize,
    pub t_e2: usize,
    pub t_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub wer: f64,
    pub ser: f64,
    pub latency: LatencyStats,
    pub utts: Vec<UttEval>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "system,wer,ser,t_e,t_e_over_T";

    pub fn csv_row(&self, system: &str) -> String {
        format!(
            "{system},{:.6},{:.6},{:.3},{:.4}",
            self.wer, self.ser, self.latency.mean_t_e, self.latency.mean_ratio
        )
    }
}

/// Decodes every sample of the dataset and aggregates corpus metrics.
/// Corpus latency pools the speaker-naming frames of both streams;
/// the second stream's emission carries its onset delay, so it is the
/// one with room to move when training trades accuracy for latency.
pub fn evaluate(p: &ModelParams, ds: &Dataset) -> Result<EvalReport> {
    if ds.samples.is_empty() {
        return Err(Error::EmptyInput("evaluation over an empty dataset"));
    }
    struct PerUtt {
        utt: UttEval,
        labels: SpeakerLabels,
    }
    let rows: Vec<Result<PerUtt>> = ds
        .samples
        .par_iter()
        .map(|sample| {
            let (st1, st2) = separate_streams(p, sample)?;
            let hyp1: Vec<usize> =
                greedy_decode_asr(&p.asr, &st1).iter().map(|e| e.symbol).collect();
            let hyp2: Vec<usize> =
                greedy_decode_asr(&p.asr, &st2).iter().map(|e| e.symbol).collect();
            let (token_errors, swapped) =
                best_assignment([&hyp1, &hyp2], [&sample.y1, &sample.y2]);

            let inv = SpeakerInventory::from_sample(sample, &ds.speakers)?;
            let (ev1, t_e1) = greedy_decode_sid(&p.sid, &st1, &inv)?;
            let (ev2, t_e2) = greedy_decode_sid(&p.sid, &st2, &inv)?;
            let labels = SpeakerLabels {
                hyp: [
                    ev1.iter().map(|e| e.symbol).collect(),
                    ev2.iter().map(|e| e.symbol).collect(),
                ],
                rf: [
                    vec![inv.index_of(sample.s1)?],
                    vec![inv.index_of(sample.s2)?],
                ],
            };
            let speaker_errors = best_assignment(
                [&labels.hyp[0][..], &labels.hyp[1][..]],
                [&labels.rf[0][..], &labels.rf[1][..]],
            )
            .0;
            Ok(PerUtt {
                utt: UttEval {
                    utt_id: sample.utt_id.clone(),
                    swapped,
                    token_errors,
                    ref_tokens: sample.y1.len() + sample.y2.len(),
                    speaker_errors,
                    t_e1,
                    t_e2,
                    t_len: st1.rows(),
                },
                labels,
            })
        })
        .collect();

    let mut utts = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    let mut err_sum = 0usize;
    let mut tok_sum = 0usize;
    let mut tes = Vec::with_capacity(rows.len());
    for r in rows {
        let r = r?;
        err_sum += r.utt.token_errors;
        tok_sum += r.utt.ref_tokens;
        tes.push((r.utt.t_e1, r.utt.t_len));
        tes.push((r.utt.t_e2, r.utt.t_len));
        labels.push(r.labels);
        utts.push(r.utt);
    }
    Ok(EvalReport {
        wer: err_sum as f64 / tok_sum as f64,
        ser: ser(&labels)?,
        latency: latency_stats(&tes)?,
        utts,
    })
}

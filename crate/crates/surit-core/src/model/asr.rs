//! Token transducer head. The audio side runs two recurrent layers over
//! a stream; the label side embeds the start token plus the reference
//! tokens and runs one recurrent layer; the joint network scores every
//! (frame, prefix) node with blank + token logits.
//!
//! Conventions: tokens live in 1..=vocab with 0 reserved for blank and
//! the start-of-stream embedding row; output logit column 0 is blank,
//! column k+1 is token k+1, so lattice label index k means token k+1.

use super::joint::{joint_backward, joint_forward, JointForward};
use super::acc;
use crate::lattice::{AlignmentLattice, LatticeGrad, LatticeMode, NodeLogits};
use crate::neural::ops::{embed, embed_backward, gru_seq, gru_seq_backward, linear, linear_backward, GruCache};
use crate::neural::params::AsrParams;
use crate::neural::tensor::Tensor;
use crate::{Error, Result};

/// Audio-encoder activations for one stream.
pub struct AsrAudio {
    e1: Tensor,
    cache_e1: GruCache,
    pub e2: Tensor,
    cache_e2: GruCache,
}

pub fn asr_encode_audio(p: &AsrParams, stream: &Tensor) -> AsrAudio {
    let (e1, cache_e1) = gru_seq(&p.enc1, stream);
    let (e2, cache_e2) = gru_seq(&p.enc2, &e1);
    AsrAudio { e1, cache_e1, e2, cache_e2 }
}

/// Label-encoder activations for one reference token sequence.
pub struct AsrLabel {
    ids: Vec<usize>,
    lemb: Tensor,
    pub g: Tensor,
    cache_g: GruCache,
}

pub fn asr_encode_labels(p: &AsrParams, targets: &[usize]) -> Result<AsrLabel> {
    let vocab = p.embed.rows() - 1;
    if let Some(&bad) = targets.iter().find(|&&y| y == 0 || y > vocab) {
        return Err(Error::InvalidLabel { label: bad, space: vocab + 1 });
    }
    let mut ids = Vec::with_capacity(targets.len() + 1);
    ids.push(0);
    ids.extend_from_slice(targets);
    let lemb = embed(&p.embed, &ids)?;
    let (g, cache_g) = gru_seq(&p.lab, &lemb);
    Ok(AsrLabel { ids, lemb, g, cache_g })
}

/// Joint evaluation of one (stream, reference) pairing.
pub struct AsrJoin {
    joint: JointForward,
    pub lattice: AlignmentLattice,
}

pub fn asr_join(p: &AsrParams, audio: &AsrAudio, label: &AsrLabel) -> Result<AsrJoin> {
    let joint = joint_forward(&p.joint, &audio.e2, &label.g);
    let out = linear(&p.out, &joint.act);
    let mut nodes = Vec::with_capacity(out.rows());
    for r in 0..out.rows() {
        let row = out.row(r);
        nodes.push(NodeLogits::new(row[0], row[1..].to_vec())?);
    }
    let targets: Vec<usize> = label.ids[1..].iter().map(|&y| y - 1).collect();
    let lattice = AlignmentLattice::from_nodes(LatticeMode::Rnnt, audio.e2.rows(), targets, nodes)?;
    Ok(AsrJoin { joint, lattice })
}

/// Backpropagates one pairing's lattice gradient, scaled by `weight`,
/// into the head parameters. Returns the gradient at the stream input.
#[allow(clippy::too_many_arguments)]
pub fn asr_backward(
    p: &AsrParams,
    stream: &Tensor,
    audio: &AsrAudio,
    label: &AsrLabel,
    join: &AsrJoin,
    lg: &LatticeGrad,
    weight: f64,
    g: &mut AsrParams,
) -> Tensor {
    let t_len = lg.t_len();
    let u_rows = lg.u_rows();
    let vdim = lg.label_dim();
    let mut dout = vec![0.0; t_len * u_rows * (vdim + 1)];
    for t in 0..t_len {
        for u in 0..u_rows {
            let row = &mut dout[(t * u_rows + u) * (vdim + 1)..(t * u_rows + u + 1) * (vdim + 1)];
            row[0] = weight * lg.blank(t, u);
            for (dst, src) in row[1..].iter_mut().zip(lg.label_row(t, u)) {
                *dst = weight * src;
            }
        }
    }
    let dout = Tensor::new_unchecked(vec![t_len * u_rows, vdim + 1], dout);

    let (dw, db, dact) = linear_backward(&p.out, &join.joint.act, &dout);
    acc(&mut g.out.w, &dw);
    acc(&mut g.out.b, &db);

    let (dw, db, de2, dg) = joint_backward(&p.joint, &audio.e2, &label.g, &join.joint, &dact);
    acc(&mut g.joint.w, &dw);
    acc(&mut g.joint.b, &db);

    let (dwx, dwh, db, dlemb) = gru_seq_backward(&p.lab, &label.lemb, &label.cache_g, &dg);
    acc(&mut g.lab.wx, &dwx);
    acc(&mut g.lab.wh, &dwh);
    acc(&mut g.lab.b, &db);
    let demb = embed_backward(p.embed.rows(), p.embed.cols(), &label.ids, &dlemb);
    acc(&mut g.embed, &demb);

    let (dwx, dwh, db, de1) = gru_seq_backward(&p.enc2, &audio.e1, &audio.cache_e2, &de2);
    acc(&mut g.enc2.wx, &dwx);
    acc(&mut g.enc2.wh, &dwh);
    acc(&mut g.enc2.b, &db);
    let (dwx, dwh, db, dstream) = gru_seq_backward(&p.enc1, stream, &audio.cache_e1, &de1);
    acc(&mut g.enc1.wx, &dwx);
    acc(&mut g.enc1.wh, &dwh);
    acc(&mut g.enc1.b, &db);
    dstream
}

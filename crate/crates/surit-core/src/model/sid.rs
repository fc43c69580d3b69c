//! Speaker transducer head. One recurrent layer encodes the stream; the
//! label side is embedding-only: a learned start vector before any
//! emission, then a projection of the emitted speaker's profile. The
//! joint network feeds a factorized output: a scalar blank logit and a
//! projection into profile space whose dot products with the inventory
//! profiles are the speaker logits.

use super::joint::{joint_backward, joint_forward, JointForward};
use super::{acc, SpeakerInventory};
use crate::lattice::{AlignmentLattice, LatticeGrad, LatticeMode, NodeLogits};
use crate::neural::ops::{gru_seq, gru_seq_backward, linear, linear_backward, GruCache};
use crate::neural::params::SidParams;
use crate::neural::tensor::Tensor;
use crate::{Error, Result};

pub struct SidForward {
    e: Tensor,
    cache_e: GruCache,
    /// [2, label_dim]: start vector row, then the target profile
    /// projection.
    lmat: Tensor,
    target_idx: usize,
    joint: JointForward,
    pub lattice: AlignmentLattice,
}

/// Runs the head on one stream against one target speaker drawn from
/// the inventory. The lattice carries one label row (the speaker token)
/// and blank/label logits per frame under the sigmoid-blank
/// factorization.
pub fn sid_forward(
    p: &SidParams,
    stream: &Tensor,
    inv: &SpeakerInventory,
    target_idx: usize,
) -> Result<SidForward> {
    if target_idx >= inv.len() {
        return Err(Error::InvalidInput(format!(
            "target index {target_idx} outside inventory of {}",
            inv.len()
        )));
    }
    let pdim = p.lab_proj.w.cols();
    if inv.profile_dim() != pdim {
        return Err(Error::Shape(format!(
            "profile dim {} does not match head dim {pdim}",
            inv.profile_dim()
        )));
    }
    let (e, cache_e) = gru_seq(&p.enc, stream);

    let ld = p.start.len();
    let prof = Tensor::from_vec(&[1, pdim], inv.profile(target_idx).to_vec())?;
    let proj = linear(&p.lab_proj, &prof);
    let mut lmat = vec![0.0; 2 * ld];
    lmat[..ld].copy_from_slice(p.start.data());
    lmat[ld..].copy_from_slice(proj.data());
    let lmat = Tensor::new_unchecked(vec![2, ld], lmat);

    let joint = joint_forward(&p.joint, &e, &lmat);
    let blank_col = linear(&p.blank, &joint.act);
    let spk_space = linear(&p.spk_proj, &joint.act);

    let k = inv.len();
    let n_nodes = joint.act.rows();
    let mut nodes = Vec::with_capacity(n_nodes);
    for n in 0..n_nodes {
        let z = spk_space.row(n);
        let mut labels = vec![0.0; k];
        for (s, slot) in labels.iter_mut().enumerate() {
            let prof = inv.profile(s);
            let mut dot = 0.0;
            for i in 0..pdim {
                dot += z[i] * prof[i];
            }
            *slot = dot;
        }
        nodes.push(NodeLogits::new(blank_col.at2(n, 0), labels)?);
    }
    let lattice = AlignmentLattice::from_nodes(LatticeMode::Hat, stream.rows(), vec![target_idx], nodes)?;
    Ok(SidForward { e, cache_e, lmat, target_idx, joint, lattice })
}

/// Backpropagates the lattice gradient, scaled by `weight`, into the
/// head parameters. Profiles are data and receive no gradient. Returns
/// the gradient at the stream input.
pub fn sid_backward(
    p: &SidParams,
    stream: &Tensor,
    inv: &SpeakerInventory,
    fwd: &SidForward,
    lg: &LatticeGrad,
    weight: f64,
    g: &mut SidParams,
) -> Tensor {
    let t_len = lg.t_len();
    let u_rows = lg.u_rows();
    let k = lg.label_dim();
    let pdim = p.lab_proj.w.cols();
    debug_assert_eq!(u_rows, 2, "speaker lattice has one label row");

    let n_nodes = t_len * u_rows;
    let mut dblank = vec![0.0; n_nodes];
    let mut dspk = vec![0.0; n_nodes * pdim];
    for t in 0..t_len {
        for u in 0..u_rows {
            let n = t * u_rows + u;
            dblank[n] = weight * lg.blank(t, u);
            let drow = lg.label_row(t, u);
            let dz = &mut dspk[n * pdim..(n + 1) * pdim];
            for (s, &ds) in drow.iter().enumerate().take(k) {
                if ds == 0.0 {
                    continue;
                }
                let prof = inv.profile(s);
                let w = weight * ds;
                for i in 0..pdim {
                    dz[i] += w * prof[i];
                }
            }
        }
    }
    let dblank = Tensor::new_unchecked(vec![n_nodes, 1], dblank);
    let dspk = Tensor::new_unchecked(vec![n_nodes, pdim], dspk);

    let (dw, db, dact_b) = linear_backward(&p.blank, &fwd.joint.act, &dblank);
    acc(&mut g.blank.w, &dw);
    acc(&mut g.blank.b, &db);
    let (dw, db, mut dact) = linear_backward(&p.spk_proj, &fwd.joint.act, &dspk);
    acc(&mut g.spk_proj.w, &dw);
    acc(&mut g.spk_proj.b, &db);
    for (a, b) in dact.data_mut().iter_mut().zip(dact_b.data()) {
        *a += b;
    }

    let (dw, db, de, dlmat) = joint_backward(&p.joint, &fwd.e, &fwd.lmat, &fwd.joint, &dact);
    acc(&mut g.joint.w, &dw);
    acc(&mut g.joint.b, &db);

    let ld = p.start.len();
    for i in 0..ld {
        g.start.data_mut()[i] += dlmat.at2(0, i);
    }
    let prof = Tensor::from_vec(&[1, pdim], inv.profile(fwd.target_idx).to_vec()).unwrap();
    let drow = Tensor::from_vec(&[1, ld], dlmat.row(1).to_vec()).unwrap();
    let (dw, db, _) = linear_backward(&p.lab_proj, &prof, &drow);
    acc(&mut g.lab_proj.w, &dw);
    acc(&mut g.lab_proj.b, &db);

    let (dwx, dwh, db, dstream) = gru_seq_backward(&p.enc, stream, &fwd.cache_e, &de);
    acc(&mut g.enc.wx, &dwx);
    acc(&mut g.enc.wh, &dwh);
    acc(&mut g.enc.b, &db);
    dstream
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{apply_latency_penalty, scale_blank_gradient, transducer_grad, transducer_loss, LatencyConfig};
    use crate::neural::params::{Architecture, ModelParams};
    use crate::oracle::finite_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SidParams {
        let arch = Architecture {
            in_dim: 3,
            vocab: 3,
            profile_dim: 3,
            unmix_channels: 2,
            asr_width: 2,
            asr_embed: 2,
            asr_label_width: 2,
            asr_joint: 2,
            sid_width: 3,
            sid_label_dim: 2,
            sid_joint: 3,
            time_reduction: false,
        };
        ModelParams::init(&arch, 21).unwrap().sid
    }

    fn inv3() -> SpeakerInventory {
        SpeakerInventory::new(
            vec![4, 9, 2],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 0.6, 0.8],
                vec![-0.6, 0.8, 0.0],
            ],
        )
        .unwrap()
    }

    fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new_unchecked(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn lattice_scores_every_inventory_speaker() {
        let p = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stream = rt(&mut rng, &[4, 3]);
        let f = sid_forward(&p, &stream, &inv3(), 1).unwrap();
        assert_eq!(f.lattice.t_len(), 4);
        assert_eq!(f.lattice.u_len(), 1);
        assert_eq!(f.lattice.label_dim(), 3);
        assert_eq!(f.lattice.target(0), 1);
        let (loss, _) = transducer_loss(&f.lattice).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }

    #[test]
    fn rejects_bad_target_or_profile_dim() {
        let p = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stream = rt(&mut rng, &[3, 3]);
        assert!(sid_forward(&p, &stream, &inv3(), 3).is_err());
        let bad = SpeakerInventory::new(vec![1, 2], vec![vec![1.0, 0.0]; 2]).unwrap();
        assert!(matches!(sid_forward(&p, &stream, &bad, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn head_gradient_matches_finite_differences_with_latency_shaping() {
        let p = tiny();
        let inv = inv3();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stream = rt(&mut rng, &[4, 3]);
        // Penalty active so its interaction with the head is covered.
        let cfg = LatencyConfig { alpha: 1.0, beta: 0.3, t_buffer: 1, t_delay: 1 };

        let run = |p: &SidParams, stream: &Tensor| -> f64 {
            let mut f = sid_forward(p, stream, &inv, 2).unwrap();
            apply_latency_penalty(&mut f.lattice, &cfg).unwrap();
            transducer_loss(&f.lattice).unwrap().0
        };

        let mut f = sid_forward(&p, &stream, &inv, 2).unwrap();
        apply_latency_penalty(&mut f.lattice, &cfg).unwrap();
        let (_, occ) = transducer_loss(&f.lattice).unwrap();
        let lg = transducer_grad(&f.lattice, &occ).unwrap();
        let mut grads = zeroed();
        let dstream = sid_backward(&p, &stream, &inv, &f, &lg, 1.0, &mut grads);

        let checks: Vec<(&str, &Tensor, &Tensor)> = vec![
            ("enc.wx", &grads.enc.wx, &p.enc.wx),
            ("enc.wh", &grads.enc.wh, &p.enc.wh),
            ("enc.b", &grads.enc.b, &p.enc.b),
            ("start", &grads.start, &p.start),
            ("lab_proj.w", &grads.lab_proj.w, &p.lab_proj.w),
            ("lab_proj.b", &grads.lab_proj.b, &p.lab_proj.b),
            ("joint.w", &grads.joint.w, &p.joint.w),
            ("joint.b", &grads.joint.b, &p.joint.b),
            ("blank.w", &grads.blank.w, &p.blank.w),
            ("blank.b", &grads.blank.b, &p.blank.b),
            ("spk_proj.w", &grads.spk_proj.w, &p.spk_proj.w),
            ("spk_proj.b", &grads.spk_proj.b, &p.spk_proj.b),
        ];
        for (name, got, base) in checks {
            let fd = finite_diff(
                |v: &[f64]| {
                    let mut q = p.clone();
                    slot_mut(&mut q, name).data_mut().copy_from_slice(v);
                    run(&q, &stream)
                },
                base.data(),
                1e-5,
            );
            for (i, (g, e)) in got.data().iter().zip(fd.iter()).enumerate() {
                let close = (g.abs() <= 1e-8 && e.abs() <= 1e-8)
                    || (g - e).abs() / g.abs().max(e.abs()) <= 1e-4;
                assert!(close, "{name} coord {i}: grad {g} vs fd {e}");
            }
        }
        let fd = finite_diff(
            |v: &[f64]| run(&p, &Tensor::new_unchecked(vec![4, 3], v.to_vec())),
            stream.data(),
            1e-5,
        );
        for (i, (g, e)) in dstream.data().iter().zip(fd.iter()).enumerate() {
            let close = (g.abs() <= 1e-8 && e.abs() <= 1e-8)
                || (g - e).abs() / g.abs().max(e.abs()) <= 1e-4;
            assert!(close, "stream coord {i}: grad {g} vs fd {e}");
        }
    }

    #[test]
    fn blank_scaling_reaches_only_blank_projection_paths() {
        // With the blank gradient scaled to near zero, the blank
        // projection's weight gradient shrinks by the same factor while
        // the speaker projection's is untouched.
        let p = tiny();
        let inv = inv3();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let stream = rt(&mut rng, &[4, 3]);
        let f = sid_forward(&p, &stream, &inv, 0).unwrap();
        let (_, occ) = transducer_loss(&f.lattice).unwrap();
        let lg_full = transducer_grad(&f.lattice, &occ).unwrap();
        let mut lg_scaled = transducer_grad(&f.lattice, &occ).unwrap();
        scale_blank_gradient(&mut lg_scaled, 0.25).unwrap();

        let mut g_full = zeroed();
        let mut g_scaled = zeroed();
        sid_backward(&p, &stream, &inv, &f, &lg_full, 1.0, &mut g_full);
        sid_backward(&p, &stream, &inv, &f, &lg_scaled, 1.0, &mut g_scaled);
        for (a, b) in g_full.blank.w.data().iter().zip(g_scaled.blank.w.data()) {
            assert!((b - 0.25 * a).abs() <= 1e-12 * a.abs().max(1.0));
        }
        for (a, b) in g_full.spk_proj.w.data().iter().zip(g_scaled.spk_proj.w.data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "speaker path must not change");
        }
    }

    fn zeroed() -> SidParams {
        let mut p = tiny();
        for t in [
            &mut p.enc.wx, &mut p.enc.wh, &mut p.enc.b,
            &mut p.start,
            &mut p.lab_proj.w, &mut p.lab_proj.b,
            &mut p.joint.w, &mut p.joint.b,
            &mut p.blank.w, &mut p.blank.b,
            &mut p.spk_proj.w, &mut p.spk_proj.b,
        ] {
            t.data_mut().fill(0.0);
        }
        p
    }

    fn slot_mut<'a>(p: &'a mut SidParams, name: &str) -> &'a mut Tensor {
        match name {
            "enc.wx" => &mut p.enc.wx,
            "enc.wh" => &mut p.enc.wh,
            "enc.b" => &mut p.enc.b,
            "start" => &mut p.start,
            "lab_proj.w" => &mut p.lab_proj.w,
            "lab_proj.b" => &mut p.lab_proj.b,
            "joint.w" => &mut p.joint.w,
            "joint.b" => &mut p.joint.b,
            "blank.w" => &mut p.blank.w,
            "blank.b" => &mut p.blank.b,
            "spk_proj.w" => &mut p.spk_proj.w,
            _ => &mut p.spk_proj.b,
        }
    }
}

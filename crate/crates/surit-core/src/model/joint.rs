//! Two-sided joint network shared by both transducer heads. The layer
//! is one linear map over the concatenation of an audio row and a label
//! row followed by tanh; because the map is linear, it is evaluated as
//! two half-matrix products so each side is projected once instead of
//! once per lattice node:
//!
//!   act(t, u) = tanh(Wa a_t + Wl l_u + b)
//!
//! where the stored weight is [Wa | Wl] in column blocks.

use crate::neural::ops::Linear;
use crate::neural::tensor::Tensor;

pub(crate) struct JointForward {
    /// Audio-side input width; the weight's column split point.
    split: usize,
    /// [T*(U+1), j] tanh activations, node index t*(U+1)+u. The halves
    /// are not kept: the backward pass only needs the activations.
    pub act: Tensor,
}

pub(crate) fn joint_forward(l: &Linear, audio: &Tensor, label: &Tensor) -> JointForward {
    let j = l.w.rows();
    let split = audio.cols();
    debug_assert_eq!(l.w.cols(), audio.cols() + label.cols());
    let wd = l.w.data();
    let bd = l.b.data();
    let (t_len, u_rows) = (audio.rows(), label.rows());

    let mut fpart = vec![0.0; t_len * j];
    for t in 0..t_len {
        let a = audio.row(t);
        let out = &mut fpart[t * j..(t + 1) * j];
        for o in 0..j {
            let w = &wd[o * l.w.cols()..o * l.w.cols() + split];
            let mut s = 0.0;
            for i in 0..split {
                s += w[i] * a[i];
            }
            out[o] = s;
        }
    }
    let mut gpart = vec![0.0; u_rows * j];
    let lcols = label.cols();
    for u in 0..u_rows {
        let lr = label.row(u);
        let out = &mut gpart[u * j..(u + 1) * j];
        for o in 0..j {
            let w = &wd[o * l.w.cols() + split..(o + 1) * l.w.cols()];
            let mut s = bd[o];
            for i in 0..lcols {
                s += w[i] * lr[i];
            }
            out[o] = s;
        }
    }
    let mut act = vec![0.0; t_len * u_rows * j];
    for t in 0..t_len {
        let f = &fpart[t * j..(t + 1) * j];
        for u in 0..u_rows {
            let g = &gpart[u * j..(u + 1) * j];
            let node = &mut act[(t * u_rows + u) * j..(t * u_rows + u + 1) * j];
            for o in 0..j {
                node[o] = (f[o] + g[o]).tanh();
            }
        }
    }
    JointForward { split, act: Tensor::new_unchecked(vec![t_len * u_rows, j], act) }
}

/// Backward from the gradient at the activations. Returns
/// (dw, db, daudio, dlabel) with dw in the stored [Wa | Wl] layout.
pub(crate) fn joint_backward(
    l: &Linear,
    audio: &Tensor,
    label: &Tensor,
    fwd: &JointForward,
    dact: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let j = l.w.rows();
    let cols = l.w.cols();
    let split = fwd.split;
    let lcols = cols - split;
    let (t_len, u_rows) = (audio.rows(), label.rows());
    let wd = l.w.data();

    // Through tanh, then pool the grid gradient onto each side: every
    // audio frame feeds U+1 nodes and every label row feeds T nodes.
    let mut dfagg = vec![0.0; t_len * j];
    let mut dgagg = vec![0.0; u_rows * j];
    for t in 0..t_len {
        for u in 0..u_rows {
            let node = t * u_rows + u;
            let a = fwd.act.row(node);
            let g = dact.row(node);
            let fa = &mut dfagg[t * j..(t + 1) * j];
            let ga = &mut dgagg[u * j..(u + 1) * j];
            for o in 0..j {
                let dpre = g[o] * (1.0 - a[o] * a[o]);
                fa[o] += dpre;
                ga[o] += dpre;
            }
        }
    }

    let mut dw = vec![0.0; j * cols];
    let mut db = vec![0.0; j];
    let mut daudio = vec![0.0; t_len * split];
    let mut dlabel = vec![0.0; u_rows * lcols];
    for t in 0..t_len {
        let a = audio.row(t);
        let fa = &dfagg[t * j..(t + 1) * j];
        let da = &mut daudio[t * split..(t + 1) * split];
        for o in 0..j {
            let g = fa[o];
            if g == 0.0 {
                continue;
            }
            let wrow = &wd[o * cols..o * cols + split];
            let dwrow = &mut dw[o * cols..o * cols + split];
            for i in 0..split {
                dwrow[i] += g * a[i];
                da[i] += g * wrow[i];
            }
        }
    }
    for u in 0..u_rows {
        let lr = label.row(u);
        let ga = &dgagg[u * j..(u + 1) * j];
        let dl = &mut dlabel[u * lcols..(u + 1) * lcols];
        for o in 0..j {
            let g = ga[o];
            if g == 0.0 {
                continue;
            }
            // The bias reaches every node exactly once; counting it on
            // the label side covers the whole grid.
            db[o] += g;
            let wrow = &wd[o * cols + split..(o + 1) * cols];
            let dwrow = &mut dw[o * cols + split..(o + 1) * cols];
            for i in 0..lcols {
                dwrow[i] += g * lr[i];
                dl[i] += g * wrow[i];
            }
        }
    }
    (
        Tensor::new_unchecked(vec![j, cols], dw),
        Tensor::new_unchecked(vec![j], db),
        Tensor::new_unchecked(vec![t_len, split], daudio),
        Tensor::new_unchecked(vec![u_rows, lcols], dlabel),
    )
}

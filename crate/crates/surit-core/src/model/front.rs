//! Masking front-end and the optional frame-rate halving. The splitter
//! runs two small conv stacks over the spliced mixture: one yields a
//! sigmoid mask M, the other a shared encoding H. Stream one is M*H and
//! stream two is the residual H - M*H, and the two streams add back up
//! to H bitwise: the larger share is computed by multiplication and the
//! smaller as the residual, which keeps the subtraction exact
//! (Sterbenz), so no probability mass is created or lost by rounding.

use super::acc;
use crate::neural::ops::{self, Linear};
use crate::neural::params::UnmixParams;
use crate::neural::tensor::Tensor;

/// Forward activations of the splitter kept for the backward pass.
pub struct UnmixForward {
    x: Tensor,
    z1: Tensor,
    /// Sigmoid mask, every entry strictly inside (0,1).
    pub m: Tensor,
    e1: Tensor,
    /// Shared encoding the mask splits.
    pub h: Tensor,
    pub h1: Tensor,
    pub h2: Tensor,
}

pub fn unmix_forward(p: &UnmixParams, x: &Tensor) -> UnmixForward {
    let z1 = ops::tanh(&ops::conv1d(&p.mask1, x));
    let m = ops::sigmoid(&ops::conv1d(&p.mask2, &z1));
    let e1 = ops::tanh(&ops::conv1d(&p.enc1, x));
    let h = ops::conv1d(&p.enc2, &e1);
    let n = h.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let (hv, mv) = (h.data()[i], m.data()[i]);
        // Larger share by product, smaller as the residual: the
        // subtrahend then lies in [hv/2, hv], so the subtraction is
        // exact (Sterbenz) and the shares sum back to hv bitwise.
        if mv >= 0.5 {
            d1[i] = mv * hv;
            d2[i] = hv - d1[i];
        } else {
            d2[i] = (1.0 - mv) * hv;
            d1[i] = hv - d2[i];
        }
    }
    let h1 = Tensor::new_unchecked(h.shape().to_vec(), d1);
    let h2 = Tensor::new_unchecked(h.shape().to_vec(), d2);
    UnmixForward { x: x.clone(), z1, m, e1, h, h1, h2 }
}

/// Accumulates splitter parameter gradients from the two stream
/// gradients. The input is data, so its gradient is dropped.
pub fn unmix_backward(
    p: &UnmixParams,
    fwd: &UnmixForward,
    gh1: &Tensor,
    gh2: &Tensor,
    grads: &mut UnmixParams,
) {
    // H1 = M*H, H2 = H - H1: dH = g2 + (g1 - g2)*M, dM = (g1 - g2)*H.
    // The residual-order branch in the forward changes only rounding,
    // not derivatives, so one formula covers both branches.
    let n = fwd.h.len();
    let mut dh = vec![0.0; n];
    let mut dm = vec![0.0; n];
    let (g1, g2) = (gh1.data(), gh2.data());
    let (md, hd) = (fwd.m.data(), fwd.h.data());
    for i in 0..n {
        let diff = g1[i] - g2[i];
        dh[i] = g2[i] + diff * md[i];
        dm[i] = diff * hd[i];
    }
    let dh = Tensor::new_unchecked(fwd.h.shape().to_vec(), dh);
    let dm = Tensor::new_unchecked(fwd.m.shape().to_vec(), dm);

    let (dw, db, de1) = ops::conv1d_backward(&p.enc2, &fwd.e1, &dh);
    acc(&mut grads.enc2.w, &dw);
    acc(&mut grads.enc2.b, &db);
    let db1 = ops::tanh_backward(&fwd.e1, &de1);
    let (dw, db, _) = ops::conv1d_backward(&p.enc1, &fwd.x, &db1);
    acc(&mut grads.enc1.w, &dw);
    acc(&mut grads.enc1.b, &db);

    let da2 = ops::sigmoid_backward(&fwd.m, &dm);
    let (dw, db, dz1) = ops::conv1d_backward(&p.mask2, &fwd.z1, &da2);
    acc(&mut grads.mask2.w, &dw);
    acc(&mut grads.mask2.b, &db);
    let da1 = ops::tanh_backward(&fwd.z1, &dz1);
    let (dw, db, _) = ops::conv1d_backward(&p.mask1, &fwd.x, &da1);
    acc(&mut grads.mask1.w, &dw);
    acc(&mut grads.mask1.b, &db);
}

/// Frame-rate halving: adjacent frame pairs concatenated and projected
/// back to the stream width.
pub struct TimeRedForward {
    t_in: usize,
    paired: Tensor,
    pub out: Tensor,
}

pub fn time_red_forward(l: &Linear, x: &Tensor) -> TimeRedForward {
    let paired = ops::pair_frames(x);
    let out = ops::linear(l, &paired);
    TimeRedForward { t_in: x.rows(), paired, out }
}

/// Returns the gradient at the un-halved input; a dropped odd trailing
/// frame gets zero.
pub fn time_red_backward(l: &Linear, fwd: &TimeRedForward, dy: &Tensor, grads: &mut Linear) -> Tensor {
    let (dw, db, dpaired) = ops::linear_backward(l, &fwd.paired, dy);
    acc(&mut grads.w, &dw);
    acc(&mut grads.b, &db);
    ops::unpair_frames(&dpaired, fwd.t_in)
}

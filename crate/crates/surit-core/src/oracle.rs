//! Brute-force reference implementations used only for verification.
//!
//! `enumerate_loss` walks every monotone alignment path of a lattice and
//! sums path probabilities in log space; it must agree with the dynamic
//! program in `lattice` to near machine precision on small instances.
//! `finite_diff` estimates gradients by central differences. Neither
//! function is used by training or decoding.

use crate::lattice::AlignmentLattice;
use crate::{Error, Result};

/// Hard cap on `(T-1) + U` total moves; beyond this the path count
/// C(T-1+U, U) makes enumeration pointless as a test oracle.
pub const ENUM_MOVE_BOUND: usize = 20;

/// Every alignment path of a lattice, scored move by move.
pub struct PathEnumeration {
    /// Log-probability of each complete path, in DFS order (blank move
    /// explored before label move at every node).
    pub path_log_probs: Vec<f64>,
    /// -logsumexp over all paths.
    pub loss: f64,
}

/// Number of monotone paths from the start node to the terminal node:
/// interleavings of T-1 blank moves with U label moves, C(T-1+U, U).
pub fn path_count(t_len: usize, u_len: usize) -> u64 {
    let n = (t_len - 1 + u_len) as u64;
    let k = u_len as u64;
    // Multiplicative binomial; exact in u64 for n <= 20.
    let mut c = 1u64;
    for i in 0..k.min(n - k) {
        c = c * (n - i) / (i + 1);
    }
    c
}

/// Exact loss by enumerating all alignment paths.
///
/// A path starts at node (1,0); a blank move at (t,u) advances to
/// (t+1,u), a label move consumes the next reference label and advances
/// to (t,u+1); on arrival at (T,U) the path closes with one final blank
/// that consumes the last frame. The path probability is the product of
/// its move probabilities, so a lattice with a single node and no
/// reference labels has one path whose probability is that node's blank
/// mass.
pub fn enumerate_loss(lat: &AlignmentLattice) -> Result<PathEnumeration> {
    let moves = lat.t_len() - 1 + lat.u_len();
    if moves > ENUM_MOVE_BOUND {
        return Err(Error::TooLarge { moves, bound: ENUM_MOVE_BOUND });
    }
    let mut path_log_probs = Vec::with_capacity(path_count(lat.t_len(), lat.u_len()) as usize);
    walk(lat, 0, 0, 0.0, &mut path_log_probs);
    let loss = -log_sum_exp(&path_log_probs);
    Ok(PathEnumeration { path_log_probs, loss })
}

fn walk(lat: &AlignmentLattice, t: usize, u: usize, acc: f64, out: &mut Vec<f64>) {
    let last_t = lat.t_len() - 1;
    let last_u = lat.u_len();
    let (lp_blank, lp_labels) = lat.outcome_logprobs(t, u);
    if t == last_t && u == last_u {
        out.push(acc + lp_blank);
        return;
    }
    if t < last_t {
        walk(lat, t + 1, u, acc + lp_blank, out);
    }
    if u < last_u {
        walk(lat, t, u + 1, acc + lp_labels[lat.target(u)], out);
    }
}

/// Central finite-difference gradient of `f` at `x`: coordinate i gets
/// (f(x + h e_i) - f(x - h e_i)) / 2h.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let x_i = x[i];
        probe[i] = x_i + step;
        let up = f(&probe);
        probe[i] = x_i - step;
        let down = f(&probe);
        probe[i] = x_i;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

pub(crate) fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

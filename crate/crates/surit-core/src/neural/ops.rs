//! Layer primitives with explicit backward passes. Forward functions
//! return outputs (plus caches where the backward needs intermediate
//! activations); every `*_backward` takes the upstream gradient and
//! returns parameter gradients and, where meaningful, the input
//! gradient. All of them are pure and deterministic.

use super::tensor::Tensor;
use crate::{Error, Result};

// ── dense ────────────────────────────────────────────────────────────

/// Fully connected layer, w: [out, in], b: [out].
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

/// y[r] = w x[r] + b for every row of x.
pub fn linear(l: &Linear, x: &Tensor) -> Tensor {
    let (out, inp) = (l.w.shape()[0], l.w.shape()[1]);
    debug_assert_eq!(x.cols(), inp, "linear input dim");
    let rows = x.rows();
    let wd = l.w.data();
    let bd = l.b.data();
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        let xr = x.row(r);
        let yr = &mut y[r * out..(r + 1) * out];
        for o in 0..out {
            let wrow = &wd[o * inp..(o + 1) * inp];
            let mut acc = bd[o];
            for i in 0..inp {
                acc += wrow[i] * xr[i];
            }
            yr[o] = acc;
        }
    }
    Tensor::new_unchecked(vec![rows, out], y)
}

pub fn linear_backward(l: &Linear, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out, inp) = (l.w.shape()[0], l.w.shape()[1]);
    let rows = x.rows();
    debug_assert_eq!(dy.rows(), rows);
    debug_assert_eq!(dy.cols(), out);
    let wd = l.w.data();
    let mut dw = vec![0.0; out * inp];
    let mut db = vec![0.0; out];
    let mut dx = vec![0.0; rows * inp];
    for r in 0..rows {
        let xr = x.row(r);
        let dyr = dy.row(r);
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wrow = &wd[o * inp..(o + 1) * inp];
            let dwrow = &mut dw[o * inp..(o + 1) * inp];
            for i in 0..inp {
                dwrow[i] += g * xr[i];
                dxr[i] += g * wrow[i];
            }
        }
    }
    (
        Tensor::new_unchecked(l.w.shape().to_vec(), dw),
        Tensor::new_unchecked(l.b.shape().to_vec(), db),
        Tensor::new_unchecked(vec![rows, inp], dx),
    )
}

// ── elementwise ──────────────────────────────────────────────────────

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
    Tensor::new_unchecked(x.shape().to_vec(), data)
}

/// Backward from the forward *output* y: dx = dy * y * (1 - y).
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| g * yv * (1.0 - yv))
        .collect();
    Tensor::new_unchecked(y.shape().to_vec(), data)
}

pub fn tanh(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.tanh()).collect();
    Tensor::new_unchecked(x.shape().to_vec(), data)
}

/// Backward from the forward output y: dx = dy * (1 - y^2).
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&yv, &g)| g * (1.0 - yv * yv))
        .collect();
    Tensor::new_unchecked(y.shape().to_vec(), data)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut y = vec![0.0; rows * cols];
    for r in 0..rows {
        let xr = x.row(r);
        let m = xr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let yr = &mut y[r * cols..(r + 1) * cols];
        let mut z = 0.0;
        for c in 0..cols {
            yr[c] = (xr[c] - m).exp();
            z += yr[c];
        }
        for v in yr.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new_unchecked(vec![rows, cols], y)
}

/// Row-wise softmax backward from the output: dx_i = y_i (dy_i - sum_j dy_j y_j).
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let (rows, cols) = (y.rows(), y.cols());
    let mut dx = vec![0.0; rows * cols];
    for r in 0..rows {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        let dxr = &mut dx[r * cols..(r + 1) * cols];
        for c in 0..cols {
            dxr[c] = yr[c] * (dyr[c] - dot);
        }
    }
    Tensor::new_unchecked(vec![rows, cols], dx)
}

// ── 1-D convolution over time ────────────────────────────────────────

/// Convolution along the time axis, w: [out, in, k] with odd k, zero
/// padding so the output keeps the input length.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
}

pub fn conv1d(l: &ConvLayer, x: &Tensor) -> Tensor {
    let (out, inp, k) = (l.w.shape()[0], l.w.shape()[1], l.w.shape()[2]);
    debug_assert!(k % 2 == 1, "conv kernel must be odd for same-length output");
    debug_assert_eq!(x.cols(), inp);
    let t_len = x.rows();
    let half = k / 2;
    let wd = l.w.data();
    let bd = l.b.data();
    let mut y = vec![0.0; t_len * out];
    for t in 0..t_len {
        let yr = &mut y[t * out..(t + 1) * out];
        for o in 0..out {
            let mut acc = bd[o];
            for dk in 0..k {
                let src = t as isize + dk as isize - half as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let xr = x.row(src as usize);
                let wrow = &wd[(o * inp) * k + dk..];
                for i in 0..inp {
                    acc += wrow[i * k] * xr[i];
                }
            }
            yr[o] = acc;
        }
    }
    Tensor::new_unchecked(vec![t_len, out], y)
}

pub fn conv1d_backward(l: &ConvLayer, x: &Tensor, dy: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (out, inp, k) = (l.w.shape()[0], l.w.shape()[1], l.w.shape()[2]);
    let t_len = x.rows();
    let half = k / 2;
    let wd = l.w.data();
    let mut dw = vec![0.0; out * inp * k];
    let mut db = vec![0.0; out];
    let mut dx = vec![0.0; t_len * inp];
    for t in 0..t_len {
        let dyr = dy.row(t);
        for o in 0..out {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            for dk in 0..k {
                let src = t as isize + dk as isize - half as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let s = src as usize;
                let xr = x.row(s);
                let dxr = &mut dx[s * inp..(s + 1) * inp];
                for i in 0..inp {
                    let wi = (o * inp + i) * k + dk;
                    dw[wi] += g * xr[i];
                    dxr[i] += g * wd[wi];
                }
            }
        }
    }
    (
        Tensor::new_unchecked(l.w.shape().to_vec(), dw),
        Tensor::new_unchecked(l.b.shape().to_vec(), db),
        Tensor::new_unchecked(vec![t_len, inp], dx),
    )
}

// ── embedding ────────────────────────────────────────────────────────

/// Row lookup: out[i] = table[ids[i]].
pub fn embed(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (n, e) = (table.rows(), table.cols());
    let mut y = Vec::with_capacity(ids.len() * e);
    for &id in ids {
        if id >= n {
            return Err(Error::InvalidLabel { label: id, space: n });
        }
        y.extend_from_slice(table.row(id));
    }
    Ok(Tensor::new_unchecked(vec![ids.len(), e], y))
}

/// Scatter-add of upstream rows into the table gradient; repeated ids
/// accumulate.
pub fn embed_backward(table_rows: usize, table_cols: usize, ids: &[usize], dy: &Tensor) -> Tensor {
    let mut dt = vec![0.0; table_rows * table_cols];
    for (i, &id) in ids.iter().enumerate() {
        let dyr = dy.row(i);
        let row = &mut dt[id * table_cols..(id + 1) * table_cols];
        for c in 0..table_cols {
            row[c] += dyr[c];
        }
    }
    Tensor::new_unchecked(vec![table_rows, table_cols], dt)
}

// ── gated recurrent layer ────────────────────────────────────────────

/// Gated recurrent cell; gate rows in wx/wh/b are stacked [reset;
/// update; candidate], each block of height h.
///
///   r = sig(Wr x + Ur h + br)
///   z = sig(Wz x + Uz h + bz)
///   c = tanh(Wc x + Uc (r*h) + bc)
///   h' = z*h + (1-z)*c
///
/// The update gate starts with bias +1 so fresh models retain state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub wx: Tensor,
    pub wh: Tensor,
    pub b: Tensor,
}

impl GruLayer {
    pub fn hidden(&self) -> usize {
        self.wx.shape()[0] / 3
    }

    pub fn input(&self) -> usize {
        self.wx.shape()[1]
    }
}

/// Per-step activations kept for the backward pass.
pub struct GruCache {
    r: Tensor,
    z: Tensor,
    c: Tensor,
    hs: Tensor,
}

impl GruCache {
    /// Hidden states, one row per frame.
    pub fn states(&self) -> &Tensor {
        &self.hs
    }
}

#[inline]
fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn gru_gates(
    l: &GruLayer,
    x: &[f64],
    h_prev: &[f64],
    r: &mut [f64],
    z: &mut [f64],
    c: &mut [f64],
    h_new: &mut [f64],
) {
    let h = l.hidden();
    let inp = l.input();
    let wx = l.wx.data();
    let wh = l.wh.data();
    let b = l.b.data();
    let dot = |wd: &[f64], row: usize, v: &[f64], width: usize| -> f64 {
        let base = row * width;
        let mut acc = 0.0;
        for i in 0..width {
            acc += wd[base + i] * v[i];
        }
        acc
    };
    for j in 0..h {
        r[j] = sig(b[j] + dot(wx, j, x, inp) + dot(wh, j, h_prev, h));
        z[j] = sig(b[h + j] + dot(wx, h + j, x, inp) + dot(wh, h + j, h_prev, h));
    }
    // Candidate sees the reset-gated state.
    for j in 0..h {
        let base = (2 * h + j) * h;
        let mut acc = b[2 * h + j] + dot(wx, 2 * h + j, x, inp);
        for i in 0..h {
            acc += wh[base + i] * (r[i] * h_prev[i]);
        }
        c[j] = acc.tanh();
        h_new[j] = z[j] * h_prev[j] + (1.0 - z[j]) * c[j];
    }
}

/// One recurrent update for streaming use; returns the next state.
pub fn gru_step(l: &GruLayer, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let h = l.hidden();
    let mut r = vec![0.0; h];
    let mut z = vec![0.0; h];
    let mut c = vec![0.0; h];
    let mut h_new = vec![0.0; h];
    gru_gates(l, x, h_prev, &mut r, &mut z, &mut c, &mut h_new);
    h_new
}

/// Runs the cell over all rows of `xs` from a zero initial state.
pub fn gru_seq(l: &GruLayer, xs: &Tensor) -> (Tensor, GruCache) {
    let t_len = xs.rows();
    let h = l.hidden();
    let mut r = vec![0.0; t_len * h];
    let mut z = vec![0.0; t_len * h];
    let mut c = vec![0.0; t_len * h];
    let mut hs = vec![0.0; t_len * h];
    let zero = vec![0.0; h];
    for t in 0..t_len {
        let (head, tail) = hs.split_at_mut(t * h);
        let h_prev: &[f64] = if t == 0 { &zero } else { &head[(t - 1) * h..] };
        gru_gates(
            l,
            xs.row(t),
            h_prev,
            &mut r[t * h..(t + 1) * h],
            &mut z[t * h..(t + 1) * h],
            &mut c[t * h..(t + 1) * h],
            &mut tail[..h],
        );
    }
    let shape = vec![t_len, h];
    let hs = Tensor::new_unchecked(shape.clone(), hs);
    let cache = GruCache {
        r: Tensor::new_unchecked(shape.clone(), r),
        z: Tensor::new_unchecked(shape.clone(), z),
        c: Tensor::new_unchecked(shape, c),
        hs: hs.clone(),
    };
    (hs, cache)
}

/// Backpropagation through time; `dhs` carries one gradient row per
/// frame. Returns (dwx, dwh, db, dxs).
pub fn gru_seq_backward(
    l: &GruLayer,
    xs: &Tensor,
    cache: &GruCache,
    dhs: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let t_len = xs.rows();
    let h = l.hidden();
    let inp = l.input();
    let wh = l.wh.data();
    let wx = l.wx.data();
    let mut dwx = vec![0.0; 3 * h * inp];
    let mut dwh = vec![0.0; 3 * h * h];
    let mut db = vec![0.0; 3 * h];
    let mut dxs = vec![0.0; t_len * inp];
    let mut carry = vec![0.0; h];
    let zero = vec![0.0; h];

    let mut dpre_r = vec![0.0; h];
    let mut dpre_z = vec![0.0; h];
    let mut dpre_c = vec![0.0; h];
    let mut drh = vec![0.0; h];
    let mut dh = vec![0.0; h];

    for t in (0..t_len).rev() {
        let r = cache.r.row(t);
        let z = cache.z.row(t);
        let c = cache.c.row(t);
        let h_prev: &[f64] = if t == 0 { &zero } else { cache.hs.row(t - 1) };
        let dy = dhs.row(t);

        // Total gradient reaching h_t; carry is rebuilt below.
        for j in 0..h {
            dh[j] = dy[j] + carry[j];
        }

        for j in 0..h {
            let dz = dh[j] * (h_prev[j] - c[j]);
            dpre_z[j] = dz * z[j] * (1.0 - z[j]);
            let dc = dh[j] * (1.0 - z[j]);
            dpre_c[j] = dc * (1.0 - c[j] * c[j]);
            carry[j] = dh[j] * z[j];
        }
        // Through the reset-gated state: drh = Uc^T dpre_c.
        for i in 0..h {
            let mut acc = 0.0;
            for j in 0..h {
                acc += wh[(2 * h + j) * h + i] * dpre_c[j];
            }
            drh[i] = acc;
        }
        for i in 0..h {
            let dr = drh[i] * h_prev[i];
            dpre_r[i] = dr * r[i] * (1.0 - r[i]);
            carry[i] += drh[i] * r[i];
        }
        for i in 0..h {
            let mut acc = 0.0;
            for j in 0..h {
                acc += wh[j * h + i] * dpre_r[j] + wh[(h + j) * h + i] * dpre_z[j];
            }
            carry[i] += acc;
        }

        let xr = xs.row(t);
        let dxr = &mut dxs[t * inp..(t + 1) * inp];
        for (block, dpre) in [(0usize, &dpre_r), (1, &dpre_z), (2, &dpre_c)] {
            for j in 0..h {
                let g = dpre[j];
                if g == 0.0 {
                    continue;
                }
                let row = block * h + j;
                db[row] += g;
                let wxb = row * inp;
                for i in 0..inp {
                    dwx[wxb + i] += g * xr[i];
                    dxr[i] += g * wx[wxb + i];
                }
                let whb = row * h;
                if block < 2 {
                    for i in 0..h {
                        dwh[whb + i] += g * h_prev[i];
                    }
                } else {
                    for i in 0..h {
                        dwh[whb + i] += g * (r[i] * h_prev[i]);
                    }
                }
            }
        }
    }
    (
        Tensor::new_unchecked(vec![3 * h, inp], dwx),
        Tensor::new_unchecked(vec![3 * h, h], dwh),
        Tensor::new_unchecked(vec![3 * h], db),
        Tensor::new_unchecked(vec![t_len, inp], dxs),
    )
}

// ── time reduction ───────────────────────────────────────────────────

/// Concatenates adjacent frame pairs, halving the frame count; an odd
/// trailing frame is dropped.
pub fn pair_frames(x: &Tensor) -> Tensor {
    let (t_len, d) = (x.rows(), x.cols());
    let t_out = t_len / 2;
    let mut y = vec![0.0; t_out * 2 * d];
    for t in 0..t_out {
        y[t * 2 * d..t * 2 * d + d].copy_from_slice(x.row(2 * t));
        y[t * 2 * d + d..(t + 1) * 2 * d].copy_from_slice(x.row(2 * t + 1));
    }
    Tensor::new_unchecked(vec![t_out, 2 * d], y)
}

/// Adjoint of `pair_frames`: scatters pair gradients back onto the
/// original frames; a dropped trailing frame gets zero.
pub fn unpair_frames(dy: &Tensor, t_len: usize) -> Tensor {
    let d = dy.cols() / 2;
    let mut dx = vec![0.0; t_len * d];
    for t in 0..dy.rows() {
        dx[2 * t * d..(2 * t + 1) * d].copy_from_slice(&dy.row(t)[..d]);
        dx[(2 * t + 1) * d..(2 * t + 2) * d].copy_from_slice(&dy.row(t)[d..]);
    }
    Tensor::new_unchecked(vec![t_len, d], dx)
}

// ── tests ────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::finite_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
        if a.abs() <= floor && b.abs() <= floor {
            return true;
        }
        (a - b).abs() / a.abs().max(b.abs()) <= tol
    }

    fn assert_grads(analytic: &[f64], fd: &[f64], what: &str) {
        assert_eq!(analytic.len(), fd.len());
        for (i, (a, f)) in analytic.iter().zip(fd.iter()).enumerate() {
            assert!(rel_close(*a, *f, 1e-4, 1e-8), "{what} coord {i}: analytic {a} vs fd {f}");
        }
    }

    /// Scalar probe: weighted sum of all outputs with fixed weights, so
    /// the upstream gradient is just the weight tensor.
    fn probe(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        rt(rng, shape)
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let n = 3;
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.data_mut()[i * n + i] = 1.0;
        }
        let l = Linear { w, b: Tensor::zeros(&[n]) };
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap();
        assert_eq!(linear(&l, &x).data(), x.data());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear { w: rt(&mut rng, &[4, 3]), b: rt(&mut rng, &[4]) };
        let x = rt(&mut rng, &[5, 3]);
        let up = probe(&mut rng, &[5, 4]);
        let (dw, db, dx) = linear_backward(&l, &x, &up);

        let pack =
            |w: &[f64], b: &[f64], x: &[f64]| [w, b, x].concat();
        let flat = pack(l.w.data(), l.b.data(), x.data());
        let fd = finite_diff(
            |v| {
                let l2 = Linear {
                    w: Tensor::from_vec(&[4, 3], v[..12].to_vec()).unwrap(),
                    b: Tensor::from_vec(&[4], v[12..16].to_vec()).unwrap(),
                };
                let x2 = Tensor::from_vec(&[5, 3], v[16..].to_vec()).unwrap();
                dot(&linear(&l2, &x2), &up)
            },
            &flat,
            1e-5,
        );
        let analytic = pack(dw.data(), db.data(), dx.data());
        assert_grads(&analytic, &fd, "linear");
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rt(&mut rng, &[3, 4]);
        let up = probe(&mut rng, &[3, 4]);

        let y = sigmoid(&x);
        let dx = sigmoid_backward(&y, &up);
        let fd = finite_diff(
            |v| dot(&sigmoid(&Tensor::from_vec(&[3, 4], v.to_vec()).unwrap()), &up),
            x.data(),
            1e-5,
        );
        assert_grads(dx.data(), &fd, "sigmoid");

        let y = tanh(&x);
        let dx = tanh_backward(&y, &up);
        let fd = finite_diff(
            |v| dot(&tanh(&Tensor::from_vec(&[3, 4], v.to_vec()).unwrap()), &up),
            x.data(),
            1e-5,
        );
        assert_grads(dx.data(), &fd, "tanh");

        let y = softmax_rows(&x);
        let dx = softmax_rows_backward(&y, &up);
        let fd = finite_diff(
            |v| dot(&softmax_rows(&Tensor::from_vec(&[3, 4], v.to_vec()).unwrap()), &up),
            x.data(),
            1e-5,
        );
        assert_grads(dx.data(), &fd, "softmax");
    }

    #[test]
    fn softmax_of_zeros_is_uniform_and_rows_sum_to_one() {
        let y = softmax_rows(&Tensor::zeros(&[2, 4]));
        for v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = softmax_rows(&rt(&mut rng, &[5, 7]));
        for r in 0..5 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_center_tap_identity() {
        // k=3 kernel with only the center tap set to 1 copies the input.
        let mut w = Tensor::zeros(&[2, 2, 3]);
        for o in 0..2 {
            w.data_mut()[(o * 2 + o) * 3 + 1] = 1.0;
        }
        let l = ConvLayer { w, b: Tensor::zeros(&[2]) };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rt(&mut rng, &[6, 2]);
        assert_eq!(conv1d(&l, &x).data(), x.data());
    }

    #[test]
    fn conv_handles_zero_padded_edges() {
        // Single input/output channel, kernel [1, 2, 4]: y_t = x_{t-1} + 2 x_t + 4 x_{t+1}.
        let l = ConvLayer {
            w: Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 4.0]).unwrap(),
            b: Tensor::zeros(&[1]),
        };
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let y = conv1d(&l, &x);
        assert_eq!(y.data(), &[2.0 + 40.0, 1.0 + 20.0 + 400.0, 10.0 + 200.0]);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = ConvLayer { w: rt(&mut rng, &[3, 2, 3]), b: rt(&mut rng, &[3]) };
        let x = rt(&mut rng, &[5, 2]);
        let up = probe(&mut rng, &[5, 3]);
        let (dw, db, dx) = conv1d_backward(&l, &x, &up);
        let flat = [l.w.data(), l.b.data(), x.data()].concat();
        let fd = finite_diff(
            |v| {
                let l2 = ConvLayer {
                    w: Tensor::from_vec(&[3, 2, 3], v[..18].to_vec()).unwrap(),
                    b: Tensor::from_vec(&[3], v[18..21].to_vec()).unwrap(),
                };
                let x2 = Tensor::from_vec(&[5, 2], v[21..].to_vec()).unwrap();
                dot(&conv1d(&l2, &x2), &up)
            },
            &flat,
            1e-5,
        );
        assert_grads(&[dw.data(), db.data(), dx.data()].concat(), &fd, "conv1d");
    }

    #[test]
    fn embed_looks_up_rows_and_accumulates_repeats() {
        let table = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = embed(&table, &[2, 0, 2]).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let dy = Tensor::from_vec(&[3, 2], vec![1.0, 1.0, 10.0, 10.0, 2.0, 2.0]).unwrap();
        let dt = embed_backward(3, 2, &[2, 0, 2], &dy);
        assert_eq!(dt.data(), &[10.0, 10.0, 0.0, 0.0, 3.0, 3.0]);
        assert!(matches!(embed(&table, &[3]), Err(crate::Error::InvalidLabel { .. })));
    }

    #[test]
    fn gru_seq_matches_streaming_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = GruLayer { wx: rt(&mut rng, &[9, 2]), wh: rt(&mut rng, &[9, 3]), b: rt(&mut rng, &[9]) };
        let xs = rt(&mut rng, &[5, 2]);
        let (hs, _) = gru_seq(&l, &xs);
        let mut h = vec![0.0; 3];
        for t in 0..5 {
            h = gru_step(&l, xs.row(t), &h);
            assert_eq!(hs.row(t), &h[..], "frame {t}");
        }
    }

    #[test]
    fn gru_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = GruLayer { wx: rt(&mut rng, &[9, 2]), wh: rt(&mut rng, &[9, 3]), b: rt(&mut rng, &[9]) };
        let xs = rt(&mut rng, &[6, 2]);
        let (hs, _) = gru_seq(&l, &xs);
        let mut poked = xs.clone();
        poked.data_mut()[4 * 2] += 1.0;
        let (hs2, _) = gru_seq(&l, &poked);
        for t in 0..4 {
            assert_eq!(hs.row(t), hs2.row(t), "state before the poke moved");
        }
        assert_ne!(hs.row(4), hs2.row(4));
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, inp, t_len) = (3, 2, 4);
        let l = GruLayer {
            wx: rt(&mut rng, &[3 * h, inp]),
            wh: rt(&mut rng, &[3 * h, h]),
            b: rt(&mut rng, &[3 * h]),
        };
        let xs = rt(&mut rng, &[t_len, inp]);
        let up = probe(&mut rng, &[t_len, h]);
        let (_, cache) = gru_seq(&l, &xs);
        let (dwx, dwh, db, dxs) = gru_seq_backward(&l, &xs, &cache, &up);
        let flat = [l.wx.data(), l.wh.data(), l.b.data(), xs.data()].concat();
        let (n_wx, n_wh, n_b) = (3 * h * inp, 3 * h * h, 3 * h);
        let fd = finite_diff(
            |v| {
                let l2 = GruLayer {
                    wx: Tensor::from_vec(&[3 * h, inp], v[..n_wx].to_vec()).unwrap(),
                    wh: Tensor::from_vec(&[3 * h, h], v[n_wx..n_wx + n_wh].to_vec()).unwrap(),
                    b: Tensor::from_vec(&[3 * h], v[n_wx + n_wh..n_wx + n_wh + n_b].to_vec())
                        .unwrap(),
                };
                let xs2 =
                    Tensor::from_vec(&[t_len, inp], v[n_wx + n_wh + n_b..].to_vec()).unwrap();
                dot(&gru_seq(&l2, &xs2).0, &up)
            },
            &flat,
            1e-5,
        );
        assert_grads(
            &[dwx.data(), dwh.data(), db.data(), dxs.data()].concat(),
            &fd,
            "gru",
        );
    }

    #[test]
    fn frame_pairing_halves_and_roundtrips_gradients() {
        let x = Tensor::from_vec(&[5, 2], (0..10).map(|v| v as f64).collect()).unwrap();
        let y = pair_frames(&x);
        assert_eq!(y.shape(), &[2, 4]);
        assert_eq!(y.row(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(y.row(1), &[4.0, 5.0, 6.0, 7.0]);
        let dx = unpair_frames(&y, 5);
        assert_eq!(dx.row(4), &[0.0, 0.0], "dropped odd frame gets zero gradient");
        assert_eq!(dx.row(1), &[2.0, 3.0]);
    }
}

//! Exact alignment-lattice losses for streaming transducers.
//!
//! A lattice is a T x (U+1) grid of output distributions. An alignment
//! path starts at node (1,0); a blank move at (t,u) consumes that node's
//! blank probability and advances to (t+1,u); a label move consumes the
//! probability of the next reference label and advances to (t,u+1). A
//! complete path therefore contains exactly T-1 blanks and U labels and
//! ends on arrival at (T,U), which emits nothing. The loss is the exact
//! negative log-marginal over all C(T-1+U, U) paths, computed by a
//! log-space forward-backward pass:
//!
//!   fwd(t,u) = lse( fwd(t-1,u) + lp_blank(t-1,u),
//!                   fwd(t,u-1) + lp_label(t,u-1) )
//!   loss     = -fwd(T,U)
//!
//! Two node factorizations are supported. `Rnnt` runs one softmax over
//! blank plus all labels. `Hat` puts a Bernoulli on the blank logit and
//! scales a label softmax by the leftover mass:
//!
//!   P(blank)   = sigmoid(blank_logit)
//!   P(label k) = (1 - P(blank)) * softmax(label_logits)[k]
//!
//! Latency shaping is built in at the lattice level: a per-frame penalty
//! can be subtracted from every label log-probability before the
//! forward-backward pass (`apply_latency_penalty`), and the blank
//! coordinates of a finished gradient can be damped (`scale_blank_gradient`).
//! Both act on this module's grids, so loss, posteriors and gradients
//! always describe the same modified objective.

use crate::{Error, Result};

// ── node distributions ───────────────────────────────────────────────

/// Raw scores of one lattice node: a blank logit plus one logit per
/// label. Finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLogits {
    blank: f64,
    labels: Vec<f64>,
}

impl NodeLogits {
    pub fn new(blank: f64, labels: Vec<f64>) -> Result<Self> {
        if !blank.is_finite() || labels.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("NodeLogits"));
        }
        Ok(NodeLogits { blank, labels })
    }

    pub fn blank(&self) -> f64 {
        self.blank
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// How a node's logits are turned into outcome probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeMode {
    /// One softmax over blank and all labels jointly.
    Rnnt,
    /// Bernoulli blank via sigmoid; labels get the remaining mass times
    /// a softmax over label logits.
    Hat,
}

/// Joint softmax over (blank, labels): returns log P(blank) and log
/// P(label k). The outcome distribution sums to one.
pub fn rnnt_node_logprobs(node: &NodeLogits) -> (f64, Vec<f64>) {
    let mut m = node.blank;
    for &l in &node.labels {
        m = m.max(l);
    }
    let mut z = (node.blank - m).exp();
    for &l in &node.labels {
        z += (l - m).exp();
    }
    let lse = m + z.ln();
    let lp_blank = node.blank - lse;
    let lp_labels = node.labels.iter().map(|l| l - lse).collect();
    (lp_blank, lp_labels)
}

/// Blank-factored distribution: log sigmoid(blank) for blank, and
/// log(1 - sigmoid(blank)) + log softmax(labels) for each label. Blank
/// mass plus total label mass is one.
pub fn hat_node_logprobs(node: &NodeLogits) -> (f64, Vec<f64>) {
    let lp_blank = -softplus(-node.blank);
    let lp_not_blank = -softplus(node.blank);
    let mut m = f64::NEG_INFINITY;
    for &l in &node.labels {
        m = m.max(l);
    }
    let z: f64 = node.labels.iter().map(|l| (l - m).exp()).sum();
    let lse = m + z.ln();
    let lp_labels = node.labels.iter().map(|l| lp_not_blank + (l - lse)).collect();
    (lp_blank, lp_labels)
}

/// Posterior over an inventory of speaker profiles given a joint
/// encoding `z`: softmax over the dot products profile_k . z, with the
/// max subtracted before exponentiation.
pub fn speaker_posterior(z: &[f64], profiles: &[Vec<f64>]) -> Result<Vec<f64>> {
    if profiles.is_empty() {
        return Err(Error::EmptyInventory);
    }
    let mut scores = Vec::with_capacity(profiles.len());
    for (k, p) in profiles.iter().enumerate() {
        if p.len() != z.len() {
            return Err(Error::Shape(format!(
                "profile {k} has dim {}, encoding has dim {}",
                p.len(),
                z.len()
            )));
        }
        scores.push(p.iter().zip(z).map(|(a, b)| a * b).sum::<f64>());
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - m).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
    Ok(scores)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

// ── the lattice ──────────────────────────────────────────────────────

/// A T x (U+1) grid of node logits, the reference label per row
/// transition, and an optional per-frame label penalty.
#[derive(Debug, Clone)]
pub struct AlignmentLattice {
    mode: LatticeMode,
    t_len: usize,
    /// Reference labels y_1..y_U as indices into each node's label logits.
    targets: Vec<usize>,
    label_dim: usize,
    /// Row-major node storage: index t * (U+1) + u.
    nodes: Vec<NodeLogits>,
    /// Per-frame amount subtracted from every label log-probability.
    penalty: Vec<f64>,
}

impl AlignmentLattice {
    /// Builds a lattice from `t_len * (targets.len() + 1)` nodes in
    /// row-major (t, u) order. All nodes must share one label dimension
    /// and every target must index into it.
    pub fn from_nodes(
        mode: LatticeMode,
        t_len: usize,
        targets: Vec<usize>,
        nodes: Vec<NodeLogits>,
    ) -> Result<Self> {
        if t_len == 0 {
            return Err(Error::EmptyInput("lattice with zero frames"));
        }
        let u_rows = targets.len() + 1;
        if nodes.len() != t_len * u_rows {
            return Err(Error::Shape(format!(
                "lattice needs {} nodes for T={} U={}, got {}",
                t_len * u_rows,
                t_len,
                targets.len(),
                nodes.len()
            )));
        }
        let label_dim = nodes[0].labels.len();
        if label_dim == 0 {
            return Err(Error::EmptyInput("node with zero labels"));
        }
        if let Some(bad) = nodes.iter().find(|n| n.labels.len() != label_dim) {
            return Err(Error::Shape(format!(
                "mixed label dims in lattice: {} vs {}",
                bad.labels.len(),
                label_dim
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= label_dim) {
            return Err(Error::InvalidLabel { label: bad, space: label_dim });
        }
        Ok(AlignmentLattice {
            mode,
            t_len,
            targets,
            label_dim,
            nodes,
            penalty: vec![0.0; t_len],
        })
    }

    pub fn mode(&self) -> LatticeMode {
        self.mode
    }

    /// Number of frames T.
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Number of reference labels U.
    pub fn u_len(&self) -> usize {
        self.targets.len()
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn target(&self, u: usize) -> usize {
        self.targets[u]
    }

    pub fn node(&self, t: usize, u: usize) -> &NodeLogits {
        &self.nodes[t * (self.u_len() + 1) + u]
    }

    pub fn set_node(&mut self, t: usize, u: usize, node: NodeLogits) -> Result<()> {
        if node.labels.len() != self.label_dim {
            return Err(Error::Shape(format!(
                "node label dim {} does not match lattice {}",
                node.labels.len(),
                self.label_dim
            )));
        }
        let u_rows = self.u_len() + 1;
        self.nodes[t * u_rows + u] = node;
        Ok(())
    }

    pub fn penalty(&self) -> &[f64] {
        &self.penalty
    }

    /// Outcome log-probabilities at node (t,u) under the lattice mode,
    /// with the frame's label penalty already subtracted. Blank is
    /// never penalized.
    pub fn outcome_logprobs(&self, t: usize, u: usize) -> (f64, Vec<f64>) {
        let node = self.node(t, u);
        let (lp_blank, mut lp_labels) = match self.mode {
            LatticeMode::Rnnt => rnnt_node_logprobs(node),
            LatticeMode::Hat => hat_node_logprobs(node),
        };
        let pen = self.penalty[t];
        if pen != 0.0 {
            for lp in lp_labels.iter_mut() {
                *lp -= pen;
            }
        }
        (lp_blank, lp_labels)
    }

    /// 64-bit content hash covering mode, shape, targets, logits and
    /// penalties; used to detect mutation between loss and gradient.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.byte(match self.mode {
            LatticeMode::Rnnt => 0,
            LatticeMode::Hat => 1,
        });
        h.usize(self.t_len);
        h.usize(self.targets.len());
        h.usize(self.label_dim);
        for &y in &self.targets {
            h.usize(y);
        }
        for n in &self.nodes {
            h.f64(n.blank);
            for &l in &n.labels {
                h.f64(l);
            }
        }
        for &p in &self.penalty {
            h.f64(p);
        }
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn f64(&mut self, v: f64) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }
    fn usize(&mut self, v: usize) {
        for b in (v as u64).to_le_bytes() {
            self.byte(b);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

// ── latency shaping ──────────────────────────────────────────────────

/// Emission-latency shaping knobs for one stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyConfig {
    /// Blank-gradient damping factor in (0, 1]; 1 leaves gradients alone.
    pub alpha: f64,
    /// Late-emission penalty slope per frame; 0 disables the penalty.
    pub beta: f64,
    /// Frames after stream onset that stay penalty-free.
    pub t_buffer: usize,
    /// Stream onset delay in frames; the penalty clock starts here.
    pub t_delay: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig { alpha: 1.0, beta: 0.0, t_buffer: 3, t_delay: 0 }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Sets the per-frame label penalty to beta * max(0, t - t_buffer - t_delay)
/// using 1-based frame indices, so frames within the grace window stay
/// untouched and later frames pay linearly more for emitting a label.
/// With beta = 0 the lattice is unchanged. Idempotent: penalties are
/// overwritten, not accumulated.
pub fn apply_latency_penalty(lat: &mut AlignmentLattice, cfg: &LatencyConfig) -> Result<()> {
    cfg.validate()?;
    let offset = (cfg.t_buffer + cfg.t_delay) as f64;
    for t in 0..lat.t_len {
        let lateness = (t + 1) as f64 - offset;
        lat.penalty[t] = cfg.beta * lateness.max(0.0);
    }
    Ok(())
}

// ── forward-backward loss ────────────────────────────────────────────

/// Transition posteriors from one loss evaluation. `blank`/`label` hold
/// the probability that a path takes the blank/label move out of each
/// node, normalized by the total path mass. Tied to the exact lattice
/// contents via fingerprint.
#[derive(Debug, Clone)]
pub struct Occupancy {
    t_len: usize,
    u_rows: usize,
    log_z: f64,
    log_z_backward: f64,
    blank: Vec<f64>,
    label: Vec<f64>,
    fingerprint: u64,
}

impl Occupancy {
    pub fn log_likelihood(&self) -> f64 {
        self.log_z
    }

    /// Probability mass of the blank move out of node (t,u).
    pub fn blank_posterior(&self, t: usize, u: usize) -> f64 {
        self.blank[t * self.u_rows + u]
    }

    /// Probability mass of the label move out of node (t,u).
    pub fn label_posterior(&self, t: usize, u: usize) -> f64 {
        self.label[t * self.u_rows + u]
    }

    /// Relative gap between the forward total at (T,U) and the backward
    /// total at (1,0); both accumulate the same path sum.
    pub fn forward_backward_gap(&self) -> f64 {
        let scale = self.log_z.abs().max(self.log_z_backward.abs()).max(1.0);
        (self.log_z - self.log_z_backward).abs() / scale
    }
}

/// Exact negative log-marginal over all alignment paths, plus the
/// transition posteriors needed for the gradient.
///
/// A single-node lattice with no labels has one empty path and loss
/// exactly zero.
pub fn transducer_loss(lat: &AlignmentLattice) -> Result<(f64, Occupancy)> {
    let t_len = lat.t_len;
    let u_len = lat.u_len();
    let u_rows = u_len + 1;
    if let Some(&bad) = lat.targets.iter().find(|&&y| y >= lat.label_dim) {
        return Err(Error::InvalidLabel { label: bad, space: lat.label_dim });
    }

    // Per-node blank log-prob and target-label log-prob (penalty included).
    let mut lp_blank = vec![0.0; t_len * u_rows];
    let mut lp_target = vec![f64::NEG_INFINITY; t_len * u_rows];
    for t in 0..t_len {
        for u in 0..u_rows {
            let (b, labels) = lat.outcome_logprobs(t, u);
            lp_blank[t * u_rows + u] = b;
            if u < u_len {
                lp_target[t * u_rows + u] = labels[lat.targets[u]];
            }
        }
    }

    let idx = |t: usize, u: usize| t * u_rows + u;

    let mut fwd = vec![f64::NEG_INFINITY; t_len * u_rows];
    fwd[idx(0, 0)] = 0.0;
    for t in 0..t_len {
        for u in 0..u_rows {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 0 {
                acc = fwd[idx(t - 1, u)] + lp_blank[idx(t - 1, u)];
            }
            if u > 0 {
                acc = lse2(acc, fwd[idx(t, u - 1)] + lp_target[idx(t, u - 1)]);
            }
            fwd[idx(t, u)] = acc;
        }
    }
    let log_z = fwd[idx(t_len - 1, u_len)];
    if !log_z.is_finite() {
        return Err(Error::NonFinite("transducer_loss forward total"));
    }

    let mut bwd = vec![f64::NEG_INFINITY; t_len * u_rows];
    bwd[idx(t_len - 1, u_len)] = 0.0;
    for t in (0..t_len).rev() {
        for u in (0..u_rows).rev() {
            if t == t_len - 1 && u == u_len {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t + 1 < t_len {
                acc = lp_blank[idx(t, u)] + bwd[idx(t + 1, u)];
            }
            if u < u_len {
                acc = lse2(acc, lp_target[idx(t, u)] + bwd[idx(t, u + 1)]);
            }
            bwd[idx(t, u)] = acc;
        }
    }
    let log_z_backward = bwd[idx(0, 0)];

    let mut blank = vec![0.0; t_len * u_rows];
    let mut label = vec![0.0; t_len * u_rows];
    for t in 0..t_len {
        for u in 0..u_rows {
            if t + 1 < t_len {
                blank[idx(t, u)] =
                    (fwd[idx(t, u)] + lp_blank[idx(t, u)] + bwd[idx(t + 1, u)] - log_z).exp();
            }
            if u < u_len {
                label[idx(t, u)] =
                    (fwd[idx(t, u)] + lp_target[idx(t, u)] + bwd[idx(t, u + 1)] - log_z).exp();
            }
        }
    }

    let occ = Occupancy {
        t_len,
        u_rows,
        log_z,
        log_z_backward,
        blank,
        label,
        fingerprint: lat.fingerprint(),
    };
    debug_assert!(
        occ.forward_backward_gap() < 1e-10,
        "forward/backward disagree: {} vs {}",
        log_z,
        log_z_backward
    );
    Ok((-log_z, occ))
}

// ── gradients ────────────────────────────────────────────────────────

/// Loss gradient with respect to every node logit, in the same grid
/// layout as the lattice.
#[derive(Debug, Clone)]
pub struct LatticeGrad {
    t_len: usize,
    u_rows: usize,
    label_dim: usize,
    /// d loss / d blank_logit(t,u), index t * u_rows + u.
    blank: Vec<f64>,
    /// d loss / d label_logit_k(t,u), index (t * u_rows + u) * label_dim + k.
    labels: Vec<f64>,
}

impl LatticeGrad {
    pub fn t_len(&self) -> usize {
        self.t_len
    }

    /// Number of label rows, U + 1.
    pub fn u_rows(&self) -> usize {
        self.u_rows
    }

    pub fn label_dim(&self) -> usize {
        self.label_dim
    }

    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.blank[t * self.u_rows + u]
    }

    pub fn label(&self, t: usize, u: usize, k: usize) -> f64 {
        self.labels[(t * self.u_rows + u) * self.label_dim + k]
    }

    pub fn label_row(&self, t: usize, u: usize) -> &[f64] {
        let base = (t * self.u_rows + u) * self.label_dim;
        &self.labels[base..base + self.label_dim]
    }

    /// Flattened copy in (blank, labels) node order; handy for
    /// finite-difference comparisons.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.blank.len() * (1 + self.label_dim));
        for i in 0..self.blank.len() {
            out.push(self.blank[i]);
            out.extend_from_slice(&self.labels[i * self.label_dim..(i + 1) * self.label_dim]);
        }
        out
    }
}

/// Analytic gradient of the loss w.r.t. all node logits, from the
/// posteriors of a prior `transducer_loss` call on the identical
/// lattice. Per node with blank-move mass gb and label-move mass gl
/// (reference label y):
///
///   Rnnt: d blank   = (gb+gl) p_blank - gb
///         d label_j = (gb+gl) p_j - gl [j == y]
///   Hat:  d blank   = -gb (1-b) + gl b
///         d label_j = gl (q_j - [j == y])
///
/// The terminal node emits nothing, so its gradient is zero. The frame
/// penalty shifts label log-probs by a constant and drops out of every
/// local derivative.
pub fn transducer_grad(lat: &AlignmentLattice, occ: &Occupancy) -> Result<LatticeGrad> {
    if occ.fingerprint != lat.fingerprint() || occ.t_len != lat.t_len || occ.u_rows != lat.u_len() + 1
    {
        return Err(Error::StaleOccupancy);
    }
    let t_len = lat.t_len;
    let u_len = lat.u_len();
    let u_rows = u_len + 1;
    let dim = lat.label_dim;
    let mut blank = vec![0.0; t_len * u_rows];
    let mut labels = vec![0.0; t_len * u_rows * dim];

    for t in 0..t_len {
        for u in 0..u_rows {
            let n = t * u_rows + u;
            let gb = occ.blank[n];
            let gl = occ.label[n];
            if gb == 0.0 && gl == 0.0 {
                continue;
            }
            let node = lat.node(t, u);
            let row = &mut labels[n * dim..(n + 1) * dim];
            match lat.mode {
                LatticeMode::Rnnt => {
                    let (lpb, lpl) = rnnt_node_logprobs(node);
                    let g = gb + gl;
                    blank[n] = g * lpb.exp() - gb;
                    for k in 0..dim {
                        row[k] = g * lpl[k].exp();
                    }
                }
                LatticeMode::Hat => {
                    let b = 1.0 / (1.0 + (-node.blank).exp());
                    blank[n] = -gb * (1.0 - b) + gl * b;
                    let mut m = f64::NEG_INFINITY;
                    for &l in &node.labels {
                        m = m.max(l);
                    }
                    let mut z = 0.0;
                    for &l in &node.labels {
                        z += (l - m).exp();
                    }
                    for k in 0..dim {
                        row[k] = gl * (node.labels[k] - m).exp() / z;
                    }
                }
            }
            if u < u_len {
                row[lat.targets[u]] -= gl;
            }
        }
    }
    Ok(LatticeGrad { t_len, u_rows, label_dim: dim, blank, labels })
}

/// Damps every blank-logit gradient by `alpha` in (0, 1], leaving label
/// gradients untouched. Pushing down the gradient that rewards blanks
/// makes the trained model emit earlier.
pub fn scale_blank_gradient(grad: &mut LatticeGrad, alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha != 1.0 {
        for g in grad.blank.iter_mut() {
            *g *= alpha;
        }
    }
    Ok(())
}

// ── tests ────────────────────────────────────────────────────────────

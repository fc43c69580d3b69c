//! Model parameters: structure, deterministic initialization, named
//! traversal for the optimizer and finite-difference checks, and a
//! bit-exact checkpoint format (text manifest + raw little-endian f64).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{ConvLayer, GruLayer, Linear};
use super::tensor::Tensor;
use crate::{Error, Result};

/// Width and dimension choices for every block of the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Feature dim entering the unmixing front-end (after splicing).
    pub in_dim: usize,
    /// Token vocabulary size; lattice output adds one blank slot.
    pub vocab: usize,
    /// Speaker profile dimension shared with the dataset.
    pub profile_dim: usize,
    pub unmix_channels: usize,
    pub asr_width: usize,
    pub asr_embed: usize,
    pub asr_label_width: usize,
    pub asr_joint: usize,
    pub sid_width: usize,
    pub sid_label_dim: usize,
    pub sid_joint: usize,
    /// Concatenate adjacent frame pairs after unmixing, halving the
    /// frame rate seen by both heads.
    pub time_reduction: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_dim: 24,
            vocab: 16,
            profile_dim: 16,
            unmix_channels: 32,
            asr_width: 64,
            asr_embed: 16,
            asr_label_width: 32,
            asr_joint: 64,
            sid_width: 32,
            sid_label_dim: 16,
            sid_joint: 32,
            time_reduction: false,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("in_dim", self.in_dim),
            ("vocab", self.vocab),
            ("profile_dim", self.profile_dim),
            ("unmix_channels", self.unmix_channels),
            ("asr_width", self.asr_width),
            ("asr_embed", self.asr_embed),
            ("asr_label_width", self.asr_label_width),
            ("asr_joint", self.asr_joint),
            ("sid_width", self.sid_width),
            ("sid_label_dim", self.sid_label_dim),
            ("sid_joint", self.sid_joint),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("architecture {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Masking front-end: one conv stack produces mask logits, the other
/// the shared encoding that the mask splits.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixParams {
    pub mask1: ConvLayer,
    pub mask2: ConvLayer,
    pub enc1: ConvLayer,
    pub enc2: ConvLayer,
}

/// Token transducer: two recurrent layers over stream audio, an
/// embedding plus one recurrent layer over emitted tokens, and a joint
/// MLP projecting to blank + vocabulary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct AsrParams {
    pub enc1: GruLayer,
    pub enc2: GruLayer,
    /// Token embeddings, row 0 is the start-of-stream token.
    pub embed: Tensor,
    pub lab: GruLayer,
    pub joint: Linear,
    pub out: Linear,
}

/// Speaker transducer: one recurrent layer over stream audio, an
/// embedding-only label side (a learned start vector, then a projection
/// of the emitted speaker's profile), and a joint MLP feeding a scalar
/// blank logit plus a projection into profile space.
#[derive(Debug, Clone, PartialEq)]
pub struct SidParams {
    pub enc: GruLayer,
    pub start: Tensor,
    pub lab_proj: Linear,
    pub joint: Linear,
    pub blank: Linear,
    pub spk_proj: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub unmix: UnmixParams,
    /// Optional frame-rate halving applied to both streams after
    /// unmixing.
    pub time_red: Option<Linear>,
    pub asr: AsrParams,
    pub sid: SidParams,
}

// ── initialization ───────────────────────────────────────────────────

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new_unchecked(shape.to_vec(), data)
}

/// Balanced-variance uniform init over +-sqrt(6 / (fan_in + fan_out)).
fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    uniform(rng, &[rows, cols], (6.0 / (rows + cols) as f64).sqrt())
}

fn init_linear(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Linear {
    Linear { w: glorot(rng, out, inp), b: Tensor::zeros(&[out]) }
}

fn init_conv(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> ConvLayer {
    let limit = (6.0 / ((inp + out) * k) as f64).sqrt();
    ConvLayer { w: uniform(rng, &[out, inp, k], limit), b: Tensor::zeros(&[out]) }
}

fn init_gru(rng: &mut ChaCha8Rng, h: usize, inp: usize) -> GruLayer {
    let lx = (6.0 / (inp + h) as f64).sqrt();
    let lh = (6.0 / (2 * h) as f64).sqrt();
    let mut wx = Tensor::zeros(&[3 * h, inp]);
    let mut wh = Tensor::zeros(&[3 * h, h]);
    for gate in 0..3 {
        let bx = uniform(rng, &[h, inp], lx);
        wx.data_mut()[gate * h * inp..(gate + 1) * h * inp].copy_from_slice(bx.data());
        let bh = uniform(rng, &[h, h], lh);
        wh.data_mut()[gate * h * h..(gate + 1) * h * h].copy_from_slice(bh.data());
    }
    let mut b = Tensor::zeros(&[3 * h]);
    // Update gate opens toward keeping state at the start of training.
    for j in h..2 * h {
        b.data_mut()[j] = 1.0;
    }
    GruLayer { wx, wh, b }
}

/// Mask/encoder conv kernel width in super-frames. Two stacked layers
/// see 2k-1 super-frames, most of a short utterance, which is what lets
/// the masks attribute overlapped energy from the solo head segment.
const CONV_K: usize = 5;

impl ModelParams {
    /// Deterministic initialization: same architecture and seed give
    /// bitwise identical tensors.
    pub fn init(arch: &Architecture, seed: u64) -> Result<ModelParams> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.in_dim;
        let c = arch.unmix_channels;
        let unmix = UnmixParams {
            mask1: init_conv(&mut rng, c, d, CONV_K),
            mask2: init_conv(&mut rng, d, c, CONV_K),
            enc1: init_conv(&mut rng, c, d, CONV_K),
            enc2: init_conv(&mut rng, d, c, CONV_K),
        };
        let time_red = if arch.time_reduction {
            Some(init_linear(&mut rng, d, 2 * d))
        } else {
            None
        };
        let asr = AsrParams {
            enc1: init_gru(&mut rng, arch.asr_width, d),
            enc2: init_gru(&mut rng, arch.asr_width, arch.asr_width),
            embed: glorot(&mut rng, arch.vocab + 1, arch.asr_embed),
            lab: init_gru(&mut rng, arch.asr_label_width, arch.asr_embed),
            joint: init_linear(&mut rng, arch.asr_joint, arch.asr_width + arch.asr_label_width),
            out: init_linear(&mut rng, arch.vocab + 1, arch.asr_joint),
        };
        let sid = SidParams {
            enc: init_gru(&mut rng, arch.sid_width, d),
            start: uniform(&mut rng, &[arch.sid_label_dim], (6.0 / (1 + arch.sid_label_dim) as f64).sqrt()),
            lab_proj: init_linear(&mut rng, arch.sid_label_dim, arch.profile_dim),
            joint: init_linear(&mut rng, arch.sid_joint, arch.sid_width + arch.sid_label_dim),
            blank: init_linear(&mut rng, 1, arch.sid_joint),
            spk_proj: init_linear(&mut rng, arch.profile_dim, arch.sid_joint),
        };
        Ok(ModelParams { unmix, time_red, asr, sid })
    }

    /// Reads the architecture back off the tensor shapes.
    pub fn arch(&self) -> Architecture {
        Architecture {
            in_dim: self.unmix.mask1.w.shape()[1],
            vocab: self.asr.embed.rows() - 1,
            profile_dim: self.sid.spk_proj.w.shape()[0],
            unmix_channels: self.unmix.mask1.w.shape()[0],
            asr_width: self.asr.enc1.hidden(),
            asr_embed: self.asr.embed.cols(),
            asr_label_width: self.asr.lab.hidden(),
            asr_joint: self.asr.joint.w.shape()[0],
            sid_width: self.sid.enc.hidden(),
            sid_label_dim: self.sid.start.shape()[0],
            sid_joint: self.sid.joint.w.shape()[0],
            time_reduction: self.time_red.is_some(),
        }
    }

    /// All tensors with stable dotted names, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::with_capacity(40);
        self.for_each(&mut |n, t| out.push((n.to_string(), t)));
        out
    }

    fn for_each<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        let u = &self.unmix;
        for (n, l) in [("unmix.mask1", &u.mask1), ("unmix.mask2", &u.mask2), ("unmix.enc1", &u.enc1), ("unmix.enc2", &u.enc2)] {
            f(&format!("{n}.w"), &l.w);
            f(&format!("{n}.b"), &l.b);
        }
        if let Some(tr) = &self.time_red {
            f("time_red.w", &tr.w);
            f("time_red.b", &tr.b);
        }
        let a = &self.asr;
        for (n, l) in [("asr.enc1", &a.enc1), ("asr.enc2", &a.enc2), ("asr.lab", &a.lab)] {
            f(&format!("{n}.wx"), &l.wx);
            f(&format!("{n}.wh"), &l.wh);
            f(&format!("{n}.b"), &l.b);
        }
        f("asr.embed", &a.embed);
        for (n, l) in [("asr.joint", &a.joint), ("asr.out", &a.out)] {
            f(&format!("{n}.w"), &l.w);
            f(&format!("{n}.b"), &l.b);
        }
        let s = &self.sid;
        f("sid.enc.wx", &s.enc.wx);
        f("sid.enc.wh", &s.enc.wh);
        f("sid.enc.b", &s.enc.b);
        f("sid.start", &s.start);
        for (n, l) in [("sid.lab_proj", &s.lab_proj), ("sid.joint", &s.joint), ("sid.blank", &s.blank), ("sid.spk_proj", &s.spk_proj)] {
            f(&format!("{n}.w"), &l.w);
            f(&format!("{n}.b"), &l.b);
        }
    }

    /// Mutable traversal in exactly the order of `named`.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::with_capacity(40);
        let u = &mut self.unmix;
        for (n, l) in [("unmix.mask1", &mut u.mask1), ("unmix.mask2", &mut u.mask2), ("unmix.enc1", &mut u.enc1), ("unmix.enc2", &mut u.enc2)] {
            out.push((format!("{n}.w"), &mut l.w));
            out.push((format!("{n}.b"), &mut l.b));
        }
        if let Some(tr) = &mut self.time_red {
            out.push(("time_red.w".into(), &mut tr.w));
            out.push(("time_red.b".into(), &mut tr.b));
        }
        let a = &mut self.asr;
        for (n, l) in [("asr.enc1", &mut a.enc1), ("asr.enc2", &mut a.enc2), ("asr.lab", &mut a.lab)] {
            out.push((format!("{n}.wx"), &mut l.wx));
            out.push((format!("{n}.wh"), &mut l.wh));
            out.push((format!("{n}.b"), &mut l.b));
        }
        out.push(("asr.embed".into(), &mut a.embed));
        for (n, l) in [("asr.joint", &mut a.joint), ("asr.out", &mut a.out)] {
            out.push((format!("{n}.w"), &mut l.w));
            out.push((format!("{n}.b"), &mut l.b));
        }
        let s = &mut self.sid;
        out.push(("sid.enc.wx".into(), &mut s.enc.wx));
        out.push(("sid.enc.wh".into(), &mut s.enc.wh));
        out.push(("sid.enc.b".into(), &mut s.enc.b));
        out.push(("sid.start".into(), &mut s.start));
        for (n, l) in [("sid.lab_proj", &mut s.lab_proj), ("sid.joint", &mut s.joint), ("sid.blank", &mut s.blank), ("sid.spk_proj", &mut s.spk_proj)] {
            out.push((format!("{n}.w"), &mut l.w));
            out.push((format!("{n}.b"), &mut l.b));
        }
        out
    }

    /// Same structure with all values zero; the gradient container.
    pub fn zeros_like(&self) -> ModelParams {
        let mut copy = self.clone();
        for (_, t) in copy.named_mut() {
            t.data_mut().fill(0.0);
        }
        copy
    }

    /// self += a * other, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, a: f64) {
        let theirs = other.named();
        for ((name, t), (oname, o)) in self.named_mut().into_iter().zip(theirs) {
            debug_assert_eq!(name, oname);
            for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
                *x += a * y;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for (_, t) in self.named_mut() {
            for x in t.data_mut() {
                *x *= a;
            }
        }
    }

    /// Euclidean norm over every coordinate of every tensor.
    pub fn global_norm(&self) -> f64 {
        self.named().iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt()
    }

    pub fn flat_len(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, t) in self.named() {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for (_, t) in self.named_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        debug_assert_eq!(at, flat.len());
    }

    // ── checkpoints ──

    /// Writes a text manifest (name, shape, byte offset, byte length per
    /// tensor) followed by the raw little-endian f64 payload. The write
    /// goes to a temp file first and is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let named = self.named();
        let mut header = String::from("surit-params v1\n");
        let mut payload: Vec<u8> = Vec::new();
        for (name, t) in &named {
            let shape = t
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let offset = payload.len();
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            header.push_str(&format!("tensor {name} {shape} {offset} {}\n", t.len() * 8));
        }
        header.push_str(&format!("data {}\n", payload.len()));

        let tmp = path.with_extension("tmp-write");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(header.as_bytes())?;
            f.write_all(&payload)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelParams> {
        let bytes = std::fs::read(path)?;
        let bad = |what: &str| Error::Parse { file: path.display().to_string(), what: what.into() };
        fn next_line(bytes: &[u8], at: usize) -> Option<(usize, String)> {
            let end = bytes[at..].iter().position(|&b| b == b'\n')? + at;
            Some((end + 1, String::from_utf8_lossy(&bytes[at..end]).into_owned()))
        }
        let (mut at, magic) = next_line(&bytes, 0).ok_or_else(|| bad("missing header"))?;
        if magic != "surit-params v1" {
            return Err(bad("not a parameter checkpoint"));
        }
        let mut entries: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
        let data_start;
        loop {
            let (new_at, line) = next_line(&bytes, at).ok_or_else(|| bad("truncated header"))?;
            at = new_at;
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["tensor", name, shape, offset, len] => {
                    let shape: Vec<usize> = shape
                        .split('x')
                        .map(|d| d.parse().map_err(|_| bad("bad shape")))
                        .collect::<Result<_>>()?;
                    let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
                    let len: usize = len.parse().map_err(|_| bad("bad length"))?;
                    entries.push((name.to_string(), shape, offset, len));
                }
                ["data", total] => {
                    let total: usize = total.parse().map_err(|_| bad("bad data length"))?;
                    if bytes.len() - at != total {
                        return Err(bad("payload length mismatch"));
                    }
                    data_start = at;
                    break;
                }
                _ => return Err(bad("unrecognized header line")),
            }
        }
        let mut tensors = Vec::with_capacity(entries.len());
        for (name, shape, offset, len) in entries {
            let n: usize = shape.iter().product();
            if n * 8 != len {
                return Err(bad("tensor length does not match shape"));
            }
            let start = data_start + offset;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let b: [u8; 8] = bytes[start + i * 8..start + (i + 1) * 8]
                    .try_into()
                    .map_err(|_| bad("payload truncated"))?;
                data.push(f64::from_le_bytes(b));
            }
            tensors.push((name, Tensor::new_unchecked(shape, data)));
        }
        ModelParams::from_named(tensors).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            what: e.to_string(),
        })
    }

    /// Rebuilds the structured parameters from named tensors; every
    /// expected tensor must be present and nothing extra.
    pub fn from_named(tensors: Vec<(String, Tensor)>) -> Result<ModelParams> {
        let mut map: HashMap<String, Tensor> = tensors.into_iter().collect();
        let has_time_red = map.contains_key("time_red.w");
        let mut take = |name: &str| -> Result<Tensor> {
            map.remove(name)
                .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))
        };
        let conv = |w: Tensor, b: Tensor| ConvLayer { w, b };
        let lin = |w: Tensor, b: Tensor| Linear { w, b };
        let unmix = UnmixParams {
            mask1: conv(take("unmix.mask1.w")?, take("unmix.mask1.b")?),
            mask2: conv(take("unmix.mask2.w")?, take("unmix.mask2.b")?),
            enc1: conv(take("unmix.enc1.w")?, take("unmix.enc1.b")?),
            enc2: conv(take("unmix.enc2.w")?, take("unmix.enc2.b")?),
        };
        let time_red = if has_time_red {
            Some(lin(take("time_red.w")?, take("time_red.b")?))
        } else {
            None
        };
        let gru = |wx: Tensor, wh: Tensor, b: Tensor| GruLayer { wx, wh, b };
        let asr = AsrParams {
            enc1: gru(take("asr.enc1.wx")?, take("asr.enc1.wh")?, take("asr.enc1.b")?),
            enc2: gru(take("asr.enc2.wx")?, take("asr.enc2.wh")?, take("asr.enc2.b")?),
            embed: take("asr.embed")?,
            lab: gru(take("asr.lab.wx")?, take("asr.lab.wh")?, take("asr.lab.b")?),
            joint: lin(take("asr.joint.w")?, take("asr.joint.b")?),
            out: lin(take("asr.out.w")?, take("asr.out.b")?),
        };
        let sid = SidParams {
            enc: gru(take("sid.enc.wx")?, take("sid.enc.wh")?, take("sid.enc.b")?),
            start: take("sid.start")?,
            lab_proj: lin(take("sid.lab_proj.w")?, take("sid.lab_proj.b")?),
            joint: lin(take("sid.joint.w")?, take("sid.joint.b")?),
            blank: lin(take("sid.blank.w")?, take("sid.blank.b")?),
            spk_proj: lin(take("sid.spk_proj.w")?, take("sid.spk_proj.b")?),
        };
        if let Some(extra) = map.keys().next() {
            return Err(Error::InvalidInput(format!("unexpected tensor {extra}")));
        }
        Ok(ModelParams { unmix, time_red, asr, sid })
    }
}

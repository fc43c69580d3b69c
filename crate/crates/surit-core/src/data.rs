//! Synthetic two-speaker corpus. Each speaker has a fixed voice offset
//! (added to every frame) and a unit-norm profile vector (used by the
//! speaker head). Utterances are token sequences rendered as per-token
//! feature templates plus the voice offset plus Gaussian noise; two
//! utterances are mixed additively with a frame delay on the second.
//!
//! The feature model mimics the sparsity of speech energies: a token
//! lights up a small set of dims with strong positive spikes and the
//! voice offset is a dense positive floor, so frames are non-negative
//! up to observation noise. Non-negativity is what makes the mixture
//! separable by a [0, 1] ratio mask: coordinates add without
//! cancelling, so each stream's share is a valid gate value.
//!
//! Everything is driven by counter-based RNG streams derived from one
//! seed, so datasets are reproducible sample by sample.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::neural::tensor::Tensor;
use crate::{Error, Result};

/// Frames spliced into one super-frame, which is also the decimation
/// stride of the feature pipeline.
pub const SPLICE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub seed: u64,
    pub feat_dim: usize,
    pub vocab: usize,
    pub frames_per_token: usize,
    pub noise_sigma: f64,
    pub pool_speakers: usize,
    pub profile_dim: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Smallest onset delay (in frames) of the second speaker during
    /// training; evaluation allows full overlap from frame zero.
    pub min_delay_frames: usize,
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            feat_dim: 8,
            vocab: 16,
            frames_per_token: 3,
            noise_sigma: 0.1,
            pool_speakers: 40,
            profile_dim: 16,
            train_samples: 2000,
            eval_samples: 200,
            min_tokens: 4,
            max_tokens: 10,
            min_delay_frames: 5,
            k_min: 2,
            k_max: 8,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.feat_dim == 0 || self.vocab == 0 || self.frames_per_token == 0 || self.profile_dim == 0 {
            return bad("feat_dim, vocab, frames_per_token and profile_dim must be positive".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return bad(format!(
                "token range [{}, {}] is invalid",
                self.min_tokens, self.max_tokens
            ));
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return bad(format!("inventory range [{}, {}] is invalid", self.k_min, self.k_max));
        }
        if self.pool_speakers < self.k_max {
            return bad(format!(
                "speaker pool of {} cannot fill inventories of {}",
                self.pool_speakers, self.k_max
            ));
        }
        Ok(())
    }
}

// ── speakers and utterances ──────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: u32,
    /// Unit-norm identity vector consumed by the speaker head.
    pub profile: Vec<f64>,
    /// Constant positive per-frame floor that makes the speaker's audio
    /// recognizable.
    pub voice_offset: Vec<f64>,
}

/// One rendered utterance: the token sequence and its feature frames.
#[derive(Debug, Clone)]
pub struct Utterance {
    /// Tokens in 1..=vocab; 0 is reserved for blank/start everywhere.
    pub tokens: Vec<usize>,
    pub features: Tensor,
}

/// One mixture with everything needed to train and score it.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub utt_id: String,
    pub s1: u32,
    pub s2: u32,
    /// Onset of the second utterance in raw frames.
    pub delay: usize,
    pub k: usize,
    pub y1: Vec<usize>,
    pub y2: Vec<usize>,
    /// Speaker ids the identification head may choose from; contains s1
    /// and s2, order is part of the sample.
    pub inventory: Vec<u32>,
    /// Mixed raw features, [frames, feat_dim].
    pub features: Tensor,
}

// ── seeded streams ───────────────────────────────────────────────────

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for (seed, purpose tag, index).
fn stream(seed: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ tag.rotate_left(17)).wrapping_add(splitmix64(idx)))
}

const TAG_TEMPLATES: u64 = 0x74_65_6d_70;
const TAG_SPEAKERS: u64 = 0x73_70_6b_72;
const TAG_TRAIN: u64 = 0x74_72_61_69;
const TAG_EVAL: u64 = 0x65_76_61_6c;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => TAG_TRAIN,
            Split::Eval => TAG_EVAL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

// ── generation ───────────────────────────────────────────────────────

/// Peak height of a token's feature spikes, well clear of the noise
/// and the voice floor while keeping mixtures in a range the encoder
/// convs handle without saturating.
const TOKEN_GAIN: f64 = 1.5;

/// Feature dims a single token activates.
const TOKEN_DIMS: usize = 2;

/// Height of the per-speaker positive floor. Strong enough that the
/// front-end can attribute overlapped frames and the speaker head can
/// name the voice; weak enough that naming still takes a few frames of
/// evidence over the noise.
const VOICE_SCALE: f64 = 0.5;

/// All size-`a` dim subsets of 0..d (a is 1 or 2 in practice).
fn supports(d: usize, a: usize) -> Vec<Vec<usize>> {
    if a <= 1 || d < 2 {
        return (0..d).map(|i| vec![i]).collect();
    }
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            out.push(vec![i, j]);
        }
    }
    out
}

/// Per-token feature templates, [vocab, feat_dim]: each token spikes a
/// small dim subset and is zero elsewhere. Tokens take distinct subsets
/// while they last (every sane config has plenty), then wrap around and
/// rely on the amplitude jitter to stay tellable apart.
pub fn token_templates(cfg: &DataConfig) -> Tensor {
    let mut rng = stream(cfg.seed, TAG_TEMPLATES, 0);
    let d = cfg.feat_dim;
    let mut subsets = supports(d, TOKEN_DIMS.min(d));
    subsets.shuffle(&mut rng);
    let mut data = vec![0.0; cfg.vocab * d];
    for tok in 0..cfg.vocab {
        for &i in &subsets[tok % subsets.len()] {
            data[tok * d + i] = TOKEN_GAIN * (0.75 + 0.5 * rng.gen::<f64>());
        }
    }
    Tensor::new_unchecked(vec![cfg.vocab, d], data)
}

/// The speaker pool: unit-norm profiles and pairwise distinct voice
/// offsets, all from the dataset seed.
pub fn speaker_pool(cfg: &DataConfig) -> Result<Vec<SyntheticSpeaker>> {
    let mut rng = stream(cfg.seed, TAG_SPEAKERS, 0);
    let mut pool = Vec::with_capacity(cfg.pool_speakers);
    for id in 0..cfg.pool_speakers {
        let mut profile: Vec<f64> = (0..cfg.profile_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = profile.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in profile.iter_mut() {
            *v /= norm;
        }
        let voice_offset = (0..cfg.feat_dim).map(|_| VOICE_SCALE * rng.gen::<f64>()).collect();
        pool.push(SyntheticSpeaker { id: id as u32, profile, voice_offset });
    }
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            let d: f64 = pool[i]
                .voice_offset
                .iter()
                .zip(&pool[j].voice_offset)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "voice offsets of speakers {i} and {j} collide"
                )));
            }
        }
    }
    Ok(pool)
}

/// Renders a token sequence: each token occupies `frames_per_token`
/// frames of template + voice offset + per-element Gaussian noise.
pub fn synth_utterance(
    templates: &Tensor,
    speaker: &SyntheticSpeaker,
    n_tokens: usize,
    cfg: &DataConfig,
    rng: &mut ChaCha8Rng,
) -> Utterance {
    let d = cfg.feat_dim;
    let r = cfg.frames_per_token;
    let tokens: Vec<usize> = (0..n_tokens).map(|_| rng.gen_range(1..=cfg.vocab)).collect();
    let mut feats = vec![0.0; n_tokens * r * d];
    for (ti, &tok) in tokens.iter().enumerate() {
        let template = templates.row(tok - 1);
        for f in 0..r {
            let row = &mut feats[(ti * r + f) * d..(ti * r + f + 1) * d];
            for i in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                row[i] = template[i] + speaker.voice_offset[i] + cfg.noise_sigma * noise;
            }
        }
    }
    Utterance { tokens, features: Tensor::new_unchecked(vec![n_tokens * r, d], feats) }
}

/// Adds the second feature matrix onto the first, starting `delay`
/// frames in; the result spans max(len1, delay + len2) frames.
pub fn mix(u1: &Tensor, u2: &Tensor, delay: i64) -> Result<Tensor> {
    if delay < 0 {
        return Err(Error::InvalidInput(format!("negative onset delay {delay}")));
    }
    let delay = delay as usize;
    if u1.cols() != u2.cols() {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            u1.cols(),
            u2.cols()
        )));
    }
    let d = u1.cols();
    let t_len = u1.rows().max(delay + u2.rows());
    let mut out = vec![0.0; t_len * d];
    for t in 0..u1.rows() {
        out[t * d..(t + 1) * d].copy_from_slice(u1.row(t));
    }
    for t in 0..u2.rows() {
        let row = &mut out[(delay + t) * d..(delay + t + 1) * d];
        for (o, v) in row.iter_mut().zip(u2.row(t)) {
            *o += v;
        }
    }
    Ok(Tensor::new_unchecked(vec![t_len, d], out))
}

/// Training onset delay: uniform over [min_delay, len1], so the second
/// speaker never starts first and always leaves a clean head segment.
pub fn sample_training_delay(rng: &mut ChaCha8Rng, len1: usize, min_delay: usize) -> Result<usize> {
    if len1 < min_delay {
        return Err(Error::ResampleSource { len: len1, min_delay });
    }
    Ok(rng.gen_range(min_delay..=len1))
}

/// Evaluation onset delay: uniform over [0, len1]; full overlap allowed.
pub fn sample_eval_delay(rng: &mut ChaCha8Rng, len1: usize) -> usize {
    rng.gen_range(0..=len1)
}

/// Draws a shuffled inventory of k speaker ids containing both targets
/// plus distinct distractors.
pub fn sample_inventory(
    rng: &mut ChaCha8Rng,
    pool: &[SyntheticSpeaker],
    s1: u32,
    s2: u32,
    k: usize,
) -> Result<Vec<u32>> {
    if s1 == s2 {
        return Err(Error::InvalidInput(format!("inventory targets coincide: {s1}")));
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!("inventory size {k} cannot hold two targets")));
    }
    if pool.len() < k {
        return Err(Error::InvalidConfig(format!(
            "speaker pool of {} cannot fill inventory of {k}",
            pool.len()
        )));
    }
    let mut others: Vec<u32> = pool.iter().map(|s| s.id).filter(|&id| id != s1 && id != s2).collect();
    others.shuffle(rng);
    let mut inv = vec![s1, s2];
    inv.extend(others.into_iter().take(k - 2));
    inv.shuffle(rng);
    Ok(inv)
}

/// Splices `SPLICE` adjacent frames into super-frames and keeps every
/// `SPLICE`-th one: [T, d] -> [T / SPLICE, SPLICE * d], leftover frames
/// dropped.
pub fn feature_pipeline(x: &Tensor) -> Result<Tensor> {
    let (t_len, d) = (x.rows(), x.cols());
    if t_len < SPLICE {
        return Err(Error::InvalidInput(format!(
            "{t_len} frames is too short for {SPLICE}-frame splicing"
        )));
    }
    let t_out = t_len / SPLICE;
    let mut out = vec![0.0; t_out * SPLICE * d];
    for t in 0..t_out {
        for j in 0..SPLICE {
            out[(t * SPLICE + j) * d..(t * SPLICE + j + 1) * d]
                .copy_from_slice(x.row(t * SPLICE + j));
        }
    }
    Ok(Tensor::new_unchecked(vec![t_out, SPLICE * d], out))
}

/// Generates one split. Samples are independent RNG streams, so any
/// prefix of the split is stable under a change of sample count.
pub fn generate_split(cfg: &DataConfig, split: Split) -> Result<Vec<MixtureSample>> {
    cfg.validate()?;
    let templates = token_templates(cfg);
    let pool = speaker_pool(cfg)?;
    let count = match split {
        Split::Train => cfg.train_samples,
        Split::Eval => cfg.eval_samples,
    };
    let mut samples = Vec::with_capacity(count);
    for idx in 0..count {
        let mut rng = stream(cfg.seed, split.tag(), idx as u64);
        let sample = generate_sample(cfg, split, idx, &templates, &pool, &mut rng)?;
        samples.push(sample);
    }
    Ok(samples)
}

fn generate_sample(
    cfg: &DataConfig,
    split: Split,
    idx: usize,
    templates: &Tensor,
    pool: &[SyntheticSpeaker],
    rng: &mut ChaCha8Rng,
) -> Result<MixtureSample> {
    let si1 = rng.gen_range(0..pool.len());
    let si2 = loop {
        let c = rng.gen_range(0..pool.len());
        if c != si1 {
            break c;
        }
    };
    let (spk1, spk2) = (&pool[si1], &pool[si2]);

    // A source too short for the minimum delay is redrawn, per the
    // resample contract; with sane configs the first draw succeeds.
    let mut attempts = 0;
    let (u1, delay) = loop {
        let n1 = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
        let u1 = synth_utterance(templates, spk1, n1, cfg, rng);
        let len1 = u1.features.rows();
        let drawn = match split {
            Split::Train => sample_training_delay(rng, len1, cfg.min_delay_frames),
            Split::Eval => Ok(sample_eval_delay(rng, len1)),
        };
        match drawn {
            Ok(d) => break (u1, d),
            Err(e) => {
                attempts += 1;
                if attempts >= 100 {
                    return Err(e);
                }
            }
        }
    };
    let n2 = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
    let u2 = synth_utterance(templates, spk2, n2, cfg, rng);

    let k = match split {
        Split::Train => rng.gen_range(cfg.k_min..=cfg.k_max),
        Split::Eval => cfg.k_max,
    };
    let inventory = sample_inventory(rng, pool, spk1.id, spk2.id, k)?;
    let features = mix(&u1.features, &u2.features, delay as i64)?;

    Ok(MixtureSample {
        utt_id: format!("{}-{idx:06}", split.name()),
        s1: spk1.id,
        s2: spk2.id,
        delay,
        k,
        y1: u1.tokens,
        y2: u2.tokens,
        inventory,
        features,
    })
}

// ── on-disk form ─────────────────────────────────────────────────────

/// One JSONL manifest line; features live in the companion .bin file as
/// raw little-endian f64 at the recorded offset.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    utt_id: String,
    s1: u32,
    s2: u32,
    delay: usize,
    k: usize,
    y1: Vec<usize>,
    y2: Vec<usize>,
    inventory: Vec<u32>,
    feat_offset: usize,
    feat_rows: usize,
    feat_cols: usize,
}

/// A generated corpus: the shared speaker pool plus one set of samples.
#[derive(Debug)]
pub struct Dataset {
    pub speakers: Vec<SyntheticSpeaker>,
    pub samples: Vec<MixtureSample>,
}

impl Dataset {
    pub fn generate(cfg: &DataConfig, split: Split) -> Result<Dataset> {
        Ok(Dataset { speakers: speaker_pool(cfg)?, samples: generate_split(cfg, split)? })
    }

    pub fn speaker(&self, id: u32) -> Result<&SyntheticSpeaker> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or(Error::UnknownSpeaker(id))
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `dir/speakers.json`, and per split a `<split>.jsonl` manifest
/// plus `<split>.bin` feature payload. All files are written atomically.
pub fn write_dataset(dir: &Path, speakers: &[SyntheticSpeaker], splits: &[(Split, &[MixtureSample])]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("speakers.json"), serde_json::to_string_pretty(speakers)?.as_bytes())?;
    for (split, samples) in splits {
        let mut manifest = String::new();
        let mut payload: Vec<u8> = Vec::new();
        for s in samples.iter() {
            let line = ManifestLine {
                utt_id: s.utt_id.clone(),
                s1: s.s1,
                s2: s.s2,
                delay: s.delay,
                k: s.k,
                y1: s.y1.clone(),
                y2: s.y2.clone(),
                inventory: s.inventory.clone(),
                feat_offset: payload.len(),
                feat_rows: s.features.rows(),
                feat_cols: s.features.cols(),
            };
            for v in s.features.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            manifest.push_str(&serde_json::to_string(&line)?);
            manifest.push('\n');
        }
        atomic_write(&dir.join(format!("{}.jsonl", split.name())), manifest.as_bytes())?;
        atomic_write(&dir.join(format!("{}.bin", split.name())), &payload)?;
    }
    Ok(())
}

/// Loads one split written by `write_dataset`.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let speakers: Vec<SyntheticSpeaker> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("speakers.json"))?)?;
    let manifest = std::fs::read_to_string(dir.join(format!("{}.jsonl", split.name())))?;
    let payload = std::fs::read(dir.join(format!("{}.bin", split.name())))?;
    let mut samples = Vec::new();
    for (ln, line) in manifest.lines().enumerate() {
        let m: ManifestLine = serde_json::from_str(line).map_err(|e| Error::Parse {
            file: format!("{}.jsonl line {}", split.name(), ln + 1),
            what: e.to_string(),
        })?;
        let n = m.feat_rows * m.feat_cols;
        let start = m.feat_offset;
        let end = start + n * 8;
        if end > payload.len() {
            return Err(Error::Parse {
                file: format!("{}.bin", split.name()),
                what: format!("{} runs past the payload", m.utt_id),
            });
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let b: [u8; 8] = payload[start + i * 8..start + (i + 1) * 8].try_into().unwrap();
            data.push(f64::from_le_bytes(b));
        }
        samples.push(MixtureSample {
            utt_id: m.utt_id,
            s1: m.s1,
            s2: m.s2,
            delay: m.delay,
            k: m.k,
            y1: m.y1,
            y2: m.y2,
            inventory: m.inventory,
            features: Tensor::new_unchecked(vec![m.feat_rows, m.feat_cols], data),
        });
    }
    Ok(Dataset { speakers, samples })
}

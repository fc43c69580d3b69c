//! Experiment configuration: one small text file drives dataset
//! generation, model sizing, training and latency shaping. The format
//! is line-oriented `key = value` under `[section]` headers, parsed by
//! hand so unknown keys and duplicates are hard errors instead of
//! silently-accepted noise. The resolved config echoes back through
//! `to_text` and is written next to every experiment's outputs.

use surit_core::data::SPLICE;
use surit_core::{
    Architecture, DataConfig, Error, LatencyConfig, LossConfig, OptimConfig, Result, TrainConfig,
    TrainMode,
};

/// Which reference pairing the token loss trains against: streams in
/// construction order, or the better of both permutations per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Heat,
    Pit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    // [data]
    pub vocab: usize,
    pub feat_dim: usize,
    pub frames_per_token: usize,
    pub noise_sigma: f64,
    pub pool_speakers: usize,
    pub profile_dim: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_delay_frames: usize,
    pub k_min: usize,
    pub k_max: usize,
    // [model]
    pub unmix_channels: usize,
    pub asr_width: usize,
    pub asr_embed: usize,
    pub asr_label_width: usize,
    pub asr_joint: usize,
    pub sid_width: usize,
    pub sid_label_dim: usize,
    pub sid_joint: usize,
    pub time_reduction: bool,
    // [train]
    pub mode: TrainMode,
    pub assignment: Assignment,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub sid_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    // [latency]
    pub alpha: f64,
    pub beta: f64,
    pub t_buffer: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DataConfig::default();
        let a = Architecture::default();
        let t = TrainConfig::default();
        ExperimentConfig {
            seed: 0,
            vocab: d.vocab,
            feat_dim: d.feat_dim,
            frames_per_token: d.frames_per_token,
            noise_sigma: d.noise_sigma,
            pool_speakers: d.pool_speakers,
            profile_dim: d.profile_dim,
            train_samples: d.train_samples,
            eval_samples: d.eval_samples,
            min_tokens: d.min_tokens,
            max_tokens: d.max_tokens,
            min_delay_frames: d.min_delay_frames,
            k_min: d.k_min,
            k_max: d.k_max,
            unmix_channels: a.unmix_channels,
            asr_width: a.asr_width,
            asr_embed: a.asr_embed,
            asr_label_width: a.asr_label_width,
            asr_joint: a.asr_joint,
            sid_width: a.sid_width,
            sid_label_dim: a.sid_label_dim,
            sid_joint: a.sid_joint,
            time_reduction: a.time_reduction,
            mode: t.mode,
            assignment: Assignment::Heat,
            lambda: t.loss.lambda,
            lr: t.optim.lr,
            epochs: t.epochs,
            sid_epochs: t.sid_epochs,
            batch_size: t.batch_size,
            clip_norm: t.optim.clip_norm,
            alpha: t.loss.latency.alpha,
            beta: t.loss.latency.beta,
            t_buffer: t.loss.latency.t_buffer,
        }
    }
}

fn bad(key: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("{key}: {what}"))
}

fn p_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| bad(key, &format!("expected a non-negative integer, got '{v}'")))
}

fn p_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| bad(key, &format!("expected a non-negative integer, got '{v}'")))
}

fn p_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| bad(key, &format!("expected a number, got '{v}'")))
}

fn p_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, &format!("expected true or false, got '{v}'"))),
    }
}

impl ExperimentConfig {
    /// Applies one `section.key = value` assignment; `seed` is the only
    /// top-level key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = p_u64(key, value)?,
            "data.vocab" => self.vocab = p_usize(key, value)?,
            "data.feat_dim" => self.feat_dim = p_usize(key, value)?,
            "data.frames_per_token" => self.frames_per_token = p_usize(key, value)?,
            "data.noise_sigma" => self.noise_sigma = p_f64(key, value)?,
            "data.pool_speakers" => self.pool_speakers = p_usize(key, value)?,
            "data.profile_dim" => self.profile_dim = p_usize(key, value)?,
            "data.train_samples" => self.train_samples = p_usize(key, value)?,
            "data.eval_samples" => self.eval_samples = p_usize(key, value)?,
            "data.min_tokens" => self.min_tokens = p_usize(key, value)?,
            "data.max_tokens" => self.max_tokens = p_usize(key, value)?,
            "data.min_delay_frames" => self.min_delay_frames = p_usize(key, value)?,
            "data.k_min" => self.k_min = p_usize(key, value)?,
            "data.k_max" => self.k_max = p_usize(key, value)?,
            "model.unmix_channels" => self.unmix_channels = p_usize(key, value)?,
            "model.asr_width" => self.asr_width = p_usize(key, value)?,
            "model.asr_embed" => self.asr_embed = p_usize(key, value)?,
            "model.asr_label_width" => self.asr_label_width = p_usize(key, value)?,
            "model.asr_joint" => self.asr_joint = p_usize(key, value)?,
            "model.sid_width" => self.sid_width = p_usize(key, value)?,
            "model.sid_label_dim" => self.sid_label_dim = p_usize(key, value)?,
            "model.sid_joint" => self.sid_joint = p_usize(key, value)?,
            "model.time_reduction" => self.time_reduction = p_bool(key, value)?,
            "train.mode" => {
                self.mode = match value {
                    "joint" => TrainMode::Joint,
                    "stepwise" => TrainMode::Stepwise,
                    _ => return Err(bad(key, &format!("expected joint or stepwise, got '{value}'"))),
                }
            }
            "train.assignment" => {
                self.assignment = match value {
                    "heat" => Assignment::Heat,
                    "pit" => Assignment::Pit,
                    _ => return Err(bad(key, &format!("expected heat or pit, got '{value}'"))),
                }
            }
            "train.lambda" => self.lambda = p_f64(key, value)?,
            "train.lr" => self.lr = p_f64(key, value)?,
            "train.epochs" => self.epochs = p_usize(key, value)?,
            "train.sid_epochs" => self.sid_epochs = p_usize(key, value)?,
            "train.batch_size" => self.batch_size = p_usize(key, value)?,
            "train.clip_norm" => self.clip_norm = p_f64(key, value)?,
            "latency.alpha" => self.alpha = p_f64(key, value)?,
            "latency.beta" => self.beta = p_f64(key, value)?,
            "latency.t_buffer" => self.t_buffer = p_usize(key, value)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses the config text over the defaults. A key may appear at
    /// most once; unknown sections and keys are errors.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut seen: Vec<String> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let at = |what: String| Error::InvalidConfig(format!("line {}: {what}", no + 1));
            if let Some(inner) = line.strip_prefix('[') {
                let name = inner
                    .strip_suffix(']')
                    .ok_or_else(|| at(format!("unterminated section header '{raw}'")))?
                    .trim();
                if !matches!(name, "data" | "model" | "train" | "latency") {
                    return Err(at(format!("unknown section '{name}'")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected 'key = value', got '{line}'")))?;
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if seen.contains(&key) {
                return Err(at(format!("duplicate key '{key}'")));
            }
            cfg.set(&key, v.trim()).map_err(|e| at(e.to_string()))?;
            seen.push(key);
        }
        Ok(cfg)
    }

    /// Canonical echo of the resolved config; `parse` of this text
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        format!(
            "seed = {}\n\n\
             [data]\n\
             vocab = {}\nfeat_dim = {}\nframes_per_token = {}\nnoise_sigma = {}\n\
             pool_speakers = {}\nprofile_dim = {}\ntrain_samples = {}\neval_samples = {}\n\
             min_tokens = {}\nmax_tokens = {}\nmin_delay_frames = {}\nk_min = {}\nk_max = {}\n\n\
             [model]\n\
             unmix_channels = {}\nasr_width = {}\nasr_embed = {}\nasr_label_width = {}\n\
             asr_joint = {}\nsid_width = {}\nsid_label_dim = {}\nsid_joint = {}\n\
             time_reduction = {}\n\n\
             [train]\n\
             mode = {}\nassignment = {}\nlambda = {}\nlr = {}\nepochs = {}\nsid_epochs = {}\n\
             batch_size = {}\nclip_norm = {}\n\n\
             [latency]\n\
             alpha = {}\nbeta = {}\nt_buffer = {}\n",
            self.seed,
            self.vocab,
            self.feat_dim,
            self.frames_per_token,
            self.noise_sigma,
            self.pool_speakers,
            self.profile_dim,
            self.train_samples,
            self.eval_samples,
            self.min_tokens,
            self.max_tokens,
            self.min_delay_frames,
            self.k_min,
            self.k_max,
            self.unmix_channels,
            self.asr_width,
            self.asr_embed,
            self.asr_label_width,
            self.asr_joint,
            self.sid_width,
            self.sid_label_dim,
            self.sid_joint,
            self.time_reduction,
            match self.mode {
                TrainMode::Joint => "joint",
                TrainMode::Stepwise => "stepwise",
            },
            match self.assignment {
                Assignment::Heat => "heat",
                Assignment::Pit => "pit",
            },
            self.lambda,
            self.lr,
            self.epochs,
            self.sid_epochs,
            self.batch_size,
            self.clip_norm,
            self.alpha,
            self.beta,
            self.t_buffer,
        )
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            seed: self.seed,
            feat_dim: self.feat_dim,
            vocab: self.vocab,
            frames_per_token: self.frames_per_token,
            noise_sigma: self.noise_sigma,
            pool_speakers: self.pool_speakers,
            profile_dim: self.profile_dim,
            train_samples: self.train_samples,
            eval_samples: self.eval_samples,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
            min_delay_frames: self.min_delay_frames,
            k_min: self.k_min,
            k_max: self.k_max,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            // The model consumes spliced frames.
            in_dim: SPLICE * self.feat_dim,
            vocab: self.vocab,
            profile_dim: self.profile_dim,
            unmix_channels: self.unmix_channels,
            asr_width: self.asr_width,
            asr_embed: self.asr_embed,
            asr_label_width: self.asr_label_width,
            asr_joint: self.asr_joint,
            sid_width: self.sid_width,
            sid_label_dim: self.sid_label_dim,
            sid_joint: self.sid_joint,
            time_reduction: self.time_reduction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            epochs: self.epochs,
            sid_epochs: self.sid_epochs,
            batch_size: self.batch_size,
            mode: self.mode,
            optim: OptimConfig { lr: self.lr, clip_norm: self.clip_norm, ..OptimConfig::default() },
            loss: LossConfig {
                lambda: self.lambda,
                pit: self.assignment == Assignment::Pit,
                latency: LatencyConfig {
                    alpha: self.alpha,
                    beta: self.beta,
                    t_buffer: self.t_buffer,
                    t_delay: 0,
                },
            },
        }
    }

    /// Full validation before any side effect: every derived config
    /// must accept its values.
    pub fn validate(&self) -> Result<()> {
        self.data_config().validate()?;
        self.train_config().validate()?;
        let a = self.architecture();
        for (name, v) in [
            ("model.unmix_channels", a.unmix_channels),
            ("model.asr_width", a.asr_width),
            ("model.asr_embed", a.asr_embed),
            ("model.asr_label_width", a.asr_label_width),
            ("model.asr_joint", a.asr_joint),
            ("model.sid_width", a.sid_width),
            ("model.sid_label_dim", a.sid_label_dim),
            ("model.sid_joint", a.sid_joint),
        ] {
            if v == 0 {
                return Err(bad(name, "must be positive"));
            }
        }
        Ok(())
    }
}

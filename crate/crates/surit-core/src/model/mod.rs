//! Full model assembly: one masking front-end splits the mixture into
//! two feature streams, and the shared token and speaker transducer
//! heads run on each stream. Loss composition, gradient assembly and
//! the training loop live here; the lattice math lives in `lattice`.

mod asr;
mod front;
mod joint;
mod loss;
mod sid;
mod train;

pub use asr::{asr_backward, asr_encode_audio, asr_encode_labels, asr_join, AsrAudio, AsrJoin, AsrLabel};
pub use front::{time_red_backward, time_red_forward, unmix_backward, unmix_forward, TimeRedForward, UnmixForward};
pub use loss::{sample_loss_and_grad, LossBreakdown, LossConfig, LossMode};
pub use sid::{sid_backward, sid_forward, SidForward};
pub use train::{train, TrainConfig, TrainLogRow, TrainMode};

use crate::data::SyntheticSpeaker;
use crate::neural::tensor::Tensor;
use crate::{Error, MixtureSample, Result};

/// The closed speaker set one sample is scored against: ids plus their
/// profile vectors, in the sample's inventory order.
#[derive(Debug, Clone)]
pub struct SpeakerInventory {
    ids: Vec<u32>,
    profiles: Vec<Vec<f64>>,
}

impl SpeakerInventory {
    pub fn new(ids: Vec<u32>, profiles: Vec<Vec<f64>>) -> Result<SpeakerInventory> {
        if ids.is_empty() {
            return Err(Error::EmptyInventory);
        }
        if ids.len() != profiles.len() {
            return Err(Error::Shape(format!(
                "{} ids against {} profiles",
                ids.len(),
                profiles.len()
            )));
        }
        let dim = profiles[0].len();
        if dim == 0 || profiles.iter().any(|p| p.len() != dim) {
            return Err(Error::Shape("ragged profile vectors".into()));
        }
        Ok(SpeakerInventory { ids, profiles })
    }

    /// Resolves the sample's inventory ids against the speaker pool.
    pub fn from_sample(sample: &MixtureSample, pool: &[SyntheticSpeaker]) -> Result<SpeakerInventory> {
        let mut profiles = Vec::with_capacity(sample.inventory.len());
        for &id in &sample.inventory {
            let spk = pool
                .iter()
                .find(|s| s.id == id)
                .ok_or(Error::UnknownSpeaker(id))?;
            profiles.push(spk.profile.clone());
        }
        SpeakerInventory::new(sample.inventory.clone(), profiles)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> u32 {
        self.ids[i]
    }

    pub fn index_of(&self, id: u32) -> Result<usize> {
        self.ids
            .iter()
            .position(|&x| x == id)
            .ok_or(Error::UnknownSpeaker(id))
    }

    pub fn profile(&self, i: usize) -> &[f64] {
        &self.profiles[i]
    }

    pub fn profiles(&self) -> &[Vec<f64>] {
        &self.profiles
    }

    pub fn profile_dim(&self) -> usize {
        self.profiles[0].len()
    }
}

/// Runs the front-end exactly as the decoders see it: splice, split,
/// and the optional frame-rate halving. Returns the two stream
/// encodings.
pub fn separate_streams(
    p: &crate::neural::params::ModelParams,
    sample: &MixtureSample,
) -> Result<(Tensor, Tensor)> {
    let x = crate::data::feature_pipeline(&sample.features)?;
    let f = front::unmix_forward(&p.unmix, &x);
    Ok(match &p.time_red {
        Some(l) => (
            front::time_red_forward(l, &f.h1).out,
            front::time_red_forward(l, &f.h2).out,
        ),
        None => (f.h1, f.h2),
    })
}

/// Elementwise gradient accumulation into a parameter-shaped tensor.
pub(crate) fn acc(t: &mut Tensor, d: &Tensor) {
    debug_assert_eq!(t.shape(), d.shape());
    for (a, b) in t.data_mut().iter_mut().zip(d.data()) {
        *a += b;
    }
}

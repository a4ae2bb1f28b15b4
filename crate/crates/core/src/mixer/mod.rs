//! Expressive performance model.
//!
//! Two onsetwise targets (loudness trend and beat-period ratio) come from a
//! bidirectional recurrent network run over the whole accompaniment once at
//! load time. Three notewise targets (velocity deviation, timing offset and
//! articulation) come from a feed-forward network applied to each note.

pub mod basis;
pub mod net;
pub mod weights;

use serde::{Deserialize, Serialize};

use crate::score::AccompanimentScore;

pub use basis::{extract_note_basis, extract_onset_basis, NoteBasis, OnsetBasis, NOTE_BASIS_DIM, ONSET_BASIS_DIM};
pub use net::{notewise_forward, notewise_jacobian, onsetwise_forward, OnsetwiseTrace};
pub use weights::{Matrix, ModelWeights, NotewiseWeights, OnsetwiseWeights, WeightsError};

pub const RATIO_RANGE: (f64, f64) = (0.25, 4.0);
pub const LOUDNESS_DEV_LIMIT: f64 = 32.0;
pub const TIMING_LIMIT: f64 = 0.2;
pub const ARTICULATION_RANGE: (f64, f64) = (0.1, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnsetTargets {
    /// Chord-maximum velocity relative to the solo reference velocity.
    pub loudness_trend: f64,
    /// Accompaniment beat period relative to the solo beat period.
    pub bp_ratio: f64,
}

impl OnsetTargets {
    pub const NEUTRAL: Self = Self {
        loudness_trend: 1.0,
        bp_ratio: 1.0,
    };

    pub fn from_output(y: [f64; 2]) -> Self {
        let (lo, hi) = RATIO_RANGE;
        Self {
            loudness_trend: y[0].exp().clamp(lo, hi),
            bp_ratio: y[1].exp().clamp(lo, hi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteTargets {
    /// Velocity offset from the chord trend, in MIDI velocity units.
    pub loudness_dev: f64,
    /// Onset offset from the chord onset, in seconds.
    pub timing: f64,
    /// Duration scaling factor.
    pub articulation: f64,
}

impl NoteTargets {
    pub const NEUTRAL: Self = Self {
        loudness_dev: 0.0,
        timing: 0.0,
        articulation: 1.0,
    };

    pub fn from_output(y: [f64; 3]) -> Self {
        let (lo, hi) = ARTICULATION_RANGE;
        Self {
            loudness_dev: LOUDNESS_DEV_LIMIT * y[0].tanh(),
            timing: TIMING_LIMIT * y[1].tanh(),
            articulation: y[2].exp().clamp(lo, hi),
        }
    }
}

pub fn predict_onsetwise(weights: &ModelWeights, basis: &[OnsetBasis]) -> Vec<OnsetTargets> {
    onsetwise_forward(&weights.onsetwise, basis)
        .outputs
        .into_iter()
        .map(OnsetTargets::from_output)
        .collect()
}

pub fn predict_notewise(weights: &ModelWeights, basis: &NoteBasis) -> NoteTargets {
    NoteTargets::from_output(notewise_forward(&weights.notewise, basis))
}

/// Targets for a whole accompaniment, indexed by onset group and by note id.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressiveTargets {
    pub onsets: Vec<OnsetTargets>,
    pub notes: Vec<NoteTargets>,
}

impl ExpressiveTargets {
    pub fn predict(weights: &ModelWeights, accomp: &AccompanimentScore) -> Self {
        let onsets = predict_onsetwise(weights, &extract_onset_basis(accomp));
        let notes = extract_note_basis(accomp).iter().map(|b| predict_notewise(weights, b)).collect();
        Self { onsets, notes }
    }

    /// Deadpan targets: every ratio 1, every deviation 0.
    pub fn neutral(accomp: &AccompanimentScore) -> Self {
        Self {
            onsets: vec![OnsetTargets::NEUTRAL; accomp.groups().len()],
            notes: vec![NoteTargets::NEUTRAL; accomp.notes().len()],
        }
    }
}

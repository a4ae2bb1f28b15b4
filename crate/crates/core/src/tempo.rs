//! Switching Kalman filter over `[beat_period, drift]`.
//!
//! The state evolves with a constant-velocity transition `[[1, 1], [0, 1]]`;
//! process and observation noise are selected by the follower's alignment
//! label for the current event. An observed IOI (seconds) relates to the state
//! through the score IOI in beats: `ioi = score_ioi * beat_period + noise`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::follower::AlignmentLabel;

pub const MIN_BEAT_PERIOD: f64 = 0.1;
pub const MAX_BEAT_PERIOD: f64 = 4.0;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, PartialEq)]
pub enum TempoError {
    #[error("innovation variance {0} is not positive")]
    InnovationVariance(f64),
    #[error("score IOI must be positive, got {0}")]
    ScoreIoi(f64),
    #[error("invalid tempo parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Match,
    Insertion,
    WrongNote,
}

impl From<AlignmentLabel> for Regime {
    fn from(label: AlignmentLabel) -> Self {
        match label {
            AlignmentLabel::Match(_) => Regime::Match,
            AlignmentLabel::Insertion => Regime::Insertion,
            AlignmentLabel::WrongNote(_) => Regime::WrongNote,
        }
    }
}

/// Per-regime noise model and the initial belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempoParams {
    pub process_noise_match: Mat2,
    pub process_noise_insertion: Mat2,
    pub process_noise_wrong_note: Mat2,
    /// Observation variance (seconds squared) for matched notes.
    pub obs_noise_match: f64,
    /// Observation variance for wrong-pitch notes. Insertions are not observed.
    pub obs_noise_wrong_note: f64,
    pub initial_mean: Vec2,
    pub initial_cov: Mat2,
}

impl Default for TempoParams {
    fn default() -> Self {
        Self {
            process_noise_match: diag(1e-4, 1e-5),
            process_noise_insertion: diag(1e-6, 1e-7),
            process_noise_wrong_note: diag(4e-4, 4e-5),
            obs_noise_match: 1e-3,
            obs_noise_wrong_note: 1e-2,
            initial_mean: [0.5, 0.0],
            initial_cov: diag(0.04, 1e-4),
        }
    }
}

impl TempoParams {
    pub fn process_noise(&self, regime: Regime) -> &Mat2 {
        match regime {
            Regime::Match => &self.process_noise_match,
            Regime::Insertion => &self.process_noise_insertion,
            Regime::WrongNote => &self.process_noise_wrong_note,
        }
    }

    pub fn obs_noise(&self, regime: Regime) -> Option<f64> {
        match regime {
            Regime::Match => Some(self.obs_noise_match),
            Regime::WrongNote => Some(self.obs_noise_wrong_note),
            Regime::Insertion => None,
        }
    }

    pub fn validate(&self) -> Result<(), TempoError> {
        let psd = |m: &Mat2| m[0][0] >= 0.0 && m[1][1] >= 0.0 && m[0][0] * m[1][1] >= m[0][1] * m[1][0];
        for q in [&self.process_noise_match, &self.process_noise_insertion, &self.process_noise_wrong_note] {
            if !psd(q) {
                return Err(TempoError::InvalidParams("process noise must be positive semi-definite"));
            }
        }
        if !(self.obs_noise_match > 0.0 && self.obs_noise_wrong_note > 0.0) {
            return Err(TempoError::InvalidParams("observation variances must be positive"));
        }
        if cholesky(&self.initial_cov).is_none() {
            return Err(TempoError::InvalidParams("initial covariance must be positive definite"));
        }
        Ok(())
    }
}

pub fn diag(a: f64, b: f64) -> Mat2 {
    [[a, 0.0], [0.0, b]]
}

/// Lower Cholesky factor of a 2x2 matrix, or `None` if it is not positive definite.
pub fn cholesky(m: &Mat2) -> Option<Mat2> {
    let l00 = m[0][0].sqrt();
    if !(l00 > 0.0) {
        return None;
    }
    let l10 = m[1][0] / l00;
    let rem = m[1][1] - l10 * l10;
    if !(rem > 0.0) {
        return None;
    }
    Some([[l00, 0.0], [l10, rem.sqrt()]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoState {
    pub mean: Vec2,
    pub cov: Mat2,
    pub regime: Regime,
}

impl TempoState {
    pub fn new(params: &TempoParams) -> Self {
        Self {
            mean: params.initial_mean,
            cov: params.initial_cov,
            regime: Regime::Match,
        }
    }

    /// Beat period estimate in seconds per beat, clamped to the supported range.
    pub fn beat_period(&self) -> f64 {
        self.mean[0].clamp(MIN_BEAT_PERIOD, MAX_BEAT_PERIOD)
    }
}

/// Kalman time update under the state's current regime.
pub fn predict(state: &TempoState, params: &TempoParams) -> TempoState {
    let [p, d] = state.mean;
    let c = state.cov;
    let q = params.process_noise(state.regime);
    // A C A^T with A = [[1, 1], [0, 1]]
    let c00 = c[0][0] + c[0][1] + c[1][0] + c[1][1];
    let c01 = c[0][1] + c[1][1];
    let c10 = c[1][0] + c[1][1];
    let c11 = c[1][1];
    TempoState {
        mean: [p + d, d],
        cov: [[c00 + q[0][0], c01 + q[0][1]], [c10 + q[1][0], c11 + q[1][1]]],
        regime: state.regime,
    }
}

/// Kalman measurement update with an observed IOI.
///
/// Insertions carry no observation and return the input unchanged.
pub fn update(
    state: &TempoState,
    params: &TempoParams,
    ioi_seconds: f64,
    score_ioi_beats: f64,
    regime: Regime,
) -> Result<TempoState, TempoError> {
    let Some(r) = params.obs_noise(regime) else {
        return Ok(*state);
    };
    if !(score_ioi_beats > 0.0) {
        return Err(TempoError::ScoreIoi(score_ioi_beats));
    }
    let h = score_ioi_beats;
    let c = state.cov;
    // H = [h, 0]
    let ch = [c[0][0] * h, c[1][0] * h];
    let s = h * ch[0] + r;
    if !(s > 0.0) {
        return Err(TempoError::InnovationVariance(s));
    }
    let k = [ch[0] / s, ch[1] / s];
    let innovation = ioi_seconds - h * state.mean[0];
    let mean = [state.mean[0] + k[0] * innovation, state.mean[1] + k[1] * innovation];
    // (I - K H) C
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = c[i][j] - k[i] * h * c[0][j];
        }
    }
    let off = 0.5 * (cov[0][1] + cov[1][0]);
    cov[0][1] = off;
    cov[1][0] = off;
    Ok(TempoState {
        mean: [mean[0].clamp(MIN_BEAT_PERIOD, MAX_BEAT_PERIOD), mean[1]],
        cov,
        regime,
    })
}

/// Stateful wrapper running predict and update per solo event.
#[derive(Debug, Clone)]
pub struct TempoTracker {
    params: TempoParams,
    state: TempoState,
}

impl TempoTracker {
    pub fn new(params: TempoParams) -> Result<Self, TempoError> {
        params.validate()?;
        Ok(Self {
            state: TempoState::new(&params),
            params,
        })
    }

    pub fn state(&self) -> &TempoState {
        &self.state
    }

    pub fn params(&self) -> &TempoParams {
        &self.params
    }

    pub fn beat_period(&self) -> f64 {
        self.state.beat_period()
    }

    /// Advances one event in `regime`; `observation` is `(ioi_seconds, score_ioi_beats)`.
    pub fn step(&mut self, regime: Regime, observation: Option<(f64, f64)>) -> Result<&TempoState, TempoError> {
        self.state.regime = regime;
        let predicted = predict(&self.state, &self.params);
        self.state = match observation {
            Some((ioi, beats)) => update(&predicted, &self.params, ioi, beats, regime)?,
            None => predicted,
        };
        self.state.mean[0] = self.state.mean[0].clamp(MIN_BEAT_PERIOD, MAX_BEAT_PERIOD);
        Ok(&self.state)
    }
}

//! Online HMM score follower for a monophonic solo line.
//!
//! The hidden state is the index of the most recently played score note. Each
//! performed note is one forward-algorithm step: the transition allows staying
//! put (an inserted note) or advancing up to `max_skip` positions, and the
//! observation combines the played pitch with the inter-onset interval
//! measured in beats at the current tempo estimate.
//!
//! All arithmetic runs in log space and is renormalized once per step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{PerformedNote, SoloScore};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Error, PartialEq)]
pub enum FollowerError {
    #[error("cannot follow an empty score")]
    EmptyScore,
    #[error("invalid follower parameter: {0}")]
    InvalidParams(&'static str),
    #[error("invalid observation: {0}")]
    InvalidObservation(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FollowerParams {
    /// Probability of playing exactly the expected pitch.
    pub p_correct_pitch: f64,
    /// Geometric decay per semitone for wrong pitches.
    pub pitch_mismatch_decay: f64,
    /// Probability of staying at the current position.
    pub self_loop_prob: f64,
    /// Largest forward jump, in score positions.
    pub max_skip: usize,
    /// Geometric decay per additional skipped position.
    pub skip_decay: f64,
    /// Standard deviation of IOI noise, in beats.
    pub ioi_std_beats: f64,
}

impl Default for FollowerParams {
    fn default() -> Self {
        Self {
            p_correct_pitch: 0.95,
            pitch_mismatch_decay: 0.5,
            self_loop_prob: 0.05,
            max_skip: 4,
            skip_decay: 0.5,
            ioi_std_beats: 0.1,
        }
    }
}

impl FollowerParams {
    pub fn validate(&self) -> Result<(), FollowerError> {
        let open_unit = |p: f64| p > 0.0 && p < 1.0;
        if !open_unit(self.p_correct_pitch) {
            return Err(FollowerError::InvalidParams("p_correct_pitch must lie in (0, 1)"));
        }
        if !open_unit(self.pitch_mismatch_decay) {
            return Err(FollowerError::InvalidParams("pitch_mismatch_decay must lie in (0, 1)"));
        }
        if !open_unit(self.self_loop_prob) {
            return Err(FollowerError::InvalidParams("self_loop_prob must lie in (0, 1)"));
        }
        if !open_unit(self.skip_decay) {
            return Err(FollowerError::InvalidParams("skip_decay must lie in (0, 1)"));
        }
        if self.max_skip < 1 {
            return Err(FollowerError::InvalidParams("max_skip must be at least 1"));
        }
        if !(self.ioi_std_beats > 0.0 && self.ioi_std_beats.is_finite()) {
            return Err(FollowerError::InvalidParams("ioi_std_beats must be positive"));
        }
        Ok(())
    }
}

/// Where the follower believes the soloist starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPosition {
    /// All mass on the first note.
    #[default]
    First,
    /// Uniform over the score, for entering mid-piece.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum AlignmentLabel {
    Match(usize),
    Insertion,
    WrongNote(usize),
}

impl AlignmentLabel {
    /// Score index the label anchors to, if the position advanced.
    pub fn score_index(&self) -> Option<usize> {
        match *self {
            AlignmentLabel::Match(i) | AlignmentLabel::WrongNote(i) => Some(i),
            AlignmentLabel::Insertion => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEvent {
    pub performed: PerformedNote,
    pub label: AlignmentLabel,
    /// Posterior mass at the MAP position.
    pub confidence: f64,
    pub map_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowerState {
    log_posterior: Vec<f64>,
    posterior: Vec<f64>,
    map_index: usize,
    last_map_index: usize,
    last_event_time: Option<f64>,
    observed: usize,
}

impl FollowerState {
    pub fn posterior(&self) -> &[f64] {
        &self.posterior
    }

    pub fn log_posterior(&self) -> &[f64] {
        &self.log_posterior
    }

    pub fn map_index(&self) -> usize {
        self.map_index
    }

    pub fn last_map_index(&self) -> usize {
        self.last_map_index
    }

    /// Onset time (seconds) of the last observed note.
    pub fn last_event_time(&self) -> Option<f64> {
        self.last_event_time
    }

    /// Number of notes observed so far.
    pub fn observed(&self) -> usize {
        self.observed
    }

    fn from_log(log_posterior: Vec<f64>, last_map_index: usize, last_event_time: Option<f64>, observed: usize) -> Self {
        let posterior: Vec<f64> = log_posterior.iter().map(|l| l.exp()).collect();
        let map_index = argmax(&posterior);
        Self {
            log_posterior,
            posterior,
            map_index,
            last_map_index,
            last_event_time,
            observed,
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins, so ties resolve toward the earlier score position
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Score follower model: score, parameters, and precomputed log tables.
#[derive(Debug, Clone)]
pub struct ScoreFollower {
    score: SoloScore,
    params: FollowerParams,
    // log P(next = i + k | current = i), indexed [i][k] for k in 0..=max_skip
    log_transition: Vec<Vec<f64>>,
    // log P(pitch | expected pitch), indexed [expected][played]
    log_pitch: Vec<[f64; 128]>,
}

impl ScoreFollower {
    pub fn new(score: SoloScore, params: FollowerParams) -> Result<Self, FollowerError> {
        params.validate()?;
        if score.is_empty() {
            return Err(FollowerError::EmptyScore);
        }
        let n = score.len();
        let log_transition = (0..n)
            .map(|i| {
                let reachable = params.max_skip.min(n - 1 - i);
                let mut row = vec![f64::NEG_INFINITY; params.max_skip + 1];
                if reachable == 0 {
                    // final position absorbs
                    row[0] = 0.0;
                    return row;
                }
                let z: f64 = (0..reachable).map(|k| params.skip_decay.powi(k as i32)).sum();
                row[0] = params.self_loop_prob.ln();
                for k in 1..=reachable {
                    row[k] = ((1.0 - params.self_loop_prob) * params.skip_decay.powi(k as i32 - 1) / z).ln();
                }
                row
            })
            .collect();
        let log_pitch = (0..128u8).map(|expected| pitch_table(expected, &params)).collect();
        Ok(Self {
            score,
            params,
            log_transition,
            log_pitch,
        })
    }

    pub fn score(&self) -> &SoloScore {
        &self.score
    }

    pub fn params(&self) -> &FollowerParams {
        &self.params
    }

    pub fn init(&self, start: StartPosition) -> FollowerState {
        let n = self.score.len();
        let log_posterior = match start {
            StartPosition::First => {
                let mut v = vec![f64::NEG_INFINITY; n];
                v[0] = 0.0;
                v
            }
            StartPosition::Uniform => vec![-(n as f64).ln(); n],
        };
        FollowerState::from_log(log_posterior, 0, None, 0)
    }

    /// Log transition probability from position `from` to `to`.
    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        match to.checked_sub(from) {
            Some(k) if k <= self.params.max_skip => self.log_transition[from][k],
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn log_pitch_likelihood(&self, played: u8, expected: u8) -> f64 {
        self.log_pitch[usize::from(expected & 0x7f)][usize::from(played & 0x7f)]
    }

    /// Log density of an IOI (in beats) given the transition `from -> to`.
    pub fn log_ioi_likelihood(&self, ioi_beats: f64, from: usize, to: usize) -> f64 {
        let mean = self.score.onset(to) - self.score.onset(from);
        let z = (ioi_beats - mean) / self.params.ioi_std_beats;
        -0.5 * z * z - self.params.ioi_std_beats.ln() - LN_SQRT_2PI
    }

    /// One forward step for a newly performed solo note.
    ///
    /// `ioi_seconds` is the time since the previous performed note-on; pass
    /// `None` for the first note of a performance. The first observation
    /// localizes within the initial distribution without a transition.
    pub fn observe(
        &self,
        state: &FollowerState,
        note: &PerformedNote,
        ioi_seconds: Option<f64>,
        beat_period: f64,
    ) -> Result<(FollowerState, AlignmentEvent), FollowerError> {
        if !(beat_period > 0.0 && beat_period.is_finite()) {
            return Err(FollowerError::InvalidObservation("beat period must be positive"));
        }
        if let Some(ioi) = ioi_seconds {
            if !(ioi >= 0.0 && ioi.is_finite()) {
                return Err(FollowerError::InvalidObservation("IOI must be non-negative"));
            }
        }
        let n = self.score.len();
        let k_max = self.params.max_skip;
        let first = state.observed == 0;
        let ioi_beats = ioi_seconds.map(|s| s / beat_period);

        let mut log_unnorm = vec![f64::NEG_INFINITY; n];
        let mut terms = Vec::with_capacity(k_max + 1);
        for (j, slot) in log_unnorm.iter_mut().enumerate() {
            let log_prior = if first {
                state.log_posterior[j]
            } else {
                terms.clear();
                for k in 0..=k_max.min(j) {
                    let i = j - k;
                    let lp = state.log_posterior[i];
                    let lt = self.log_transition[i][k];
                    if lp == f64::NEG_INFINITY || lt == f64::NEG_INFINITY {
                        continue;
                    }
                    let li = ioi_beats.map_or(0.0, |x| self.log_ioi_likelihood(x, i, j));
                    terms.push(lp + lt + li);
                }
                log_sum_exp(&terms)
            };
            *slot = log_prior + self.log_pitch_likelihood(note.pitch, self.score.pitch(j));
        }

        let log_z = log_sum_exp(&log_unnorm);
        if !log_z.is_finite() {
            return Err(FollowerError::InvalidObservation("observation has zero likelihood"));
        }
        for v in &mut log_unnorm {
            *v -= log_z;
        }
        let next = FollowerState::from_log(log_unnorm, state.map_index, Some(note.onset_seconds), state.observed + 1);

        let map = next.map_index;
        let advanced = first || map > state.map_index;
        let label = if !advanced {
            AlignmentLabel::Insertion
        } else if note.pitch == self.score.pitch(map) {
            AlignmentLabel::Match(map)
        } else {
            AlignmentLabel::WrongNote(map)
        };
        let event = AlignmentEvent {
            performed: *note,
            label,
            confidence: next.posterior[map].clamp(0.0, 1.0),
            map_index: map,
        };
        Ok((next, event))
    }

    /// Score position (beats) of the MAP estimate.
    pub fn map_position_beats(&self, state: &FollowerState) -> f64 {
        self.score.onset(state.map_index)
    }
}

fn pitch_table(expected: u8, params: &FollowerParams) -> [f64; 128] {
    let decay = params.pitch_mismatch_decay;
    let dist = |q: u8| (i32::from(q) - i32::from(expected)).unsigned_abs() as i32;
    let z: f64 = (0..128u8).filter(|&q| q != expected).map(|q| decay.powi(dist(q))).sum();
    let mut table = [0.0; 128];
    for q in 0..128u8 {
        table[usize::from(q)] = if q == expected {
            params.p_correct_pitch.ln()
        } else {
            ((1.0 - params.p_correct_pitch) * decay.powi(dist(q)) / z).ln()
        };
    }
    table
}

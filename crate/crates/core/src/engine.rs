//! Accompaniment scheduling.
//!
//! Every solo event re-anchors the accompaniment to the soloist's score
//! position and the tracked beat period, then recomputes absolute times and
//! velocities for every accompaniment note that has not sounded yet. Notes
//! that have been emitted are never retracted, and their note-off times are
//! fixed at emission.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mixer::ExpressiveTargets;
use crate::score::{AccompanimentScore, NoteId, ONSET_TOLERANCE};

pub const MAX_SCALE: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("unknown expressive target `{0}`")]
    UnknownTarget(String),
    #[error("scaling value must be finite")]
    NonFiniteScale,
    #[error("targets do not match the accompaniment ({0})")]
    TargetMismatch(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    LoudnessTrend,
    #[serde(rename = "bp")]
    BpRatio,
    LoudnessDev,
    Timing,
    Articulation,
}

impl Target {
    pub const ALL: [Target; 5] = [
        Target::LoudnessTrend,
        Target::BpRatio,
        Target::LoudnessDev,
        Target::Timing,
        Target::Articulation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::LoudnessTrend => "loudness_trend",
            Target::BpRatio => "bp",
            Target::LoudnessDev => "loudness_dev",
            Target::Timing => "timing",
            Target::Articulation => "articulation",
        }
    }

    pub fn link(self) -> Link {
        match self {
            Target::LoudnessTrend | Target::BpRatio | Target::Articulation => Link::Ratio,
            Target::LoudnessDev | Target::Timing => Link::Offset,
        }
    }
}

impl FromStr for Target {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loudness_trend" => Ok(Target::LoudnessTrend),
            "bp" | "bp_ratio" => Ok(Target::BpRatio),
            "loudness_dev" => Ok(Target::LoudnessDev),
            "timing" => Ok(Target::Timing),
            "articulation" => Ok(Target::Articulation),
            other => Err(EngineError::UnknownTarget(other.to_string())),
        }
    }
}

/// How a target relates to its neutral value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    /// Positive ratio, neutral 1, scaled in log space.
    Ratio,
    /// Additive offset, neutral 0, scaled linearly.
    Offset,
}

/// Moves `value` toward (s < 1) or away from (s > 1) its neutral value.
///
/// `s = 0` returns the neutral value and `s = 1` returns `value` unchanged,
/// both exactly.
pub fn apply_scaling(value: f64, link: Link, s: f64) -> f64 {
    let neutral = match link {
        Link::Ratio => 1.0,
        Link::Offset => 0.0,
    };
    if s == 0.0 {
        return neutral;
    }
    if s == 1.0 {
        return value;
    }
    match link {
        Link::Ratio => (s * value.ln()).exp(),
        Link::Offset => s * value,
    }
}

/// Live expressiveness controls, one factor in `[0, 2]` per target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingControls {
    pub loudness_trend: f64,
    pub bp_ratio: f64,
    pub loudness_dev: f64,
    pub timing: f64,
    pub articulation: f64,
}

impl Default for ScalingControls {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl ScalingControls {
    pub fn uniform(s: f64) -> Self {
        let s = s.clamp(0.0, MAX_SCALE);
        Self {
            loudness_trend: s,
            bp_ratio: s,
            loudness_dev: s,
            timing: s,
            articulation: s,
        }
    }

    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::LoudnessTrend => self.loudness_trend,
            Target::BpRatio => self.bp_ratio,
            Target::LoudnessDev => self.loudness_dev,
            Target::Timing => self.timing,
            Target::Articulation => self.articulation,
        }
    }

    /// Stores a clamped factor and returns the value actually stored.
    pub fn set(&mut self, target: Target, s: f64) -> Result<f64, EngineError> {
        if !s.is_finite() {
            return Err(EngineError::NonFiniteScale);
        }
        let s = s.clamp(0.0, MAX_SCALE);
        let slot = match target {
            Target::LoudnessTrend => &mut self.loudness_trend,
            Target::BpRatio => &mut self.bp_ratio,
            Target::LoudnessDev => &mut self.loudness_dev,
            Target::Timing => &mut self.timing,
            Target::Articulation => &mut self.articulation,
        };
        *slot = s;
        Ok(s)
    }

    pub fn scaled(&self, target: Target, value: f64) -> f64 {
        apply_scaling(value, target.link(), self.get(target))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    Pending,
    Emitted,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub note_id: NoteId,
    pub pitch: u8,
    pub velocity: u8,
    pub on_time: f64,
    pub off_time: f64,
    pub state: EventState,
}

/// An accompaniment note handed to the output sink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmittedNote {
    pub note_id: NoteId,
    pub pitch: u8,
    pub velocity: u8,
    pub on_time: f64,
    pub off_time: f64,
    /// How far past its computed onset the note was sounded (fire-immediately case).
    pub lateness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Smoothing factor of the solo reference velocity.
    pub velocity_alpha: f64,
    /// Stop playing after this many seconds without solo input.
    pub silence_timeout: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            velocity_alpha: 0.3,
            silence_timeout: 5.0,
        }
    }
}

/// What the engine needs to know about one processed solo note.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoloContext {
    pub time: f64,
    pub velocity: u8,
    /// Score beat of the aligned solo note; `None` for insertions.
    pub anchor_beat: Option<f64>,
    pub beat_period: f64,
}

#[derive(Debug, Clone)]
pub struct AccompanimentEngine {
    accomp: AccompanimentScore,
    targets: ExpressiveTargets,
    config: EngineConfig,
    scaling: ScalingControls,
    solo_ref_velocity: Option<f64>,
    anchor: Option<(f64, f64)>,
    beat_period: f64,
    last_solo_time: Option<f64>,
    note_state: Vec<EventState>,
    queue: Vec<ScheduledEvent>,
    frozen: bool,
}

impl AccompanimentEngine {
    pub fn new(accomp: AccompanimentScore, targets: ExpressiveTargets, config: EngineConfig) -> Result<Self, EngineError> {
        if targets.onsets.len() != accomp.groups().len() {
            return Err(EngineError::TargetMismatch("onset target count"));
        }
        if targets.notes.len() != accomp.notes().len() {
            return Err(EngineError::TargetMismatch("note target count"));
        }
        let n = accomp.notes().len();
        Ok(Self {
            accomp,
            targets,
            config,
            scaling: ScalingControls::default(),
            solo_ref_velocity: None,
            anchor: None,
            beat_period: 0.5,
            last_solo_time: None,
            note_state: vec![EventState::Pending; n],
            queue: Vec::new(),
            frozen: false,
        })
    }

    pub fn accompaniment(&self) -> &AccompanimentScore {
        &self.accomp
    }

    pub fn targets(&self) -> &ExpressiveTargets {
        &self.targets
    }

    pub fn scaling(&self) -> &ScalingControls {
        &self.scaling
    }

    pub fn set_scaling(&mut self, target: Target, s: f64) -> Result<f64, EngineError> {
        self.scaling.set(target, s)
    }

    pub fn set_scaling_by_name(&mut self, name: &str, s: f64) -> Result<f64, EngineError> {
        self.set_scaling(name.parse()?, s)
    }

    pub fn solo_ref_velocity(&self) -> Option<f64> {
        self.solo_ref_velocity
    }

    /// `(score beat, seconds)` of the latest positional anchor.
    pub fn anchor(&self) -> Option<(f64, f64)> {
        self.anchor
    }

    /// Pending events in onset order.
    pub fn pending(&self) -> &[ScheduledEvent] {
        &self.queue
    }

    pub fn note_state(&self, id: NoteId) -> EventState {
        self.note_state[id.0]
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// True once nothing is left to play.
    pub fn is_finished(&self) -> bool {
        self.frozen || self.note_state.iter().all(|s| *s != EventState::Pending)
    }

    /// Incorporates one solo note and reschedules. Returns notes that had to
    /// fire immediately because their recomputed onset already passed.
    pub fn on_solo_event(&mut self, solo: SoloContext) -> Vec<EmittedNote> {
        if self.frozen {
            return Vec::new();
        }
        let v = f64::from(solo.velocity.clamp(1, 127));
        let alpha = self.config.velocity_alpha;
        let ema = match self.solo_ref_velocity {
            Some(prev) => alpha * v + (1.0 - alpha) * prev,
            None => v,
        };
        self.solo_ref_velocity = Some(ema.clamp(1.0, 127.0));
        if let Some(beat) = solo.anchor_beat {
            self.anchor = Some((beat, solo.time));
        }
        self.beat_period = solo.beat_period;
        self.last_solo_time = Some(solo.time);
        self.reschedule(solo.time)
    }

    /// Rebuilds the pending queue from the current anchor, tempo and scaling,
    /// e.g. after a scaling change. Notes whose onset falls before `now` fire at `now`.
    pub fn reschedule(&mut self, now: f64) -> Vec<EmittedNote> {
        if self.frozen {
            return Vec::new();
        }
        self.queue.clear();
        let Some((ref_beat, ref_time)) = self.anchor else {
            return Vec::new();
        };
        let ref_velocity = self.solo_ref_velocity.unwrap_or(64.0);
        let mut fired = Vec::new();
        for (g, group) in self.accomp.groups().iter().enumerate() {
            let pending: Vec<NoteId> = group
                .note_ids
                .iter()
                .copied()
                .filter(|id| self.note_state[id.0] == EventState::Pending)
                .collect();
            if pending.is_empty() {
                continue;
            }
            if group.onset_beats < ref_beat - ONSET_TOLERANCE {
                // the soloist has moved past this onset
                for id in pending {
                    self.note_state[id.0] = EventState::Cancelled;
                }
                continue;
            }
            let onset = self.targets.onsets[g];
            let accomp_bp = self.beat_period * self.scaling.scaled(Target::BpRatio, onset.bp_ratio);
            let group_time = ref_time + (group.onset_beats - ref_beat) * accomp_bp;
            let chord_max = (ref_velocity * self.scaling.scaled(Target::LoudnessTrend, onset.loudness_trend))
                .round()
                .clamp(1.0, 127.0);
            let max_dev = group
                .note_ids
                .iter()
                .map(|id| self.scaling.scaled(Target::LoudnessDev, self.targets.notes[id.0].loudness_dev))
                .fold(f64::NEG_INFINITY, f64::max);
            for id in pending {
                let note = self.accomp.note(id);
                let t = self.targets.notes[id.0];
                let dev = self.scaling.scaled(Target::LoudnessDev, t.loudness_dev);
                let velocity = (chord_max + dev - max_dev).round().clamp(1.0, 127.0) as u8;
                let on_time = group_time + self.scaling.scaled(Target::Timing, t.timing);
                let length = note.duration * accomp_bp * self.scaling.scaled(Target::Articulation, t.articulation);
                let event = ScheduledEvent {
                    note_id: id,
                    pitch: note.pitch,
                    velocity,
                    on_time,
                    off_time: on_time + length,
                    state: EventState::Pending,
                };
                if on_time < now {
                    self.note_state[id.0] = EventState::Emitted;
                    fired.push(EmittedNote {
                        note_id: id,
                        pitch: note.pitch,
                        velocity,
                        on_time: now,
                        off_time: now + length,
                        lateness: now - on_time,
                    });
                } else {
                    self.queue.push(event);
                }
            }
        }
        self.queue
            .sort_by(|a, b| a.on_time.total_cmp(&b.on_time).then(a.note_id.cmp(&b.note_id)));
        fired
    }

    /// Onset time of the next pending event.
    pub fn next_due(&self) -> Option<f64> {
        if self.frozen {
            return None;
        }
        self.queue.first().map(|e| e.on_time)
    }

    /// Emits every pending event with onset at or before `until`.
    ///
    /// If the soloist has been silent for longer than the configured timeout
    /// at an event's onset, the engine freezes and cancels everything left.
    pub fn pop_due(&mut self, until: f64) -> Vec<EmittedNote> {
        let mut out = Vec::new();
        while let Some(first) = self.queue.first() {
            if self.frozen || first.on_time > until {
                break;
            }
            if let Some(last) = self.last_solo_time {
                if first.on_time - last > self.config.silence_timeout {
                    self.freeze();
                    break;
                }
            }
            let e = self.queue.remove(0);
            self.note_state[e.note_id.0] = EventState::Emitted;
            out.push(EmittedNote {
                note_id: e.note_id,
                pitch: e.pitch,
                velocity: e.velocity,
                on_time: e.on_time,
                off_time: e.off_time,
                lateness: 0.0,
            });
        }
        out
    }

    fn freeze(&mut self) {
        self.frozen = true;
        for e in self.queue.drain(..) {
            self.note_state[e.note_id.0] = EventState::Cancelled;
        }
    }
}

//! Per-event processing chain: follower, then tempo tracker, then engine.

use thiserror::Error;

use crate::engine::{AccompanimentEngine, EmittedNote, EngineConfig, EngineError, SoloContext};
use crate::follower::{AlignmentEvent, FollowerError, FollowerParams, FollowerState, ScoreFollower, StartPosition};
use crate::mixer::{ExpressiveTargets, ModelWeights};
use crate::score::{PerformedNote, Piece};
use crate::tempo::{Regime, TempoError, TempoParams, TempoState, TempoTracker};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Follower(#[from] FollowerError),
    #[error(transparent)]
    Tempo(#[from] TempoError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub follower: FollowerParams,
    pub start: StartPosition,
    pub tempo: TempoParams,
    pub engine: EngineConfig,
}

/// Result of handling one solo note.
#[derive(Debug, Clone)]
pub struct SoloOutcome {
    pub alignment: AlignmentEvent,
    pub tempo: TempoState,
    /// Score beat of the follower's MAP position after this note.
    pub score_beat: f64,
    /// Accompaniment notes that had to sound immediately.
    pub fired: Vec<EmittedNote>,
}

/// Follower, tempo tracker and engine wired together for one piece.
#[derive(Debug, Clone)]
pub struct Accompanist {
    follower: ScoreFollower,
    follower_state: FollowerState,
    tempo: TempoTracker,
    engine: AccompanimentEngine,
    last_onset: Option<f64>,
    // (score index, seconds) of the last note that advanced the position
    last_anchor: Option<(usize, f64)>,
}

impl Accompanist {
    pub fn new(piece: &Piece, targets: ExpressiveTargets, config: &PipelineConfig) -> Result<Self, PipelineError> {
        let follower = ScoreFollower::new(piece.solo.clone(), config.follower)?;
        let follower_state = follower.init(config.start);
        let tempo = TempoTracker::new(config.tempo)?;
        let engine = AccompanimentEngine::new(piece.accomp.clone(), targets, config.engine)?;
        Ok(Self {
            follower,
            follower_state,
            tempo,
            engine,
            last_onset: None,
            last_anchor: None,
        })
    }

    /// Builds the pipeline with targets predicted by `weights`, or neutral targets.
    pub fn with_weights(piece: &Piece, weights: Option<&ModelWeights>, config: &PipelineConfig) -> Result<Self, PipelineError> {
        let targets = match weights {
            Some(w) => ExpressiveTargets::predict(w, &piece.accomp),
            None => ExpressiveTargets::neutral(&piece.accomp),
        };
        Self::new(piece, targets, config)
    }

    pub fn follower(&self) -> &ScoreFollower {
        &self.follower
    }

    pub fn follower_state(&self) -> &FollowerState {
        &self.follower_state
    }

    pub fn tempo(&self) -> &TempoState {
        self.tempo.state()
    }

    pub fn engine(&self) -> &AccompanimentEngine {
        &self.engine
    }

    pub fn engine_mut(&mut self) -> &mut AccompanimentEngine {
        &mut self.engine
    }

    pub fn handle_solo(&mut self, note: &PerformedNote) -> Result<SoloOutcome, PipelineError> {
        let ioi = self.last_onset.map(|t| (note.onset_seconds - t).max(0.0));
        let (state, alignment) = self
            .follower
            .observe(&self.follower_state, note, ioi, self.tempo.beat_period())?;
        self.follower_state = state;
        self.last_onset = Some(note.onset_seconds);

        let index = alignment.label.score_index();
        let regime = Regime::from(alignment.label);
        // tempo is observed between consecutive anchored notes, so an
        // intervening insertion does not shorten the measured IOI
        let observation = match (index, self.last_anchor) {
            (Some(j), Some((i, t))) if j > i => {
                let score = self.follower.score();
                Some((note.onset_seconds - t, score.onset(j) - score.onset(i)))
            }
            _ => None,
        };
        let tempo = *self.tempo.step(regime, observation)?;
        if let Some(j) = index {
            self.last_anchor = Some((j, note.onset_seconds));
        }

        let anchor_beat = index.map(|j| self.follower.score().onset(j));
        let fired = self.engine.on_solo_event(SoloContext {
            time: note.onset_seconds,
            velocity: note.velocity,
            anchor_beat,
            beat_period: tempo.beat_period(),
        });
        Ok(SoloOutcome {
            alignment,
            tempo,
            score_beat: self.follower.map_position_beats(&self.follower_state),
            fired,
        })
    }

    pub fn next_due(&self) -> Option<f64> {
        self.engine.next_due()
    }

    pub fn pop_due(&mut self, until: f64) -> Vec<EmittedNote> {
        self.engine.pop_due(until)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower::AlignmentLabel;
    use crate::score::{group_onsets, NoteId, Part, ScoreNote, SoloScore};

    fn piece() -> Piece {
        let solo = SoloScore::from_triples(&[(60, 0.0, 1.0), (62, 1.0, 1.0), (64, 2.0, 1.0), (65, 3.0, 1.0)]).unwrap();
        let accomp = group_onsets(
            [(48, 0.5, 0.5), (52, 1.5, 0.5)]
                .iter()
                .map(|&(pitch, onset, duration)| ScoreNote {
                    id: NoteId(0),
                    pitch,
                    onset,
                    duration,
                    part: Part::Accompaniment,
                })
                .collect(),
        );
        Piece { solo, accomp }
    }

    fn note(pitch: u8, t: f64) -> PerformedNote {
        PerformedNote {
            pitch,
            onset_seconds: t,
            velocity: 70,
            duration_seconds: None,
        }
    }

    #[test]
    fn clean_performance_schedules_on_the_beat() {
        let mut p = Accompanist::with_weights(&piece(), None, &PipelineConfig::default()).unwrap();
        let out = p.handle_solo(&note(60, 0.0)).unwrap();
        assert_eq!(out.alignment.label, AlignmentLabel::Match(0));
        assert_eq!(p.next_due(), Some(0.25));
        let played = p.pop_due(0.4);
        assert_eq!(played.len(), 1);
        let out = p.handle_solo(&note(62, 0.5)).unwrap();
        assert_eq!(out.alignment.label, AlignmentLabel::Match(1));
        assert_eq!(out.score_beat, 1.0);
        assert_eq!(out.tempo.beat_period(), 0.5);
        assert_eq!(p.next_due(), Some(0.75));
    }

    #[test]
    fn insertion_does_not_disturb_tempo_ioi() {
        let mut p = Accompanist::with_weights(&piece(), None, &PipelineConfig::default()).unwrap();
        p.handle_solo(&note(60, 0.0)).unwrap();
        let ins = p.handle_solo(&note(60, 0.05)).unwrap();
        assert_eq!(ins.alignment.label, AlignmentLabel::Insertion);
        let out = p.handle_solo(&note(62, 0.5)).unwrap();
        assert_eq!(out.alignment.label, AlignmentLabel::Match(1));
        // anchor-to-anchor IOI is exactly one beat at 0.5 s
        assert!((out.tempo.beat_period() - 0.5).abs() < 1e-12);
    }
}

//! Deterministic synthetic soloist.
//!
//! A solo score is rendered into a performed note stream by integrating a
//! piecewise tempo curve, then adding Gaussian timing and velocity jitter and
//! i.i.d. per-note errors (insertions, skips, wrong pitches).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::score::{group_onsets, NoteId, Part, PerformedNote, Piece, ScoreNote, SoloScore};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("tempo curve: {0}")]
    TempoCurve(&'static str),
    #[error("invalid simulation parameter: {0}")]
    InvalidConfig(&'static str),
}

/// Tempo from `start_beat` on. With `end_bpm` set, the tempo ramps linearly
/// (in BPM over beats) to reach `end_bpm` at the next segment's start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempoSegment {
    pub start_beat: f64,
    pub bpm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TempoCurve {
    segments: Vec<TempoSegment>,
}

impl Default for TempoCurve {
    fn default() -> Self {
        Self::constant(120.0)
    }
}

impl TempoCurve {
    pub fn constant(bpm: f64) -> Self {
        Self {
            segments: vec![TempoSegment {
                start_beat: 0.0,
                bpm,
                end_bpm: None,
            }],
        }
    }

    pub fn new(segments: Vec<TempoSegment>) -> Result<Self, SimError> {
        let curve = Self { segments };
        curve.validate()?;
        Ok(curve)
    }

    pub fn segments(&self) -> &[TempoSegment] {
        &self.segments
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let first = self.segments.first().ok_or(SimError::TempoCurve("no segments"))?;
        if first.start_beat != 0.0 {
            return Err(SimError::TempoCurve("first segment must start at beat 0"));
        }
        for w in self.segments.windows(2) {
            if !(w[1].start_beat > w[0].start_beat) {
                return Err(SimError::TempoCurve("segment starts must increase"));
            }
        }
        for s in &self.segments {
            let ok = |b: f64| b > 0.0 && b.is_finite();
            if !ok(s.bpm) || !s.end_bpm.map_or(true, ok) {
                return Err(SimError::TempoCurve("tempi must be positive"));
            }
        }
        if self.segments.last().is_some_and(|s| s.end_bpm.is_some()) {
            return Err(SimError::TempoCurve("the last segment cannot ramp"));
        }
        Ok(())
    }

    fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map_or(f64::INFINITY, |s| s.start_beat)
    }

    /// Tempo in BPM at `beat`.
    pub fn bpm_at(&self, beat: f64) -> f64 {
        let i = self.segments.iter().rposition(|s| s.start_beat <= beat).unwrap_or(0);
        let s = &self.segments[i];
        match s.end_bpm {
            Some(end) => {
                let span = self.segment_end(i) - s.start_beat;
                let x = (beat - s.start_beat).clamp(0.0, span);
                s.bpm + (end - s.bpm) * x / span
            }
            None => s.bpm,
        }
    }

    pub fn beat_period_at(&self, beat: f64) -> f64 {
        60.0 / self.bpm_at(beat)
    }

    /// Seconds elapsed from beat 0 to `beat`.
    pub fn time_at(&self, beat: f64) -> f64 {
        let mut total = 0.0;
        for (i, s) in self.segments.iter().enumerate() {
            if beat <= s.start_beat {
                break;
            }
            let end = self.segment_end(i);
            let upto = beat.min(end) - s.start_beat;
            total += match s.end_bpm {
                None => 60.0 * upto / s.bpm,
                Some(end_bpm) => {
                    let slope = (end_bpm - s.bpm) / (end - s.start_beat);
                    if slope.abs() < 1e-12 {
                        60.0 * upto / s.bpm
                    } else {
                        60.0 / slope * ((s.bpm + slope * upto) / s.bpm).ln()
                    }
                }
            };
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub tempo_curve: TempoCurve,
    /// Standard deviation of onset jitter, seconds.
    pub timing_jitter_std: f64,
    pub velocity_base: u8,
    pub velocity_jitter_std: f64,
    pub p_insert: f64,
    pub p_skip: f64,
    pub p_wrong_pitch: f64,
    /// Wrong pitches land within this many semitones of the written one.
    pub wrong_pitch_range: u8,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tempo_curve: TempoCurve::default(),
            timing_jitter_std: 0.01,
            velocity_base: 72,
            velocity_jitter_std: 6.0,
            p_insert: 0.0,
            p_skip: 0.0,
            p_wrong_pitch: 0.0,
            wrong_pitch_range: 3,
        }
    }
}

impl SimConfig {
    /// A noiseless performance at a constant tempo.
    pub fn clean(bpm: f64) -> Self {
        Self {
            tempo_curve: TempoCurve::constant(bpm),
            timing_jitter_std: 0.0,
            velocity_jitter_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.tempo_curve.validate()?;
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_insert) || !prob(self.p_skip) || !prob(self.p_wrong_pitch) {
            return Err(SimError::InvalidConfig("probabilities must lie in [0, 1]"));
        }
        if self.p_insert + self.p_skip > 1.0 {
            return Err(SimError::InvalidConfig("p_insert + p_skip must not exceed 1"));
        }
        if !(self.timing_jitter_std >= 0.0 && self.velocity_jitter_std >= 0.0) {
            return Err(SimError::InvalidConfig("jitter must be non-negative"));
        }
        if !(1..=127).contains(&self.velocity_base) {
            return Err(SimError::InvalidConfig("velocity_base must lie in 1..=127"));
        }
        if self.wrong_pitch_range == 0 {
            return Err(SimError::InvalidConfig("wrong_pitch_range must be at least 1"));
        }
        Ok(())
    }
}

/// Ground truth for one performed note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteTruth {
    /// Score index the note realizes; `None` for inserted notes.
    pub score_index: Option<usize>,
    pub wrong_pitch: bool,
    /// True beat period (s/beat) at the note's score position.
    pub beat_period: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulatedPerformance {
    pub notes: Vec<PerformedNote>,
    pub truth: Vec<NoteTruth>,
    pub skipped: Vec<usize>,
}

/// Renders `score` as a performance. Fully determined by `cfg` (including its seed).
pub fn simulate(score: &SoloScore, cfg: &SimConfig) -> Result<SimulatedPerformance, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let curve = &cfg.tempo_curve;
    let mut out = SimulatedPerformance::default();
    let mut prev_time: Option<f64> = None;

    for (i, note) in score.notes().iter().enumerate() {
        // fixed draw order keeps streams aligned across configurations
        let u_skip: f64 = rng.gen();
        let u_insert: f64 = rng.gen();
        let u_wrong: f64 = rng.gen();
        let jitter = std_normal.sample(&mut rng) * cfg.timing_jitter_std;
        let vel_noise = std_normal.sample(&mut rng) * cfg.velocity_jitter_std;
        let insert_frac: f64 = rng.gen_range(0.3..0.7);
        let insert_step: i32 = if rng.gen::<bool>() { 1 } else { -1 } * rng.gen_range(1..=2);
        let wrong_mag: i32 = rng.gen_range(1..=i32::from(cfg.wrong_pitch_range));
        let wrong_sign: i32 = if rng.gen::<bool>() { 1 } else { -1 };
        let ins_vel_noise = std_normal.sample(&mut rng) * cfg.velocity_jitter_std;

        if u_skip < cfg.p_skip {
            out.skipped.push(i);
            continue;
        }
        let beat_period = curve.beat_period_at(note.onset);
        let floor = prev_time.unwrap_or(0.0);
        let time = (curve.time_at(note.onset) + jitter).max(floor);
        let velocity = |noise: f64| (f64::from(cfg.velocity_base) + noise).round().clamp(1.0, 127.0) as u8;

        if let Some(prev) = prev_time.filter(|_| u_insert < cfg.p_insert) {
            out.notes.push(PerformedNote {
                pitch: shift_pitch(note.pitch, insert_step),
                onset_seconds: prev + insert_frac * (time - prev),
                velocity: velocity(ins_vel_noise),
                duration_seconds: Some(0.5 * insert_frac * (time - prev)).filter(|d| *d > 0.0),
            });
            out.truth.push(NoteTruth {
                score_index: None,
                wrong_pitch: false,
                beat_period,
            });
        }

        let wrong = u_wrong < cfg.p_wrong_pitch;
        let pitch = if wrong {
            shift_pitch(note.pitch, wrong_sign * wrong_mag)
        } else {
            note.pitch
        };
        let duration = curve.time_at(note.end()) - curve.time_at(note.onset);
        out.notes.push(PerformedNote {
            pitch,
            onset_seconds: time,
            velocity: velocity(vel_noise),
            duration_seconds: Some(duration),
        });
        out.truth.push(NoteTruth {
            score_index: Some(i),
            wrong_pitch: wrong,
            beat_period,
        });
        prev_time = Some(time);
    }
    Ok(out)
}

/// Moves a pitch by a nonzero offset, reflecting at the MIDI range edges.
fn shift_pitch(pitch: u8, offset: i32) -> u8 {
    let p = i32::from(pitch);
    let up = p + offset;
    if (0..=127).contains(&up) {
        up as u8
    } else {
        (p - offset).clamp(0, 127) as u8
    }
}

/// Random piece for testing and demos: a stepwise solo melody over a bass
/// line with a chord on every beat.
pub fn synthetic_piece(seed: u64, solo_notes: usize) -> Piece {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5010);
    let durations = [0.5, 1.0, 1.0, 1.5, 2.0];
    let mut pitch: i32 = 67;
    let mut beat = 0.0;
    let mut triples = Vec::with_capacity(solo_notes);
    for _ in 0..solo_notes {
        let d = durations[rng.gen_range(0..durations.len())];
        triples.push((pitch as u8, beat, d));
        beat += d;
        let step = rng.gen_range(1..=5) * if rng.gen::<bool>() { 1 } else { -1 };
        pitch = (pitch + step).clamp(55, 84);
        if pitch == i32::from(triples.last().map_or(0, |t| t.0)) {
            pitch += if pitch < 84 { 1 } else { -1 };
        }
    }
    let solo = SoloScore::from_triples(&triples).expect("increasing onsets");
    let total_beats = beat.ceil() as usize;
    let mut accomp = Vec::new();
    let roots = [48, 53, 55, 50, 45, 52];
    for b in 0..total_beats {
        let root = roots[(b / 4) % roots.len()];
        let chord: &[i32] = if b % 2 == 0 { &[0, 4, 7] } else { &[4, 7] };
        for &iv in chord {
            accomp.push(ScoreNote {
                id: NoteId(0),
                pitch: (root + iv) as u8,
                onset: b as f64,
                duration: 1.0,
                part: Part::Accompaniment,
            });
        }
    }
    Piece {
        solo,
        accomp: group_onsets(accomp),
    }
}

//! Score descriptors fed to the expressive networks. Every entry lies in `[0, 1]`.

use crate::score::{AccompanimentScore, ScoreNote};

pub const ONSET_BASIS_DIM: usize = 10;
pub const NOTE_BASIS_DIM: usize = 5;

pub type OnsetBasis = [f64; ONSET_BASIS_DIM];
pub type NoteBasis = [f64; NOTE_BASIS_DIM];

fn capped(x: f64, cap: f64) -> f64 {
    x.clamp(0.0, cap) / cap
}

fn beat_phase(onset: f64) -> f64 {
    onset.rem_euclid(1.0)
}

fn chord_size(n: usize) -> f64 {
    n.min(10) as f64 / 10.0
}

/// One descriptor vector per onset group, in score order.
///
/// Layout: pitch mean, pitch span, chord size, beat phase, bar phase (4/4),
/// IOI to previous onset, IOI to next onset, mean duration, first flag, last flag.
pub fn extract_onset_basis(accomp: &AccompanimentScore) -> Vec<OnsetBasis> {
    let groups = accomp.groups();
    let last = groups.len().saturating_sub(1);
    groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let notes: Vec<&ScoreNote> = accomp.group_notes(group).collect();
            let count = notes.len() as f64;
            let lo = notes.iter().map(|n| n.pitch).min().unwrap_or(0);
            let hi = notes.iter().map(|n| n.pitch).max().unwrap_or(0);
            let pitch_mean = notes.iter().map(|n| f64::from(n.pitch)).sum::<f64>() / count;
            let dur_mean = notes.iter().map(|n| n.duration).sum::<f64>() / count;
            let onset = group.onset_beats;
            let ioi_prev = if g == 0 { 0.0 } else { onset - groups[g - 1].onset_beats };
            let ioi_next = if g == last { 0.0 } else { groups[g + 1].onset_beats - onset };
            [
                pitch_mean / 127.0,
                f64::from(hi - lo) / 127.0,
                chord_size(notes.len()),
                beat_phase(onset),
                onset.rem_euclid(4.0) / 4.0,
                capped(ioi_prev, 4.0),
                capped(ioi_next, 4.0),
                capped(dur_mean, 4.0),
                if g == 0 { 1.0 } else { 0.0 },
                if g == last { 1.0 } else { 0.0 },
            ]
        })
        .collect()
}

/// One descriptor vector per accompaniment note, indexed by note id.
///
/// Layout: pitch, duration, position within the chord, chord size, beat phase.
pub fn extract_note_basis(accomp: &AccompanimentScore) -> Vec<NoteBasis> {
    let mut out = vec![[0.0; NOTE_BASIS_DIM]; accomp.notes().len()];
    for group in accomp.groups() {
        let notes: Vec<&ScoreNote> = accomp.group_notes(group).collect();
        let lo = notes.iter().map(|n| n.pitch).min().unwrap_or(0);
        let hi = notes.iter().map(|n| n.pitch).max().unwrap_or(0);
        let span = f64::from(hi - lo).max(1.0);
        for n in &notes {
            out[n.id.0] = [
                f64::from(n.pitch) / 127.0,
                capped(n.duration, 4.0),
                f64::from(n.pitch - lo) / span,
                chord_size(notes.len()),
                beat_phase(n.onset),
            ];
        }
    }
    out
}

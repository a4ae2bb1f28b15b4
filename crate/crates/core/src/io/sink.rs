//! Output sinks for solo echo and accompaniment notes.

use std::path::PathBuf;

use crate::engine::EmittedNote;
use crate::follower::AlignmentLabel;
use crate::score::smf::{write_smf, TrackBuilder};
use crate::score::PerformedNote;

/// Capture-file resolution: 960 ticks per quarter at 120 BPM.
pub const CAPTURE_DIVISION: u16 = 960;
pub const CAPTURE_TICKS_PER_SECOND: f64 = 1920.0;
const DEFAULT_SOLO_LENGTH: f64 = 0.25;

pub trait MidiSink {
    fn solo(&mut self, note: &PerformedNote, label: AlignmentLabel);
    fn accompaniment(&mut self, note: &EmittedNote);
    fn finish(&mut self) -> std::io::Result<()>;
}

/// Records everything in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySink {
    pub solo: Vec<(PerformedNote, AlignmentLabel)>,
    pub accompaniment: Vec<EmittedNote>,
}

impl MidiSink for MemorySink {
    fn solo(&mut self, note: &PerformedNote, label: AlignmentLabel) {
        self.solo.push((*note, label));
    }

    fn accompaniment(&mut self, note: &EmittedNote) {
        self.accompaniment.push(*note);
    }

    fn finish(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl MemorySink {
    /// Format-1 SMF with a tempo track, the solo echo and the accompaniment.
    pub fn to_smf(&self) -> Vec<u8> {
        let tick = |s: f64| (s.max(0.0) * CAPTURE_TICKS_PER_SECOND).round() as u64;
        let mut tempo = TrackBuilder::new();
        tempo.tempo(0, 500_000);
        let mut solo = TrackBuilder::new();
        solo.name("solo");
        for (n, _) in &self.solo {
            let on = tick(n.onset_seconds);
            let off = tick(n.onset_seconds + n.duration_seconds.unwrap_or(DEFAULT_SOLO_LENGTH)).max(on + 1);
            solo.note(0, n.pitch, n.velocity, on, off);
        }
        let mut accomp = TrackBuilder::new();
        accomp.name("accompaniment");
        for n in &self.accompaniment {
            let on = tick(n.on_time);
            accomp.note(1, n.pitch, n.velocity, on, tick(n.off_time).max(on + 1));
        }
        write_smf(CAPTURE_DIVISION, &[tempo, solo, accomp])
    }
}

/// Buffers the session and writes it as an SMF when finished.
#[derive(Debug)]
pub struct CaptureSink {
    path: PathBuf,
    notes: MemorySink,
}

impl CaptureSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            notes: MemorySink::default(),
        }
    }

    pub fn recorded(&self) -> &MemorySink {
        &self.notes
    }
}

impl MidiSink for CaptureSink {
    fn solo(&mut self, note: &PerformedNote, label: AlignmentLabel) {
        self.notes.solo(note, label);
    }

    fn accompaniment(&mut self, note: &EmittedNote) {
        self.notes.accompaniment(note);
    }

    fn finish(&mut self) -> std::io::Result<()> {
        std::fs::write(&self.path, self.notes.to_smf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{parse_smf_with, NoteId, TrackSelection};

    #[test]
    fn capture_parses_back() {
        let mut sink = MemorySink::default();
        sink.solo(
            &PerformedNote {
                pitch: 72,
                onset_seconds: 0.5,
                velocity: 90,
                duration_seconds: Some(0.5),
            },
            AlignmentLabel::Match(0),
        );
        sink.accompaniment(&EmittedNote {
            note_id: NoteId(0),
            pitch: 48,
            velocity: 60,
            on_time: 1.0,
            off_time: 2.0,
            lateness: 0.0,
        });
        let parsed = parse_smf_with(&sink.to_smf(), TrackSelection::default()).unwrap();
        // at 120 BPM one beat is half a second
        assert_eq!(parsed.solo.notes()[0].onset, 1.0);
        assert_eq!(parsed.accomp.notes()[0].onset, 2.0);
        assert_eq!(parsed.accomp.notes()[0].duration, 2.0);
    }
}

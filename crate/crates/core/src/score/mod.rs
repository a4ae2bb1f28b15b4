//! Symbolic score model: solo line, chord-grouped accompaniment, performed notes.

pub mod smf;

use serde::{Deserialize, Serialize};

pub use smf::{parse_smf, parse_smf_with, write_score_smf, ParsedScore, SmfError, TrackSelection};

/// Onsets closer than this (in beats) are considered simultaneous.
pub const ONSET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoteId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Solo,
    Accompaniment,
}

/// A note of the written score. Onset and duration are in beats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNote {
    pub id: NoteId,
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
    pub part: Part,
}

impl ScoreNote {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// Returned by [`validate_solo`] when two solo notes share an onset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonophonyViolation {
    /// Index of the second note of the offending pair.
    pub index: usize,
}

impl std::fmt::Display for MonophonyViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "solo note {} does not start after its predecessor", self.index)
    }
}

/// Monophonic solo line with strictly increasing onsets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SoloScore {
    notes: Vec<ScoreNote>,
}

impl SoloScore {
    /// Builds a solo score, sorting by onset and rejecting simultaneous onsets.
    pub fn new(mut notes: Vec<ScoreNote>) -> Result<Self, MonophonyViolation> {
        notes.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        for n in &mut notes {
            n.part = Part::Solo;
        }
        validate_solo(&notes)?;
        Ok(Self { notes })
    }

    /// Convenience constructor from `(pitch, onset, duration)` triples.
    pub fn from_triples(triples: &[(u8, f64, f64)]) -> Result<Self, MonophonyViolation> {
        let notes = triples
            .iter()
            .enumerate()
            .map(|(i, &(pitch, onset, duration))| ScoreNote {
                id: NoteId(i),
                pitch,
                onset,
                duration,
                part: Part::Solo,
            })
            .collect();
        Self::new(notes)
    }

    pub fn notes(&self) -> &[ScoreNote] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn pitch(&self, index: usize) -> u8 {
        self.notes[index].pitch
    }

    pub fn onset(&self, index: usize) -> f64 {
        self.notes[index].onset
    }

    /// Beats between consecutive onsets; one shorter than the note list.
    pub fn iois(&self) -> Vec<f64> {
        self.notes.windows(2).map(|w| w[1].onset - w[0].onset).collect()
    }
}

/// Checks that solo onsets strictly increase. Overlapping durations are allowed.
pub fn validate_solo(notes: &[ScoreNote]) -> Result<(), MonophonyViolation> {
    for (i, w) in notes.windows(2).enumerate() {
        if w[1].onset - w[0].onset <= ONSET_TOLERANCE {
            return Err(MonophonyViolation { index: i + 1 });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetGroup {
    pub onset_beats: f64,
    pub note_ids: Vec<NoteId>,
}

/// Accompaniment notes grouped by shared onset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccompanimentScore {
    notes: Vec<ScoreNote>,
    groups: Vec<OnsetGroup>,
}

impl AccompanimentScore {
    pub fn notes(&self) -> &[ScoreNote] {
        &self.notes
    }

    pub fn groups(&self) -> &[OnsetGroup] {
        &self.groups
    }

    /// Looks a note up by id. Ids are indices into [`Self::notes`].
    pub fn note(&self, id: NoteId) -> &ScoreNote {
        &self.notes[id.0]
    }

    pub fn group_notes<'a>(&'a self, group: &'a OnsetGroup) -> impl Iterator<Item = &'a ScoreNote> + 'a {
        group.note_ids.iter().map(move |&id| self.note(id))
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }
}

/// Groups notes sharing an onset (within [`ONSET_TOLERANCE`]) into chords.
///
/// Note ids are reassigned to positions in the returned note table, which is
/// sorted by onset and then pitch.
pub fn group_onsets(notes: Vec<ScoreNote>) -> AccompanimentScore {
    let mut notes = notes;
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    let mut groups: Vec<OnsetGroup> = Vec::new();
    for (i, note) in notes.iter_mut().enumerate() {
        note.id = NoteId(i);
        note.part = Part::Accompaniment;
        match groups.last_mut() {
            Some(g) if (note.onset - g.onset_beats).abs() <= ONSET_TOLERANCE => g.note_ids.push(note.id),
            _ => groups.push(OnsetGroup {
                onset_beats: note.onset,
                note_ids: vec![note.id],
            }),
        }
    }
    AccompanimentScore { notes, groups }
}

/// A note as played. `duration_seconds` is `None` while the key is still held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformedNote {
    pub pitch: u8,
    pub onset_seconds: f64,
    pub velocity: u8,
    pub duration_seconds: Option<f64>,
}

/// Solo and accompaniment parts of one piece.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Piece {
    pub solo: SoloScore,
    pub accomp: AccompanimentScore,
}

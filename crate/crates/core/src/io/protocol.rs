//! JSON messages exchanged with the piano-roll UI, one object per frame.

use serde::{Deserialize, Serialize};

use crate::engine::{EmittedNote, Target};
use crate::follower::AlignmentLabel;
use crate::score::{PerformedNote, Piece, ScoreNote};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoloStatus {
    Match,
    Insert,
    Miss,
}

impl From<AlignmentLabel> for SoloStatus {
    fn from(label: AlignmentLabel) -> Self {
        match label {
            AlignmentLabel::Match(_) => SoloStatus::Match,
            AlignmentLabel::Insertion => SoloStatus::Insert,
            AlignmentLabel::WrongNote(_) => SoloStatus::Miss,
        }
    }
}

/// A score note as sent in the `piece` message; times in beats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PieceNote {
    pub pitch: u8,
    pub onset: f64,
    pub duration: f64,
}

impl From<&ScoreNote> for PieceNote {
    fn from(n: &ScoreNote) -> Self {
        Self {
            pitch: n.pitch,
            onset: n.onset,
            duration: n.duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    SoloNote {
        pitch: u8,
        velocity: u8,
        time: f64,
        status: SoloStatus,
    },
    AccompNote {
        pitch: u8,
        velocity: u8,
        time: f64,
        duration: f64,
    },
    Tempo {
        beat_period: f64,
        score_beat: f64,
    },
    Piece {
        solo: Vec<PieceNote>,
        accomp: Vec<PieceNote>,
    },
}

impl ServerMessage {
    pub fn solo(note: &PerformedNote, label: AlignmentLabel) -> Self {
        ServerMessage::SoloNote {
            pitch: note.pitch,
            velocity: note.velocity,
            time: note.onset_seconds,
            status: label.into(),
        }
    }

    pub fn accomp(note: &EmittedNote) -> Self {
        ServerMessage::AccompNote {
            pitch: note.pitch,
            velocity: note.velocity,
            time: note.on_time,
            duration: note.off_time - note.on_time,
        }
    }

    pub fn piece(piece: &Piece) -> Self {
        ServerMessage::Piece {
            solo: piece.solo.notes().iter().map(PieceNote::from).collect(),
            accomp: piece.accomp.notes().iter().map(PieceNote::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Scaling { target: Target, value: f64 },
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages serialize")
    }
}

/// Parses a client frame. Unknown or malformed messages are logged and dropped.
pub fn parse_client_message(text: &str) -> Option<ClientMessage> {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("ignoring malformed client message: {e}");
            return None;
        }
    };
    match value.get("type").and_then(|t| t.as_str()) {
        Some("scaling") => match serde_json::from_value(value) {
            Ok(msg) => Some(msg),
            Err(e) => {
                log::warn!("ignoring invalid scaling message: {e}");
                None
            }
        },
        other => {
            log::warn!("ignoring client message of unknown type {other:?}");
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_on_the_wire() {
        let m = ServerMessage::SoloNote {
            pitch: 60,
            velocity: 80,
            time: 1.5,
            status: SoloStatus::Insert,
        };
        assert_eq!(
            m.to_json(),
            r#"{"type":"solo_note","pitch":60,"velocity":80,"time":1.5,"status":"insert"}"#
        );
        let t = ServerMessage::Tempo {
            beat_period: 0.5,
            score_beat: 3.0,
        };
        assert_eq!(t.to_json(), r#"{"type":"tempo","beat_period":0.5,"score_beat":3.0}"#);
        let c = ClientMessage::Scaling {
            target: Target::BpRatio,
            value: 1.5,
        };
        assert_eq!(c.to_json(), r#"{"type":"scaling","target":"bp","value":1.5}"#);
    }

    #[test]
    fn client_parsing() {
        assert_eq!(
            parse_client_message(r#"{"type":"scaling","target":"timing","value":0.5}"#),
            Some(ClientMessage::Scaling {
                target: Target::Timing,
                value: 0.5
            })
        );
        assert_eq!(parse_client_message(r#"{"type":"hello"}"#), None);
        assert_eq!(parse_client_message(r#"{"type":"scaling","target":"swing","value":1}"#), None);
        assert_eq!(parse_client_message("not json"), None);
    }

    #[test]
    fn status_mapping() {
        assert_eq!(SoloStatus::from(AlignmentLabel::Match(3)), SoloStatus::Match);
        assert_eq!(SoloStatus::from(AlignmentLabel::Insertion), SoloStatus::Insert);
        assert_eq!(SoloStatus::from(AlignmentLabel::WrongNote(1)), SoloStatus::Miss);
    }
}

//! Standard MIDI File reading and writing (format 0/1, ticks-per-quarter division).
//!
//! Only note events matter for the score; tempo, sysex and other meta events
//! are skipped. Note-ons are paired with note-offs first-in first-out per
//! `(track, channel, pitch)`, and a note-on with velocity 0 counts as a
//! note-off.

use std::collections::{HashMap, VecDeque};

use serde::Deserialize;
use thiserror::Error;

use super::{group_onsets, AccompanimentScore, NoteId, Part, Piece, ScoreNote, SoloScore};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmfError {
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("file truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("SMPTE time division is not supported")]
    SmpteDivision,
    #[error("invalid event in track {track} at byte {offset}: {reason}")]
    BadEvent {
        track: usize,
        offset: usize,
        reason: &'static str,
    },
    #[error("note-on without matching note-off in track {track} (channel {channel}, pitch {pitch}, tick {tick})")]
    UnmatchedNoteOn {
        track: usize,
        channel: u8,
        pitch: u8,
        tick: u64,
    },
    #[error("track {index} requested but the file has {available} tracks")]
    TrackOutOfRange { index: usize, available: usize },
    #[error("solo track is not monophonic: note {index} shares its onset with the previous note")]
    NotMonophonic { index: usize },
}

/// Which track chunks hold the solo and accompaniment parts.
///
/// `None` selects the default: the first note-carrying track is the solo, the
/// second is the accompaniment. Indices count `MTrk` chunks from zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
pub struct TrackSelection {
    #[serde(default)]
    pub solo_track: Option<usize>,
    #[serde(default)]
    pub accomp_track: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScore {
    pub solo: SoloScore,
    pub accomp: AccompanimentScore,
    pub ticks_per_beat: u16,
}

impl ParsedScore {
    pub fn into_piece(self) -> Piece {
        Piece {
            solo: self.solo,
            accomp: self.accomp,
        }
    }
}

/// Decodes a variable-length quantity, returning the value and bytes consumed.
///
/// At most four bytes are read, as the format allows.
pub fn read_vlq(bytes: &[u8]) -> Option<(u32, usize)> {
    let mut value: u32 = 0;
    for (i, &b) in bytes.iter().take(4).enumerate() {
        value = (value << 7) | u32::from(b & 0x7f);
        if b & 0x80 == 0 {
            return Some((value, i + 1));
        }
    }
    None
}

pub fn write_vlq(mut value: u32, out: &mut Vec<u8>) {
    assert!(value <= 0x0fff_ffff, "VLQ value out of range");
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        let cont = if i > 0 { 0x80 } else { 0 };
        out.push(buf[i] | cont);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct RawNote {
    on_tick: u64,
    off_tick: u64,
    pitch: u8,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], base: usize) -> Self {
        Self { data, pos: 0, base }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn u8(&mut self) -> Result<u8, SmfError> {
        let b = *self.data.get(self.pos).ok_or(SmfError::Truncated { offset: self.offset() })?;
        self.pos += 1;
        Ok(b)
    }

    fn peek(&self) -> Option<u8> {
        self.data.get(self.pos).copied()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SmfError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or(SmfError::Truncated {
            offset: self.base + self.data.len(),
        })?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn vlq(&mut self) -> Result<u32, SmfError> {
        match read_vlq(&self.data[self.pos.min(self.data.len())..]) {
            Some((v, n)) => {
                self.pos += n;
                Ok(v)
            }
            None if self.data.len() - self.pos.min(self.data.len()) < 4 => {
                Err(SmfError::Truncated { offset: self.offset() })
            }
            None => Err(SmfError::BadEvent {
                track: usize::MAX,
                offset: self.offset(),
                reason: "variable-length quantity longer than four bytes",
            }),
        }
    }
}

struct Header {
    format: u16,
    ntracks: u16,
    division: u16,
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize), SmfError> {
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(SmfError::BadHeader("missing MThd signature".into()));
    }
    if bytes.len() < 14 {
        return Err(SmfError::Truncated { offset: bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    if len < 6 {
        return Err(SmfError::BadHeader(format!("header length {len} < 6")));
    }
    let format = u16::from_be_bytes([bytes[8], bytes[9]]);
    let ntracks = u16::from_be_bytes([bytes[10], bytes[11]]);
    let division = u16::from_be_bytes([bytes[12], bytes[13]]);
    if format > 1 {
        return Err(SmfError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(SmfError::SmpteDivision);
    }
    if division == 0 {
        return Err(SmfError::BadHeader("division is zero".into()));
    }
    let body = 8usize.checked_add(len).ok_or(SmfError::Truncated { offset: bytes.len() })?;
    if body > bytes.len() {
        return Err(SmfError::Truncated { offset: bytes.len() });
    }
    Ok((
        Header {
            format,
            ntracks,
            division,
        },
        body,
    ))
}

fn parse_track(track: usize, data: &[u8], base: usize) -> Result<Vec<RawNote>, SmfError> {
    let mut cur = Cursor::new(data, base);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();
    let mut notes = Vec::new();
    let bad = |offset: usize, reason: &'static str| SmfError::BadEvent { track, offset, reason };

    while !cur.at_end() {
        let delta = cur.vlq().map_err(|e| match e {
            SmfError::BadEvent { offset, reason, .. } => bad(offset, reason),
            other => other,
        })?;
        tick += u64::from(delta);
        let offset = cur.offset();
        let status = match cur.peek() {
            Some(b) if b & 0x80 != 0 => {
                cur.pos += 1;
                b
            }
            Some(_) => running.ok_or_else(|| bad(offset, "data byte without running status"))?,
            None => return Err(SmfError::Truncated { offset }),
        };
        match status {
            0xff => {
                running = None;
                let kind = cur.u8()?;
                let len = cur.vlq()? as usize;
                cur.take(len)?;
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = cur.vlq()? as usize;
                cur.take(len)?;
            }
            0xf1..=0xfe => return Err(bad(offset, "system message not allowed in a track")),
            _ => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let n_data = if kind == 0xc0 || kind == 0xd0 { 1 } else { 2 };
                let mut d = [0u8; 2];
                for slot in d.iter_mut().take(n_data) {
                    let b = cur.u8()?;
                    if b & 0x80 != 0 {
                        return Err(bad(cur.offset() - 1, "status byte where data byte expected"));
                    }
                    *slot = b;
                }
                let [pitch, velocity] = d;
                let is_on = kind == 0x90 && velocity > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && velocity == 0);
                if is_on {
                    open.entry((channel, pitch)).or_default().push_back(tick);
                } else if is_off {
                    // Stray note-offs are ignored.
                    if let Some(on_tick) = open.get_mut(&(channel, pitch)).and_then(VecDeque::pop_front) {
                        notes.push(RawNote {
                            on_tick,
                            off_tick: tick,
                            pitch,
                        });
                    }
                }
            }
        }
    }

    if let Some((&(channel, pitch), ticks)) = open
        .iter()
        .filter(|(_, q)| !q.is_empty())
        .min_by_key(|(_, q)| q.front().copied())
    {
        return Err(SmfError::UnmatchedNoteOn {
            track,
            channel,
            pitch,
            tick: ticks[0],
        });
    }
    notes.sort_by_key(|n| (n.on_tick, n.pitch));
    Ok(notes)
}

/// Parses the note tracks of a file, one list of notes per `MTrk` chunk.
fn parse_tracks(bytes: &[u8]) -> Result<(Header, Vec<Vec<RawNote>>), SmfError> {
    let (header, mut pos) = parse_header(bytes)?;
    let mut tracks = Vec::new();
    while tracks.len() < usize::from(header.ntracks) {
        if pos + 8 > bytes.len() {
            return Err(SmfError::Truncated { offset: bytes.len() });
        }
        let id = &bytes[pos..pos + 4];
        let len = u32::from_be_bytes([bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]]) as usize;
        let start = pos + 8;
        let end = start.checked_add(len).filter(|&e| e <= bytes.len());
        let end = end.ok_or(SmfError::Truncated { offset: bytes.len() })?;
        if id == b"MTrk" {
            tracks.push(parse_track(tracks.len(), &bytes[start..end], start)?);
        }
        pos = end;
    }
    Ok((header, tracks))
}

fn to_score_notes(raw: &[RawNote], division: u16, part: Part) -> Vec<ScoreNote> {
    let tpb = f64::from(division);
    raw.iter()
        // zero-length notes carry no duration and are dropped
        .filter(|n| n.off_tick > n.on_tick)
        .enumerate()
        .map(|(i, n)| ScoreNote {
            id: NoteId(i),
            pitch: n.pitch,
            onset: n.on_tick as f64 / tpb,
            duration: (n.off_tick - n.on_tick) as f64 / tpb,
            part,
        })
        .collect()
}

pub fn parse_smf(bytes: &[u8]) -> Result<ParsedScore, SmfError> {
    parse_smf_with(bytes, TrackSelection::default())
}

pub fn parse_smf_with(bytes: &[u8], selection: TrackSelection) -> Result<ParsedScore, SmfError> {
    let (header, tracks) = parse_tracks(bytes)?;
    let _ = header.format;
    let carrying: Vec<usize> = (0..tracks.len()).filter(|&i| !tracks[i].is_empty()).collect();
    let pick = |explicit: Option<usize>, nth: usize| -> Result<Option<usize>, SmfError> {
        match explicit {
            Some(index) if index >= tracks.len() => Err(SmfError::TrackOutOfRange {
                index,
                available: tracks.len(),
            }),
            Some(index) => Ok(Some(index)),
            None => Ok(carrying.get(nth).copied()),
        }
    };
    let solo_idx = pick(selection.solo_track, 0)?;
    let accomp_idx = match selection.accomp_track {
        Some(_) => pick(selection.accomp_track, 0)?,
        // default: the next note-carrying track after the solo one
        None => carrying.iter().copied().find(|&i| Some(i) > solo_idx && Some(i) != solo_idx),
    };

    let solo_notes = solo_idx
        .map(|i| to_score_notes(&tracks[i], header.division, Part::Solo))
        .unwrap_or_default();
    let solo = SoloScore::new(solo_notes).map_err(|v| SmfError::NotMonophonic { index: v.index })?;
    let accomp_notes = accomp_idx
        .map(|i| to_score_notes(&tracks[i], header.division, Part::Accompaniment))
        .unwrap_or_default();
    Ok(ParsedScore {
        solo,
        accomp: group_onsets(accomp_notes),
        ticks_per_beat: header.division,
    })
}

/// A track under construction, with events at absolute ticks.
#[derive(Debug, Clone, Default)]
pub struct TrackBuilder {
    // (tick, order, bytes); order sorts note-offs before note-ons at equal ticks
    events: Vec<(u64, u8, Vec<u8>)>,
}

impl TrackBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn name(&mut self, name: &str) -> &mut Self {
        let mut bytes = vec![0xff, 0x03];
        write_vlq(name.len() as u32, &mut bytes);
        bytes.extend_from_slice(name.as_bytes());
        self.events.push((0, 0, bytes));
        self
    }

    /// Tempo meta event in microseconds per quarter note.
    pub fn tempo(&mut self, tick: u64, micros_per_quarter: u32) -> &mut Self {
        let [_, a, b, c] = micros_per_quarter.to_be_bytes();
        self.events.push((tick, 0, vec![0xff, 0x51, 0x03, a, b, c]));
        self
    }

    pub fn note(&mut self, channel: u8, pitch: u8, velocity: u8, on_tick: u64, off_tick: u64) -> &mut Self {
        let ch = channel & 0x0f;
        self.events.push((off_tick, 1, vec![0x80 | ch, pitch & 0x7f, 0]));
        self.events.push((on_tick, 2, vec![0x90 | ch, pitch & 0x7f, velocity.clamp(1, 127)]));
        self
    }

    fn encode(&self) -> Vec<u8> {
        let mut events: Vec<&(u64, u8, Vec<u8>)> = self.events.iter().collect();
        events.sort_by_key(|e| (e.0, e.1));
        let mut body = Vec::new();
        let mut last = 0u64;
        for (tick, _, bytes) in events {
            write_vlq((tick - last) as u32, &mut body);
            body.extend_from_slice(bytes);
            last = *tick;
        }
        body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        body
    }
}

/// Serializes tracks as a format-1 file.
pub fn write_smf(division: u16, tracks: &[TrackBuilder]) -> Vec<u8> {
    assert!(division & 0x8000 == 0 && division > 0, "division must be ticks per quarter");
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    for t in tracks {
        let body = t.encode();
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    out
}

/// Writes a piece as a format-1 file: tempo track, solo track, accompaniment track.
pub fn write_score_smf(piece: &Piece, ticks_per_beat: u16) -> Vec<u8> {
    let to_tick = |beats: f64| (beats * f64::from(ticks_per_beat)).round() as u64;
    let mut tempo = TrackBuilder::new();
    tempo.tempo(0, 500_000);
    let mut solo = TrackBuilder::new();
    solo.name("solo");
    for n in piece.solo.notes() {
        solo.note(0, n.pitch, 80, to_tick(n.onset), to_tick(n.end()));
    }
    let mut accomp = TrackBuilder::new();
    accomp.name("accompaniment");
    for n in piece.accomp.notes() {
        accomp.note(1, n.pitch, 64, to_tick(n.onset), to_tick(n.end()));
    }
    write_smf(ticks_per_beat, &[tempo, solo, accomp])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smf(division: u16, tracks: &[&[u8]]) -> Vec<u8> {
        let mut out = b"MThd".to_vec();
        out.extend_from_slice(&6u32.to_be_bytes());
        out.extend_from_slice(&1u16.to_be_bytes());
        out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
        out.extend_from_slice(&division.to_be_bytes());
        for t in tracks {
            out.extend_from_slice(b"MTrk");
            out.extend_from_slice(&(t.len() as u32).to_be_bytes());
            out.extend_from_slice(t);
        }
        out
    }

    // Independent decoder: accumulate 7-bit groups until a byte below 0x80.
    fn reference_vlq(bytes: &[u8]) -> u32 {
        let mut v = 0u32;
        for &b in bytes {
            v = v * 128 + u32::from(b % 128);
            if b < 128 {
                break;
            }
        }
        v
    }

    #[test]
    fn vlq_decoding() {
        assert_eq!(reference_vlq(&[0x81, 0x48]), 200);
        assert_eq!(read_vlq(&[0x81, 0x48]), Some((200, 2)));
        assert_eq!(read_vlq(&[0x00]), Some((0, 1)));
        assert_eq!(read_vlq(&[0xff, 0xff, 0xff, 0x7f]), Some((0x0fff_ffff, 4)));
        assert_eq!(read_vlq(&[0x80, 0x80, 0x80, 0x80, 0x00]), None);
        assert_eq!(read_vlq(&[0x81]), None);
    }

    #[test]
    fn vlq_write_matches_reference() {
        for v in [0u32, 1, 127, 128, 200, 8191, 16384, 0x0fff_ffff] {
            let mut out = Vec::new();
            write_vlq(v, &mut out);
            assert_eq!(reference_vlq(&out), v);
            assert_eq!(read_vlq(&out), Some((v, out.len())));
        }
    }

    #[test]
    fn single_note() {
        // note-on 60 vel 64 at 0; note-off at 480 (0x83 0x60)
        let track: &[u8] = &[0x00, 0x90, 60, 64, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00];
        let parsed = parse_smf(&smf(480, &[track])).unwrap();
        assert_eq!(parsed.ticks_per_beat, 480);
        let n = &parsed.solo.notes()[0];
        assert_eq!((n.pitch, n.onset, n.duration), (60, 0.0, 1.0));
        assert!(parsed.accomp.is_empty());
    }

    #[test]
    fn empty_track_parses() {
        let parsed = parse_smf(&smf(96, &[&[0x00, 0xff, 0x2f, 0x00]])).unwrap();
        assert!(parsed.solo.is_empty());
        assert!(parsed.accomp.is_empty());
    }

    #[test]
    fn running_status_and_velocity_zero_off() {
        // on 60, then running-status on 62 at +96 and "off" via velocity 0
        let track: &[u8] = &[
            0x00, 0x90, 60, 70, //
            0x60, 60, 0, // running status: vel 0 = off at 96
            0x00, 62, 70, // on 62 at 96
            0x60, 62, 0, // off at 192
            0x00, 0xff, 0x2f, 0x00,
        ];
        let parsed = parse_smf(&smf(96, &[track])).unwrap();
        let got: Vec<(u8, f64, f64)> = parsed.solo.notes().iter().map(|n| (n.pitch, n.onset, n.duration)).collect();
        assert_eq!(got, vec![(60, 0.0, 1.0), (62, 1.0, 1.0)]);
    }

    #[test]
    fn tempo_track_is_skipped_by_default() {
        let tempo: &[u8] = &[0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, 0x00, 0xff, 0x2f, 0x00];
        let solo: &[u8] = &[0x00, 0x90, 72, 80, 0x60, 0x80, 72, 0, 0x00, 0xff, 0x2f, 0x00];
        let acc: &[u8] = &[
            0x00, 0x91, 48, 60, 0x00, 0x91, 52, 60, 0x81, 0x40, 0x81, 48, 0, 0x00, 0x81, 52, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        let parsed = parse_smf(&smf(96, &[tempo, solo, acc])).unwrap();
        assert_eq!(parsed.solo.len(), 1);
        assert_eq!(parsed.accomp.notes().len(), 2);
        assert_eq!(parsed.accomp.groups().len(), 1);
        assert_eq!(parsed.accomp.groups()[0].note_ids.len(), 2);
        assert_eq!(parsed.accomp.notes()[0].duration, 2.0);

        let swapped = parse_smf_with(
            &smf(96, &[tempo, solo, acc]),
            TrackSelection {
                solo_track: Some(1),
                accomp_track: Some(1),
            },
        )
        .unwrap();
        assert_eq!(swapped.accomp.notes().len(), 1);

        let err = parse_smf_with(
            &smf(96, &[tempo, solo, acc]),
            TrackSelection {
                solo_track: Some(5),
                accomp_track: None,
            },
        );
        assert_eq!(err, Err(SmfError::TrackOutOfRange { index: 5, available: 3 }));
    }

    #[test]
    fn error_paths() {
        assert!(matches!(parse_smf(b"RIFF...."), Err(SmfError::BadHeader(_))));
        assert!(matches!(parse_smf(b"MThd"), Err(SmfError::Truncated { .. })));

        let mut smpte = smf(96, &[&[0x00, 0xff, 0x2f, 0x00]]);
        smpte[12] = 0xe7;
        smpte[13] = 0x28;
        assert_eq!(parse_smf(&smpte), Err(SmfError::SmpteDivision));

        let mut fmt2 = smf(96, &[&[0x00, 0xff, 0x2f, 0x00]]);
        fmt2[9] = 2;
        assert_eq!(parse_smf(&fmt2), Err(SmfError::UnsupportedFormat(2)));

        let mut cut = smf(96, &[&[0x00, 0x90, 60, 64, 0x60, 0x80, 60, 0, 0x00, 0xff, 0x2f, 0x00]]);
        cut.truncate(cut.len() - 5);
        assert!(matches!(parse_smf(&cut), Err(SmfError::Truncated { .. })));

        let dangling: &[u8] = &[0x00, 0x90, 60, 64, 0x83, 0x60, 0x90, 62, 64, 0x00, 0xff, 0x2f, 0x00];
        assert_eq!(
            parse_smf(&smf(480, &[dangling])),
            Err(SmfError::UnmatchedNoteOn {
                track: 0,
                channel: 0,
                pitch: 60,
                tick: 0
            })
        );

        let chord_solo: &[u8] = &[
            0x00, 0x90, 60, 64, 0x00, 0x90, 64, 64, 0x60, 0x80, 60, 0, 0x00, 0x80, 64, 0, 0x00, 0xff, 0x2f, 0x00,
        ];
        assert_eq!(parse_smf(&smf(96, &[chord_solo])), Err(SmfError::NotMonophonic { index: 1 }));

        let no_status: &[u8] = &[0x00, 60, 64];
        assert!(matches!(parse_smf(&smf(96, &[no_status])), Err(SmfError::BadEvent { .. })));
    }

    #[test]
    fn score_round_trip() {
        let solo = SoloScore::from_triples(&[(60, 0.0, 1.0), (62, 1.0, 0.5), (64, 1.5, 2.5)]).unwrap();
        let acc = group_onsets(
            [(48, 0.0, 2.0), (52, 0.0, 2.0), (55, 2.0, 1.0)]
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
        let piece = Piece { solo, accomp: acc };
        let bytes = write_score_smf(&piece, 480);
        let back = parse_smf(&bytes).unwrap().into_piece();
        assert_eq!(back, piece);
    }
}

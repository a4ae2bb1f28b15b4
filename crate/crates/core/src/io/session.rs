//! A complete accompaniment session: input stream, pipeline, output sink and
//! UI telemetry driven by one event loop.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::Receiver;
use std::time::Instant;

use thiserror::Error;

use crate::engine::{EmittedNote, Target};
use crate::mixer::{ModelWeights, WeightsError};
use crate::pipeline::{Accompanist, PipelineConfig, PipelineError};
use crate::score::{parse_smf_with, PerformedNote, Piece, SmfError, TrackSelection};
use crate::sim::{simulate, SimConfig, SimError};

use super::clock::{Clock, ClockMode};
use super::protocol::{ClientMessage, ServerMessage};
use super::sink::{MemorySink, MidiSink};
use super::ws::{WsServer, DEFAULT_CLIENT_QUEUE};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INVALID_INPUT: i32 = 4;
pub const EXIT_DEVICE_NOT_FOUND: i32 = 5;
pub const EXIT_PORT_BUSY: i32 = 6;
pub const EXIT_INTERNAL: i32 = 7;

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Simulation(SimConfig),
    /// A live MIDI input port, by name.
    Device(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputSink {
    Memory,
    CaptureFile(PathBuf),
    Device(String),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub score_path: PathBuf,
    /// `None` plays with the neutral model.
    pub weights_path: Option<PathBuf>,
    pub tracks: TrackSelection,
    pub input: InputSource,
    pub output: OutputSink,
    pub ws_port: Option<u16>,
    pub clock: ClockMode,
    pub pipeline: PipelineConfig,
    /// Initial scaling factors, applied before the first note.
    pub scaling: Vec<(Target, f64)>,
}

impl SessionConfig {
    pub fn new(score_path: impl Into<PathBuf>, input: InputSource) -> Self {
        Self {
            score_path: score_path.into(),
            weights_path: None,
            tracks: TrackSelection::default(),
            input,
            output: OutputSink::Memory,
            ws_port: None,
            clock: ClockMode::default(),
            pipeline: PipelineConfig::default(),
            scaling: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Score { path: PathBuf, source: SmfError },
    #[error("{}: {source}", path.display())]
    Weights { path: PathBuf, source: WeightsError },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("MIDI device not found: {0} (this build has no device backend)")]
    DeviceNotFound(String),
    #[error("port {port} is already in use")]
    PortBusy { port: u16, source: std::io::Error },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl SessionError {
    pub fn exit_code(&self) -> i32 {
        match self {
            SessionError::Io { .. } => EXIT_IO,
            SessionError::Score { .. } | SessionError::Weights { .. } | SessionError::Config(_) | SessionError::Simulation(_) => {
                EXIT_INVALID_INPUT
            }
            SessionError::DeviceNotFound(_) => EXIT_DEVICE_NOT_FOUND,
            SessionError::PortBusy { .. } => EXIT_PORT_BUSY,
            SessionError::Pipeline(_) => EXIT_INTERNAL,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, SessionError> {
    std::fs::read(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_piece(path: &Path, tracks: TrackSelection) -> Result<Piece, SessionError> {
    let bytes = read_file(path)?;
    parse_smf_with(&bytes, tracks)
        .map(|p| p.into_piece())
        .map_err(|source| SessionError::Score {
            path: path.to_path_buf(),
            source,
        })
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, SessionError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    ModelWeights::from_json(&text).map_err(|source| SessionError::Weights {
        path: path.to_path_buf(),
        source,
    })
}

/// Outbound UI messages and inbound control, as seen by the event loop.
pub trait Telemetry {
    fn publish(&mut self, msg: &ServerMessage);
    fn poll_control(&mut self) -> Option<ClientMessage>;

    /// Messages lost because a consumer fell behind.
    fn dropped(&self) -> u64 {
        0
    }
}

impl Telemetry for () {
    fn publish(&mut self, _msg: &ServerMessage) {}

    fn poll_control(&mut self) -> Option<ClientMessage> {
        None
    }
}

/// Telemetry over the WebSocket server.
pub struct WsTelemetry {
    pub server: WsServer,
    pub control: Receiver<ClientMessage>,
}

impl Telemetry for WsTelemetry {
    fn publish(&mut self, msg: &ServerMessage) {
        self.server.broadcast(msg);
    }

    fn poll_control(&mut self) -> Option<ClientMessage> {
        self.control.try_recv().ok()
    }

    fn dropped(&self) -> u64 {
        self.server.dropped()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    /// Wall time spent in the solo-event handler, one entry per solo note.
    pub handler_seconds: Vec<f64>,
    pub interrupted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SessionReport {
    pub recorded: MemorySink,
    pub stats: RunStats,
    /// UI messages dropped for slow clients.
    pub ws_dropped: u64,
    pub wall_seconds: f64,
}

struct Loop<'a> {
    acc: &'a mut Accompanist,
    clock: &'a mut Clock,
    sink: &'a mut dyn MidiSink,
    telemetry: &'a mut dyn Telemetry,
}

impl Loop<'_> {
    fn emit(&mut self, notes: &[EmittedNote]) {
        for n in notes {
            self.sink.accompaniment(n);
            self.telemetry.publish(&ServerMessage::accomp(n));
        }
    }

    fn apply_controls(&mut self) {
        let mut changed = false;
        while let Some(ClientMessage::Scaling { target, value }) = self.telemetry.poll_control() {
            match self.acc.engine_mut().set_scaling(target, value) {
                Ok(s) => {
                    log::info!("scaling {} = {s}", target.name());
                    changed = true;
                }
                Err(e) => log::warn!("ignoring scaling message: {e}"),
            }
        }
        if changed {
            let now = self.clock.now();
            let fired = self.acc.engine_mut().reschedule(now);
            self.emit(&fired);
        }
    }

    /// Plays everything due up to and including `t`.
    fn advance_to(&mut self, t: f64, stop: &AtomicBool) -> bool {
        loop {
            if stop.load(Ordering::Relaxed) {
                return false;
            }
            self.apply_controls();
            match self.acc.next_due() {
                Some(due) if due <= t => {
                    self.clock.wait_until(due);
                    let notes = self.acc.pop_due(due);
                    self.emit(&notes);
                }
                _ => break,
            }
        }
        if t.is_finite() {
            self.clock.wait_until(t);
        }
        true
    }
}

/// Feeds `notes` (sorted by onset) through the pipeline, sending output to
/// `sink` and `telemetry` as the clock reaches each event. Setting `stop`
/// ends the run early; the sink is finished either way.
pub fn run_performance(
    acc: &mut Accompanist,
    notes: &[PerformedNote],
    clock: &mut Clock,
    sink: &mut dyn MidiSink,
    telemetry: &mut dyn Telemetry,
    stop: &AtomicBool,
) -> Result<RunStats, SessionError> {
    let mut stats = RunStats {
        handler_seconds: Vec::with_capacity(notes.len()),
        interrupted: false,
    };
    let mut lp = Loop {
        acc,
        clock,
        sink,
        telemetry,
    };
    for note in notes {
        if !lp.advance_to(note.onset_seconds, stop) {
            stats.interrupted = true;
            break;
        }
        let started = Instant::now();
        let outcome = lp.acc.handle_solo(note)?;
        stats.handler_seconds.push(started.elapsed().as_secs_f64());

        lp.sink.solo(note, outcome.alignment.label);
        lp.telemetry.publish(&ServerMessage::solo(note, outcome.alignment.label));
        lp.telemetry.publish(&ServerMessage::Tempo {
            beat_period: outcome.tempo.beat_period(),
            score_beat: outcome.score_beat,
        });
        lp.emit(&outcome.fired);
    }
    if !stats.interrupted && !lp.advance_to(f64::INFINITY, stop) {
        stats.interrupted = true;
    }
    lp.sink.finish().map_err(|source| SessionError::Io {
        path: PathBuf::from("<output>"),
        source,
    })?;
    Ok(stats)
}

struct FileSink<'a> {
    path: &'a Path,
    notes: &'a mut MemorySink,
}

impl MidiSink for FileSink<'_> {
    fn solo(&mut self, note: &PerformedNote, label: crate::follower::AlignmentLabel) {
        self.notes.solo(note, label);
    }

    fn accompaniment(&mut self, note: &EmittedNote) {
        self.notes.accompaniment(note);
    }

    fn finish(&mut self) -> std::io::Result<()> {
        std::fs::write(self.path, self.notes.to_smf())
    }
}

fn check(cfg: &SessionConfig) -> Result<(), SessionError> {
    if let Some(port) = cfg.ws_port {
        if port < 1024 {
            return Err(SessionError::Config(format!("WebSocket port {port} is outside 1024-65535")));
        }
    }
    if let ClockMode::Virtual { speed: Some(s) } = cfg.clock {
        if !(s > 0.0 && s.is_finite()) {
            return Err(SessionError::Config("clock speed factor must be positive".into()));
        }
    }
    cfg.pipeline
        .follower
        .validate()
        .map_err(|e| SessionError::Config(e.to_string()))?;
    cfg.pipeline.tempo.validate().map_err(|e| SessionError::Config(e.to_string()))?;
    Ok(())
}

/// Runs a session to completion. `stop` interrupts it gracefully.
pub fn run_session(cfg: &SessionConfig, stop: &AtomicBool) -> Result<SessionReport, SessionError> {
    check(cfg)?;
    let piece = load_piece(&cfg.score_path, cfg.tracks)?;
    let weights = cfg.weights_path.as_deref().map(load_weights).transpose()?;
    let performance = match &cfg.input {
        InputSource::Simulation(sim) => simulate(&piece.solo, sim)?.notes,
        InputSource::Device(name) => return Err(SessionError::DeviceNotFound(name.clone())),
    };
    if let OutputSink::Device(name) = &cfg.output {
        return Err(SessionError::DeviceNotFound(name.clone()));
    }

    let mut acc = Accompanist::with_weights(&piece, weights.as_ref(), &cfg.pipeline)?;
    for &(target, s) in &cfg.scaling {
        acc.engine_mut()
            .set_scaling(target, s)
            .map_err(|e| SessionError::Config(e.to_string()))?;
    }

    let mut telemetry: Box<dyn Telemetry> = match cfg.ws_port {
        Some(port) => {
            let (server, control) =
                WsServer::bind(port, &ServerMessage::piece(&piece), DEFAULT_CLIENT_QUEUE).map_err(|source| {
                    if source.kind() == std::io::ErrorKind::AddrInUse {
                        SessionError::PortBusy { port, source }
                    } else {
                        SessionError::Io {
                            path: PathBuf::from(format!("0.0.0.0:{port}")),
                            source,
                        }
                    }
                })?;
            log::info!("UI server listening on {}", server.local_addr());
            Box::new(WsTelemetry { server, control })
        }
        None => Box::new(()),
    };

    let mut clock = cfg.clock.into_clock();
    let mut recorded = MemorySink::default();
    let started = Instant::now();
    let stats = match &cfg.output {
        OutputSink::CaptureFile(path) => {
            let mut sink = FileSink {
                path,
                notes: &mut recorded,
            };
            run_performance(&mut acc, &performance, &mut clock, &mut sink, telemetry.as_mut(), stop).map_err(|e| match e {
                SessionError::Io { source, .. } => SessionError::Io {
                    path: path.clone(),
                    source,
                },
                other => other,
            })?
        }
        _ => run_performance(&mut acc, &performance, &mut clock, &mut recorded, telemetry.as_mut(), stop)?,
    };
    let wall_seconds = started.elapsed().as_secs_f64();
    Ok(SessionReport {
        recorded,
        stats,
        ws_dropped: telemetry.dropped(),
        wall_seconds,
    })
}

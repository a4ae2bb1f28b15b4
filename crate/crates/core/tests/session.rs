mod common;

use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use accomp_core::engine::Target;
use accomp_core::io::session::{
    run_performance, run_session, InputSource, OutputSink, SessionConfig, SessionError, WsTelemetry, EXIT_DEVICE_NOT_FOUND,
    EXIT_IO, EXIT_PORT_BUSY,
};
use accomp_core::io::{Clock, ClientMessage, ClockMode, MemorySink, ServerMessage, WsServer};
use accomp_core::mixer::ModelWeights;
use accomp_core::pipeline::{Accompanist, PipelineConfig};
use accomp_core::score::{parse_smf, write_score_smf, Piece};
use accomp_core::sim::{simulate, synthetic_piece, SimConfig};
use common::metronomic_piece;
use tungstenite::Message;

fn write_piece(dir: &Path, name: &str, piece: &Piece) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, write_score_smf(piece, 480)).unwrap();
    path
}

fn clean_session(path: &Path) -> SessionConfig {
    SessionConfig::new(path, InputSource::Simulation(SimConfig::clean(120.0)))
}

#[test]
fn clean_neutral_session_plays_the_deadpan_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let piece = metronomic_piece(32);
    let score = write_piece(dir.path(), "piece.mid", &piece);
    let capture = dir.path().join("out.mid");
    let mut cfg = clean_session(&score);
    cfg.output = OutputSink::CaptureFile(capture.clone());
    let report = run_session(&cfg, &AtomicBool::new(false)).unwrap();

    let played = parse_smf(&std::fs::read(&capture).unwrap()).unwrap().into_piece();
    assert_eq!(played.solo.len(), piece.solo.len());
    assert_eq!(played.accomp.notes().len(), piece.accomp.notes().len());
    for (got, want) in played.accomp.notes().iter().zip(piece.accomp.notes()) {
        // capture tempo is 120 BPM, so one captured beat is half a second
        assert_eq!(got.pitch, want.pitch);
        assert!((got.onset * 0.5 - want.onset * 0.5).abs() < 1e-3, "{got:?} vs {want:?}");
    }
    assert_eq!(report.recorded.accompaniment.len(), piece.accomp.notes().len());
    assert_eq!(report.stats.handler_seconds.len(), piece.solo.len());
    assert!(!report.stats.interrupted);
}

#[test]
fn capture_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let score = write_piece(dir.path(), "piece.mid", &synthetic_piece(9, 80));
    let weights = dir.path().join("w.json");
    std::fs::write(&weights, ModelWeights::random_init(4, 8, 8, 8).to_json()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut cfg = SessionConfig::new(
            &score,
            InputSource::Simulation(SimConfig {
                seed: 5,
                p_insert: 0.05,
                p_skip: 0.05,
                p_wrong_pitch: 0.05,
                ..SimConfig::default()
            }),
        );
        cfg.weights_path = Some(weights.clone());
        cfg.output = OutputSink::CaptureFile(out.clone());
        cfg.scaling = vec![(Target::Timing, 1.5)];
        run_session(&cfg, &AtomicBool::new(false)).unwrap();
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.mid"), run("b.mid"));
}

#[test]
fn paced_virtual_clock_beats_real_time() {
    let dir = tempfile::tempdir().unwrap();
    // 120 beats at 120 BPM is one minute of music
    let score = write_piece(dir.path(), "minute.mid", &metronomic_piece(120));
    let mut cfg = clean_session(&score);
    cfg.clock = ClockMode::Virtual { speed: Some(100.0) };
    let report = run_session(&cfg, &AtomicBool::new(false)).unwrap();
    let music = report.recorded.accompaniment.last().unwrap().off_time;
    assert!(music >= 59.0, "{music}");
    assert!(music / report.wall_seconds >= 50.0, "{music} s of music took {} s", report.wall_seconds);
}

#[test]
fn stop_flag_interrupts_and_still_finishes() {
    let dir = tempfile::tempdir().unwrap();
    let score = write_piece(dir.path(), "piece.mid", &metronomic_piece(16));
    let capture = dir.path().join("out.mid");
    let mut cfg = clean_session(&score);
    cfg.output = OutputSink::CaptureFile(capture.clone());
    let report = run_session(&cfg, &AtomicBool::new(true)).unwrap();
    assert!(report.stats.interrupted);
    assert!(capture.exists());
}

#[test]
fn missing_score_is_an_io_error_naming_the_path() {
    let cfg = clean_session(Path::new("/no/such/dir/score.mid"));
    let err = run_session(&cfg, &AtomicBool::new(false)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_IO);
    assert!(err.to_string().contains("/no/such/dir/score.mid"), "{err}");
}

#[test]
fn device_io_reports_device_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let score = write_piece(dir.path(), "piece.mid", &metronomic_piece(4));
    let cfg = SessionConfig::new(&score, InputSource::Device("Keystation".into()));
    let err = run_session(&cfg, &AtomicBool::new(false)).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_DEVICE_NOT_FOUND);
    assert!(err.to_string().contains("Keystation"));

    let mut cfg = clean_session(&score);
    cfg.output = OutputSink::Device("Synth".into());
    assert_eq!(run_session(&cfg, &AtomicBool::new(false)).unwrap_err().exit_code(), EXIT_DEVICE_NOT_FOUND);
}

#[test]
fn busy_port_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let score = write_piece(dir.path(), "piece.mid", &metronomic_piece(4));
    let holder = TcpListener::bind("0.0.0.0:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    let mut cfg = clean_session(&score);
    cfg.ws_port = Some(port);
    let err = run_session(&cfg, &AtomicBool::new(false)).unwrap_err();
    assert!(matches!(err, SessionError::PortBusy { .. }), "{err}");
    assert_eq!(err.exit_code(), EXIT_PORT_BUSY);
}

#[test]
fn privileged_ports_are_rejected() {
    let mut cfg = clean_session(Path::new("unused.mid"));
    cfg.ws_port = Some(80);
    assert!(matches!(
        run_session(&cfg, &AtomicBool::new(false)),
        Err(SessionError::Config(_))
    ));
}

fn read_server_message(socket: &mut tungstenite::WebSocket<tungstenite::stream::MaybeTlsStream<std::net::TcpStream>>) -> ServerMessage {
    loop {
        match socket.read().unwrap() {
            Message::Text(t) => return serde_json::from_str(&t).unwrap(),
            Message::Ping(_) | Message::Pong(_) => continue,
            other => panic!("unexpected frame {other:?}"),
        }
    }
}

fn accomp_times(sink: &MemorySink) -> Vec<f64> {
    sink.accompaniment.iter().map(|n| n.on_time).collect()
}

/// Plays `piece` through a live UI server, with `control` sent by a client
/// before the first note. Returns what was played and what the client saw.
fn play_with_ui(piece: &Piece, weights: &ModelWeights, control: Option<ClientMessage>) -> (MemorySink, Vec<ServerMessage>) {
    let (server, rx) = WsServer::bind(0, &ServerMessage::piece(piece), 100_000).unwrap();
    let port = server.local_addr().port();
    let (mut client, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}")).unwrap();
    let greeting = read_server_message(&mut client);
    assert_eq!(greeting, ServerMessage::piece(piece));

    // control messages are forwarded by the server's client thread; wait for
    // it to arrive before starting so the run is deterministic
    let mut pending = Vec::new();
    if let Some(msg) = control {
        client.send(Message::text(msg.to_json())).unwrap();
        pending.push(rx.recv_timeout(Duration::from_secs(5)).expect("control message forwarded"));
        assert_eq!(pending[0], msg);
    }
    let (tx, control_rx) = std::sync::mpsc::channel();
    for m in pending {
        tx.send(m).unwrap();
    }
    drop(rx);

    let mut telemetry = WsTelemetry {
        server,
        control: control_rx,
    };
    let mut acc = Accompanist::with_weights(piece, Some(weights), &PipelineConfig::default()).unwrap();
    let perf = simulate(&piece.solo, &SimConfig::clean(100.0)).unwrap();
    let mut sink = MemorySink::default();
    let stats = run_performance(
        &mut acc,
        &perf.notes,
        &mut Clock::instant(),
        &mut sink,
        &mut telemetry,
        &AtomicBool::new(false),
    )
    .unwrap();
    assert!(!stats.interrupted);
    assert_eq!(telemetry.server.dropped(), 0);

    let expected = 2 * perf.notes.len() + sink.accompaniment.len();
    let mut seen = Vec::with_capacity(expected);
    let deadline = Instant::now() + Duration::from_secs(10);
    while seen.len() < expected && Instant::now() < deadline {
        seen.push(read_server_message(&mut client));
    }
    telemetry.server.shutdown();
    (sink, seen)
}

#[test]
fn ui_round_trip_streams_telemetry_and_applies_scaling() {
    let piece = synthetic_piece(12, 40);
    let w = ModelWeights::random_init(3, 8, 8, 8);
    let (plain, seen) = play_with_ui(&piece, &w, None);

    let count = |kind: fn(&ServerMessage) -> bool| seen.iter().filter(|m| kind(m)).count();
    assert_eq!(count(|m| matches!(m, ServerMessage::SoloNote { .. })), piece.solo.len());
    assert_eq!(count(|m| matches!(m, ServerMessage::Tempo { .. })), piece.solo.len());
    let streamed: Vec<f64> = seen
        .iter()
        .filter_map(|m| match m {
            ServerMessage::AccompNote { time, .. } => Some(*time),
            _ => None,
        })
        .collect();
    assert_eq!(streamed, accomp_times(&plain));

    let flat = ClientMessage::Scaling {
        target: Target::Timing,
        value: 0.0,
    };
    let (scaled, _) = play_with_ui(&piece, &w, Some(flat));
    assert_ne!(accomp_times(&scaled), accomp_times(&plain));

    let mut acc = Accompanist::with_weights(&piece, Some(&w), &PipelineConfig::default()).unwrap();
    acc.engine_mut().set_scaling(Target::Timing, 0.0).unwrap();
    let perf = simulate(&piece.solo, &SimConfig::clean(100.0)).unwrap();
    let mut direct = MemorySink::default();
    run_performance(&mut acc, &perf.notes, &mut Clock::instant(), &mut direct, &mut (), &AtomicBool::new(false)).unwrap();
    assert_eq!(accomp_times(&scaled), accomp_times(&direct));
}

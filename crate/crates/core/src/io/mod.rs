//! Session plumbing: clocks, sinks, configuration, the UI server and the
//! event loop that ties them to the pipeline.

pub mod clock;
pub mod config;
pub mod protocol;
pub mod session;
pub mod sink;
pub mod ws;

pub use clock::{Clock, ClockMode};
pub use config::FileConfig;
pub use protocol::{parse_client_message, ClientMessage, PieceNote, ServerMessage, SoloStatus};
pub use session::{
    load_piece, load_weights, run_performance, run_session, InputSource, OutputSink, RunStats, SessionConfig, SessionError,
    SessionReport, Telemetry, WsTelemetry,
};
pub use sink::{CaptureSink, MemorySink, MidiSink};
pub use ws::WsServer;

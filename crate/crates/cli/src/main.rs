use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use accomp_core::engine::Target;
use accomp_core::eval::{evaluate, EvalError};
use accomp_core::follower::AlignmentLabel;
use accomp_core::io::session::EXIT_USAGE;
use accomp_core::io::{
    load_piece, run_session, ClockMode, FileConfig, InputSource, MemorySink, OutputSink, SessionConfig, SessionError,
};
use accomp_core::mixer::ModelWeights;
use accomp_core::sim::{simulate, SimConfig};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error
  3  I/O error (missing or unreadable file, cannot write output)
  4  invalid input (bad score, weights, config or simulation settings)
  5  MIDI device not found
  6  WebSocket port busy
  7  internal pipeline error

Set ACCOMP_LOG (error, warn, info, debug, trace) to control logging.";

#[derive(Parser)]
#[command(name = "accomp", version, about = "Real-time expressive accompaniment", after_help = EXIT_CODES, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an accompaniment session.
    Play(PlayArgs),
    /// Write a synthetic solo performance of the score as a MIDI file.
    Simulate(SimulateArgs),
    /// Score the follower and tempo tracker against a simulated performance.
    Evaluate(EvaluateArgs),
    /// Write randomly initialized model weights.
    InitWeights(InitWeightsArgs),
}

#[derive(Args)]
struct ScoreArgs {
    /// Score as a Standard MIDI File.
    #[arg(long)]
    score: PathBuf,
    /// JSON config file (track selection and model parameters).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Simulation settings as a JSON file.
    #[arg(long, value_name = "JSON")]
    sim_config: Option<PathBuf>,
    /// Random seed; overrides the seed in the simulation settings.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlayArgs {
    #[command(flatten)]
    score: ScoreArgs,
    /// Model weights (JSON). Without it the accompaniment is played deadpan.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// `sim` or `device:<name>`.
    #[arg(long, default_value = "sim")]
    input: String,
    /// `mem`, `file:<path>` or `device:<name>`.
    #[arg(long, default_value = "mem")]
    output: String,
    /// Serve the UI WebSocket on this port (1024-65535).
    #[arg(long)]
    ws_port: Option<u16>,
    #[command(flatten)]
    sim: SimArgs,
    /// `realtime`, `virtual` or `virtual:<speed factor>`.
    #[arg(long, default_value = "virtual")]
    clock: ClockMode,
    /// Initial scaling of an expressive target, e.g. `--scale bp=0.5`. Repeatable.
    #[arg(long, value_name = "TARGET=VALUE", value_parser = parse_scale)]
    scale: Vec<(Target, f64)>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Output MIDI file.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Also write the JSON report here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON file.
    #[arg(short, long)]
    output: PathBuf,
    /// Hidden units per direction of the onset-wise network.
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    /// First hidden layer of the note-wise network.
    #[arg(long, default_value_t = 16)]
    hidden1: usize,
    /// Second hidden layer of the note-wise network.
    #[arg(long, default_value_t = 16)]
    hidden2: usize,
}

fn parse_scale(s: &str) -> Result<(Target, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected TARGET=VALUE")?;
    let target: Target = name.parse().map_err(|e: accomp_core::engine::EngineError| e.to_string())?;
    let value: f64 = value.parse().map_err(|_| format!("invalid scaling value `{value}`"))?;
    Ok((target, value))
}

fn read_text(path: &Path) -> Result<String, SessionError> {
    std::fs::read_to_string(path).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    std::fs::write(path, bytes).map_err(|source| SessionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn file_config(args: &ScoreArgs) -> Result<FileConfig, SessionError> {
    match &args.config {
        Some(path) => FileConfig::from_json(&read_text(path)?)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display()))),
        None => Ok(FileConfig::default()),
    }
}

fn sim_config(args: &SimArgs) -> Result<SimConfig, SessionError> {
    let mut cfg = match &args.sim_config {
        Some(path) => serde_json::from_str(&read_text(path)?)
            .map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?,
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn play(args: PlayArgs) -> Result<(), SessionError> {
    let file = file_config(&args.score)?;
    let input = match args.input.as_str() {
        "sim" => InputSource::Simulation(sim_config(&args.sim)?),
        other => match other.strip_prefix("device:") {
            Some(name) => InputSource::Device(name.to_string()),
            None => return Err(SessionError::Config(format!("unknown input `{other}`"))),
        },
    };
    let output = match args.output.as_str() {
        "mem" => OutputSink::Memory,
        other => {
            if let Some(path) = other.strip_prefix("file:") {
                OutputSink::CaptureFile(PathBuf::from(path))
            } else if let Some(name) = other.strip_prefix("device:") {
                OutputSink::Device(name.to_string())
            } else {
                return Err(SessionError::Config(format!("unknown output `{other}`")));
            }
        }
    };
    let cfg = SessionConfig {
        score_path: args.score.score,
        weights_path: args.weights,
        tracks: file.tracks(),
        input,
        output,
        ws_port: args.ws_port,
        clock: args.clock,
        pipeline: file.pipeline(),
        scaling: args.scale,
    };

    let stop = Arc::new(AtomicBool::new(false));
    let handler_stop = Arc::clone(&stop);
    if let Err(e) = ctrlc::set_handler(move || handler_stop.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let report = run_session(&cfg, &stop)?;

    let mut handler_ms: Vec<f64> = report.stats.handler_seconds.iter().map(|s| s * 1e3).collect();
    handler_ms.sort_by(f64::total_cmp);
    let p95 = handler_ms
        .get((handler_ms.len() * 95).div_ceil(100).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);
    eprintln!(
        "solo notes {}  accompaniment notes {}  p95 handler {:.3} ms  wall {:.3} s{}",
        report.recorded.solo.len(),
        report.recorded.accompaniment.len(),
        p95,
        report.wall_seconds,
        if report.stats.interrupted { "  (interrupted)" } else { "" }
    );
    if report.ws_dropped > 0 {
        eprintln!("UI messages dropped: {}", report.ws_dropped);
    }
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<(), SessionError> {
    let file = file_config(&args.score)?;
    let piece = load_piece(&args.score.score, file.tracks())?;
    let sim = simulate(&piece.solo, &sim_config(&args.sim)?)?;
    let mut sink = MemorySink::default();
    for (note, truth) in sim.notes.iter().zip(&sim.truth) {
        let label = match truth.score_index {
            Some(i) if truth.wrong_pitch => AlignmentLabel::WrongNote(i),
            Some(i) => AlignmentLabel::Match(i),
            None => AlignmentLabel::Insertion,
        };
        sink.solo.push((*note, label));
    }
    write_file(&args.output, &sink.to_smf())?;
    eprintln!("wrote {} notes to {}", sim.notes.len(), args.output.display());
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), SessionError> {
    let file = file_config(&args.score)?;
    let piece = load_piece(&args.score.score, file.tracks())?;
    let sim = sim_config(&args.sim)?;
    let report = evaluate(&piece, &sim, &file.pipeline()).map_err(|e| match e {
        EvalError::Sim(e) => SessionError::Simulation(e),
        EvalError::Pipeline(e) => SessionError::Pipeline(e),
    })?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    print!("{json}");
    eprint!("{}", report.to_table());
    if let Some(path) = &args.output {
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn init_weights(args: InitWeightsArgs) -> Result<(), SessionError> {
    if args.hidden == 0 || args.hidden1 == 0 || args.hidden2 == 0 {
        return Err(SessionError::Config("hidden sizes must be at least 1".into()));
    }
    let w = ModelWeights::random_init(args.seed, args.hidden, args.hidden1, args.hidden2);
    write_file(&args.output, w.to_json().as_bytes())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ACCOMP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Play(a) => play(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::InitWeights(a) => init_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Follower and tempo-tracker accuracy against simulated ground truth.

use serde::{Deserialize, Serialize};

use crate::follower::AlignmentLabel;
use crate::pipeline::{Accompanist, PipelineConfig, PipelineError};
use crate::score::Piece;
use crate::sim::{simulate, SimConfig, SimError, SimulatedPerformance};

/// Performed notes excluded from the tempo error while the tracker settles.
pub const BURN_IN_NOTES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Score notes played at the written pitch that were labelled a match at
    /// their true index. Zero when every performed note had a wrong pitch.
    pub match_rate: f64,
    /// Performed score notes whose MAP position is their true index, whatever the pitch.
    pub position_rate: f64,
    /// Mean of |estimated - true| / true beat period after burn-in.
    pub mean_abs_tempo_error: f64,
    /// Largest delay (virtual seconds) of an accompaniment note that fired late.
    pub max_latency: f64,
    pub event_count: usize,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        format!(
            "events            {}\nmatch rate        {:.4}\nposition rate     {:.4}\ntempo error       {:.4}%\nmax latency       {:.4} s\n",
            self.event_count,
            self.match_rate,
            self.position_rate,
            100.0 * self.mean_abs_tempo_error,
            self.max_latency
        )
    }
}

/// Per-note trace of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTrace {
    pub performance: SimulatedPerformance,
    pub labels: Vec<AlignmentLabel>,
    pub map_indices: Vec<usize>,
    pub beat_periods: Vec<f64>,
}

/// Simulates the solo part and runs the full pipeline (with neutral
/// accompaniment) over it in virtual time.
pub fn evaluate(piece: &Piece, sim: &SimConfig, config: &PipelineConfig) -> Result<EvalReport, EvalError> {
    Ok(evaluate_with_trace(piece, sim, config)?.0)
}

pub fn evaluate_with_trace(piece: &Piece, sim: &SimConfig, config: &PipelineConfig) -> Result<(EvalReport, EvalTrace), EvalError> {
    let performance = simulate(&piece.solo, sim)?;
    let mut trace = EvalTrace {
        labels: Vec::with_capacity(performance.notes.len()),
        map_indices: Vec::with_capacity(performance.notes.len()),
        beat_periods: Vec::with_capacity(performance.notes.len()),
        performance,
    };
    if piece.solo.is_empty() || trace.performance.notes.is_empty() {
        let report = EvalReport {
            match_rate: 1.0,
            position_rate: 1.0,
            mean_abs_tempo_error: 0.0,
            max_latency: 0.0,
            event_count: trace.performance.notes.len(),
        };
        return Ok((report, trace));
    }

    let mut pipeline = Accompanist::with_weights(piece, None, config)?;
    let mut max_latency: f64 = 0.0;
    for note in &trace.performance.notes {
        pipeline.pop_due(note.onset_seconds);
        let outcome = pipeline.handle_solo(note)?;
        for fired in &outcome.fired {
            max_latency = max_latency.max(fired.lateness);
        }
        trace.labels.push(outcome.alignment.label);
        trace.map_indices.push(outcome.alignment.map_index);
        trace.beat_periods.push(outcome.tempo.beat_period());
    }
    pipeline.pop_due(f64::INFINITY);

    let mut performed = 0usize;
    let mut clean = 0usize;
    let mut matched = 0usize;
    let mut positioned = 0usize;
    let mut tempo_err = 0.0;
    let mut tempo_n = 0usize;
    for (k, truth) in trace.performance.truth.iter().enumerate() {
        let Some(index) = truth.score_index else {
            continue;
        };
        performed += 1;
        if !truth.wrong_pitch {
            clean += 1;
            if trace.labels[k] == AlignmentLabel::Match(index) {
                matched += 1;
            }
        }
        if trace.map_indices[k] == index {
            positioned += 1;
        }
        if k >= BURN_IN_NOTES {
            tempo_err += (trace.beat_periods[k] - truth.beat_period).abs() / truth.beat_period;
            tempo_n += 1;
        }
    }
    let rate = |x: usize, of: usize| match (of, performed) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => x as f64 / of as f64,
    };
    let report = EvalReport {
        match_rate: rate(matched, clean),
        position_rate: rate(positioned, performed),
        mean_abs_tempo_error: if tempo_n == 0 { 0.0 } else { tempo_err / tempo_n as f64 },
        max_latency,
        event_count: trace.performance.notes.len(),
    };
    Ok((report, trace))
}

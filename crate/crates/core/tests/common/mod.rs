//! Independent reference implementations used as test oracles. None of these
//! call into the code they check beyond reading plain data out of it.

#![allow(dead_code)]

use accomp_core::follower::FollowerParams;
use accomp_core::mixer::{Matrix, NotewiseWeights, OnsetwiseWeights};
use accomp_core::score::{group_onsets, NoteId, Part, Piece, ScoreNote, SoloScore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One observation as seen by the HMM: pitch and IOI in beats (none for the first note).
#[derive(Debug, Clone, Copy)]
pub struct Obs {
    pub pitch: u8,
    pub ioi_beats: Option<f64>,
}

fn transition(params: &FollowerParams, n: usize, from: usize, to: usize) -> f64 {
    if from == n - 1 {
        return if to == from { 1.0 } else { 0.0 };
    }
    if to == from {
        return params.self_loop_prob;
    }
    if to < from || to - from > params.max_skip {
        return 0.0;
    }
    let reachable = params.max_skip.min(n - 1 - from);
    let mut z = 0.0;
    for k in 1..=reachable {
        z += params.skip_decay.powi(k as i32 - 1);
    }
    (1.0 - params.self_loop_prob) * params.skip_decay.powi((to - from) as i32 - 1) / z
}

fn pitch_prob(params: &FollowerParams, played: u8, expected: u8) -> f64 {
    if played == expected {
        return params.p_correct_pitch;
    }
    let mut z = 0.0;
    for q in 0..=127u8 {
        if q != expected {
            z += params.pitch_mismatch_decay.powi((q as i32 - expected as i32).abs());
        }
    }
    (1.0 - params.p_correct_pitch) * params.pitch_mismatch_decay.powi((played as i32 - expected as i32).abs()) / z
}

/// Posterior over the final hidden position after `obs`, by summing the
/// probability of every hidden path. Paths are weighted in log space so
/// that tiny IOI densities do not flush the whole distribution to zero.
pub fn enumerate_posterior(score: &SoloScore, params: &FollowerParams, initial: &[f64], obs: &[Obs]) -> Vec<f64> {
    let n = score.len();
    let mut ends: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut path = Vec::with_capacity(obs.len());

    fn walk(
        score: &SoloScore,
        params: &FollowerParams,
        obs: &[Obs],
        path: &mut Vec<usize>,
        log_w: f64,
        ends: &mut Vec<Vec<f64>>,
    ) {
        let t = path.len();
        if t == obs.len() {
            ends[*path.last().unwrap()].push(log_w);
            return;
        }
        let n = score.len();
        let prev = *path.last().unwrap();
        for next in prev..n {
            let a = transition(params, n, prev, next);
            if a == 0.0 {
                continue;
            }
            let mut lw = log_w + a.ln() + pitch_prob(params, obs[t].pitch, score.notes()[next].pitch).ln();
            if let Some(x) = obs[t].ioi_beats {
                let mean = score.notes()[next].onset - score.notes()[prev].onset;
                let s = params.ioi_std_beats;
                let z = (x - mean) / s;
                lw += -0.5 * z * z - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
            }
            path.push(next);
            walk(score, params, obs, path, lw, ends);
            path.pop();
        }
    }

    for (s0, &p0) in initial.iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        // the first observation is scored by pitch alone, without a transition
        let lw = p0.ln() + pitch_prob(params, obs[0].pitch, score.notes()[s0].pitch).ln();
        path.push(s0);
        walk(score, params, obs, &mut path, lw, &mut ends);
        path.pop();
    }

    let max = ends.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = ends.iter().map(|ws| ws.iter().map(|w| (w - max).exp()).sum()).collect();
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

pub fn random_solo(rng: &mut ChaCha8Rng, n: usize) -> SoloScore {
    let mut onset = 0.0;
    let mut triples = Vec::with_capacity(n);
    for _ in 0..n {
        let pitch = rng.gen_range(55..=79u8);
        let dur = [0.25, 0.5, 1.0, 1.5, 2.0][rng.gen_range(0..5)];
        triples.push((pitch, onset, dur));
        onset += dur;
    }
    SoloScore::from_triples(&triples).unwrap()
}

pub fn accomp_note(pitch: u8, onset: f64, duration: f64) -> ScoreNote {
    ScoreNote {
        id: NoteId(0),
        pitch,
        onset,
        duration,
        part: Part::Accompaniment,
    }
}

/// Solo line of quarter notes and a chord on every beat.
pub fn metronomic_piece(beats: usize) -> Piece {
    let solo = SoloScore::from_triples(
        &(0..beats)
            .map(|b| (60 + (b % 12) as u8, b as f64, 1.0))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut notes = Vec::new();
    for b in 0..beats {
        for p in [36u8, 43, 48] {
            notes.push(accomp_note(p + (b % 3) as u8, b as f64, 1.0));
        }
    }
    Piece {
        solo,
        accomp: group_onsets(notes),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), x)).collect()
}

/// Step-by-step bidirectional recurrence with explicit loops.
pub fn reference_birnn(w: &OnsetwiseWeights, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<[f64; 2]>) {
    let h = w.fw_bias.len();
    let t_len = xs.len();
    let mut fw = Vec::with_capacity(t_len);
    let mut state = vec![0.0; h];
    for x in xs {
        let a = matvec(&w.fw_in, x);
        let b = matvec(&w.fw_rec, &state);
        let mut next = vec![0.0; h];
        for k in 0..h {
            next[k] = (a[k] + b[k] + w.fw_bias[k]).tanh();
        }
        fw.push(next.clone());
        state = next;
    }
    let mut bw = vec![Vec::new(); t_len];
    let mut state = vec![0.0; h];
    for t in (0..t_len).rev() {
        let a = matvec(&w.bw_in, &xs[t]);
        let b = matvec(&w.bw_rec, &state);
        let mut next = vec![0.0; h];
        for k in 0..h {
            next[k] = (a[k] + b[k] + w.bw_bias[k]).tanh();
        }
        bw[t] = next.clone();
        state = next;
    }
    let ys = (0..t_len)
        .map(|t| {
            let mut cat = fw[t].clone();
            cat.extend_from_slice(&bw[t]);
            let y = matvec(&w.out, &cat);
            [y[0] + w.out_bias[0], y[1] + w.out_bias[1]]
        })
        .collect();
    (fw, bw, ys)
}

/// Two tanh layers and a linear readout, written out longhand.
pub fn reference_ffnn(w: &NotewiseWeights, x: &[f64]) -> [f64; 3] {
    let mut h1 = Vec::new();
    for r in 0..w.w1.rows() {
        let mut s = w.b1[r];
        for c in 0..x.len() {
            s += w.w1.get(r, c) * x[c];
        }
        h1.push(s.tanh());
    }
    let mut h2 = Vec::new();
    for r in 0..w.w2.rows() {
        let mut s = w.b2[r];
        for c in 0..h1.len() {
            s += w.w2.get(r, c) * h1[c];
        }
        h2.push(s.tanh());
    }
    let mut y = [0.0; 3];
    for r in 0..3 {
        let mut s = w.out_bias[r];
        for c in 0..h2.len() {
            s += w.out.get(r, c) * h2[c];
        }
        y[r] = s;
    }
    y
}

/// Closed-form posterior of a scalar Gaussian random walk observed through
/// `z = h * x + noise`: returns (mean, variance) after one predict and update.
pub fn scalar_kalman(mean: f64, var: f64, q: f64, h: f64, r: f64, z: f64) -> (f64, f64) {
    let prior_var = var + q;
    // product of N(x; mean, prior_var) and N(z; h x, r), in information form
    let post_var = 1.0 / (1.0 / prior_var + h * h / r);
    let post_mean = post_var * (mean / prior_var + h * z / r);
    (post_mean, post_var)
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

//! Forward passes of the onsetwise (bidirectional recurrent) and notewise
//! (two-layer feed-forward) networks.

use super::basis::{NoteBasis, OnsetBasis};
use super::weights::{Matrix, NotewiseWeights, OnsetwiseWeights};

/// Hidden states and raw outputs of one onsetwise pass.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetwiseTrace {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
    /// Pre-link outputs, `[loudness_trend, bp_ratio]` in log space.
    pub outputs: Vec<[f64; 2]>,
}

fn recur(input: &Matrix, rec: &Matrix, bias: &[f64], x: &[f64], prev: &[f64], out: &mut [f64]) {
    let h = out.len();
    for r in 0..h {
        let a: f64 = input.row(r).iter().zip(x).map(|(w, v)| w * v).sum();
        let b: f64 = rec.row(r).iter().zip(prev).map(|(w, v)| w * v).sum();
        out[r] = (a + b + bias[r]).tanh();
    }
}

/// Runs both recurrences over the full sequence and the readout at every step.
pub fn onsetwise_forward(w: &OnsetwiseWeights, basis: &[OnsetBasis]) -> OnsetwiseTrace {
    let h = w.hidden();
    let len = basis.len();
    let zero = vec![0.0; h];
    let mut forward = vec![vec![0.0; h]; len];
    for t in 0..len {
        let (done, rest) = forward.split_at_mut(t);
        let prev = done.last().map_or(zero.as_slice(), Vec::as_slice);
        recur(&w.fw_in, &w.fw_rec, &w.fw_bias, &basis[t], prev, &mut rest[0]);
    }
    let mut backward = vec![vec![0.0; h]; len];
    for t in (0..len).rev() {
        let (head, tail) = backward.split_at_mut(t + 1);
        let next = tail.first().map_or(zero.as_slice(), Vec::as_slice);
        recur(&w.bw_in, &w.bw_rec, &w.bw_bias, &basis[t], next, &mut head[t]);
    }
    let outputs = (0..len)
        .map(|t| {
            let mut y = [0.0; 2];
            for (r, slot) in y.iter_mut().enumerate() {
                let row = w.out.row(r);
                let fw: f64 = row[..h].iter().zip(&forward[t]).map(|(a, b)| a * b).sum();
                let bw: f64 = row[h..].iter().zip(&backward[t]).map(|(a, b)| a * b).sum();
                *slot = fw + bw + w.out_bias[r];
            }
            y
        })
        .collect();
    OnsetwiseTrace {
        forward,
        backward,
        outputs,
    }
}

fn dense_tanh(m: &Matrix, bias: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = m.mul_vec(x);
    for (o, b) in out.iter_mut().zip(bias) {
        *o = (*o + b).tanh();
    }
    out
}

/// Raw notewise outputs `[loudness_dev, timing, articulation]` before the link functions.
pub fn notewise_forward(w: &NotewiseWeights, basis: &NoteBasis) -> [f64; 3] {
    let h1 = dense_tanh(&w.w1, &w.b1, basis);
    let h2 = dense_tanh(&w.w2, &w.b2, &h1);
    let y = w.out.mul_vec(&h2);
    [y[0] + w.out_bias[0], y[1] + w.out_bias[1], y[2] + w.out_bias[2]]
}

/// Jacobian of [`notewise_forward`] with respect to its input, shape `3 x D`.
pub fn notewise_jacobian(w: &NotewiseWeights, basis: &NoteBasis) -> Matrix {
    let h1 = dense_tanh(&w.w1, &w.b1, basis);
    let h2 = dense_tanh(&w.w2, &w.b2, &h1);
    let d = basis.len();
    // dh1/dx = diag(1 - h1^2) W1
    let j1 = Matrix::from_fn(h1.len(), d, |r, c| (1.0 - h1[r] * h1[r]) * w.w1.get(r, c));
    // dh2/dx = diag(1 - h2^2) W2 j1
    let j2 = Matrix::from_fn(h2.len(), d, |r, c| {
        let s: f64 = (0..h1.len()).map(|k| w.w2.get(r, k) * j1.get(k, c)).sum();
        (1.0 - h2[r] * h2[r]) * s
    });
    Matrix::from_fn(3, d, |r, c| (0..h2.len()).map(|k| w.out.get(r, k) * j2.get(k, c)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixer::weights::ModelWeights;

    #[test]
    fn zero_network_outputs_zero() {
        let w = ModelWeights::zeros(4, 3, 3);
        let trace = onsetwise_forward(&w.onsetwise, &[[0.3; 10]; 5]);
        assert!(trace.outputs.iter().all(|y| *y == [0.0, 0.0]));
        assert_eq!(notewise_forward(&w.notewise, &[0.5; 5]), [0.0; 3]);
    }

    #[test]
    fn single_step_has_no_recurrence() {
        let w = ModelWeights::random_init(11, 5, 4, 4).onsetwise;
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.0, 1.0];
        let trace = onsetwise_forward(&w, &[x]);
        let hf: Vec<f64> = (0..5)
            .map(|r| (w.fw_in.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + w.fw_bias[r]).tanh())
            .collect();
        let hb: Vec<f64> = (0..5)
            .map(|r| (w.bw_in.row(r).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + w.bw_bias[r]).tanh())
            .collect();
        let cat: Vec<f64> = hf.iter().chain(&hb).copied().collect();
        for r in 0..2 {
            let y: f64 = w.out.row(r).iter().zip(&cat).map(|(a, b)| a * b).sum::<f64>() + w.out_bias[r];
            assert!((trace.outputs[0][r] - y).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_sequence() {
        let w = ModelWeights::random_init(1, 3, 3, 3);
        let t = onsetwise_forward(&w.onsetwise, &[]);
        assert!(t.outputs.is_empty());
    }
}

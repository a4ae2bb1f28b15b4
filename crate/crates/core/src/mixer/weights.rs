//! Network parameters and their JSON file format.
//!
//! Each array is stored as `{"shape": [rows, cols], "data": [...]}` in
//! row-major order; bias vectors use a one-element shape.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::basis::{NOTE_BASIS_DIM, ONSET_BASIS_DIM};

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("array `{array}` has shape {found:?}, expected {expected:?}")]
    Shape {
        array: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("array `{array}` declares shape {shape:?} but holds {len} values")]
    DataLength { array: String, shape: Vec<usize>, len: usize },
    #[error("array `{0}` is missing")]
    Missing(String),
    #[error("array `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("malformed weights file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x`, accumulated into `out` (which is overwritten).
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetwiseWeights {
    pub fw_in: Matrix,
    pub fw_rec: Matrix,
    pub fw_bias: Vec<f64>,
    pub bw_in: Matrix,
    pub bw_rec: Matrix,
    pub bw_bias: Vec<f64>,
    /// Readout over `[h_fw; h_bw]`, shape `2 x 2H`.
    pub out: Matrix,
    pub out_bias: Vec<f64>,
}

impl OnsetwiseWeights {
    pub fn hidden(&self) -> usize {
        self.fw_rec.rows()
    }

    /// Swaps the forward and backward directions, including the readout halves.
    pub fn mirrored(&self) -> Self {
        let h = self.hidden();
        let out = Matrix::from_fn(self.out.rows(), 2 * h, |r, c| {
            if c < h {
                self.out.get(r, c + h)
            } else {
                self.out.get(r, c - h)
            }
        });
        Self {
            fw_in: self.bw_in.clone(),
            fw_rec: self.bw_rec.clone(),
            fw_bias: self.bw_bias.clone(),
            bw_in: self.fw_in.clone(),
            bw_rec: self.fw_rec.clone(),
            bw_bias: self.fw_bias.clone(),
            out,
            out_bias: self.out_bias.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotewiseWeights {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub out: Matrix,
    pub out_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub onsetwise: OnsetwiseWeights,
    pub notewise: NotewiseWeights,
}

impl ModelWeights {
    /// All-zero weights; every prediction is neutral.
    pub fn zeros(hidden: usize, hidden1: usize, hidden2: usize) -> Self {
        Self::from_fn(hidden, hidden1, hidden2, || 0.0)
    }

    /// Deterministic uniform initialization scaled by `1 / sqrt(fan_in)`.
    pub fn random_init(seed: u64, hidden: usize, hidden1: usize, hidden2: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize| -> f64 {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            rng.gen_range(-a..=a)
        };
        let mut mat = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| draw(cols));
        let fw_in = mat(hidden, ONSET_BASIS_DIM);
        let fw_rec = mat(hidden, hidden);
        let fw_bias = mat(hidden, 1).data;
        let bw_in = mat(hidden, ONSET_BASIS_DIM);
        let bw_rec = mat(hidden, hidden);
        let bw_bias = mat(hidden, 1).data;
        let out = mat(2, 2 * hidden);
        let out_bias = mat(2, 1).data;
        let w1 = mat(hidden1, NOTE_BASIS_DIM);
        let b1 = mat(hidden1, 1).data;
        let w2 = mat(hidden2, hidden1);
        let b2 = mat(hidden2, 1).data;
        let nout = mat(3, hidden2);
        let nout_bias = mat(3, 1).data;
        Self {
            onsetwise: OnsetwiseWeights {
                fw_in,
                fw_rec,
                fw_bias,
                bw_in,
                bw_rec,
                bw_bias,
                out,
                out_bias,
            },
            notewise: NotewiseWeights {
                w1,
                b1,
                w2,
                b2,
                out: nout,
                out_bias: nout_bias,
            },
        }
    }

    fn from_fn(hidden: usize, hidden1: usize, hidden2: usize, mut f: impl FnMut() -> f64) -> Self {
        let mut mat = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| f());
        Self {
            onsetwise: OnsetwiseWeights {
                fw_in: mat(hidden, ONSET_BASIS_DIM),
                fw_rec: mat(hidden, hidden),
                fw_bias: mat(hidden, 1).data,
                bw_in: mat(hidden, ONSET_BASIS_DIM),
                bw_rec: mat(hidden, hidden),
                bw_bias: mat(hidden, 1).data,
                out: mat(2, 2 * hidden),
                out_bias: mat(2, 1).data,
            },
            notewise: NotewiseWeights {
                w1: mat(hidden1, NOTE_BASIS_DIM),
                b1: mat(hidden1, 1).data,
                w2: mat(hidden2, hidden1),
                b2: mat(hidden2, 1).data,
                out: mat(3, hidden2),
                out_bias: mat(3, 1).data,
            },
        }
    }

    pub fn validate(&self) -> Result<(), WeightsError> {
        let o = &self.onsetwise;
        let h = o.fw_rec.rows();
        let n = &self.notewise;
        let h1 = n.w1.rows();
        let h2 = n.w2.rows();
        let checks: [(&str, Vec<usize>, Vec<usize>); 14] = [
            ("onsetwise.Wfw_in", vec![h, ONSET_BASIS_DIM], dims(&o.fw_in)),
            ("onsetwise.Wfw_rec", vec![h, h], dims(&o.fw_rec)),
            ("onsetwise.bfw", vec![h], vec![o.fw_bias.len()]),
            ("onsetwise.Wbw_in", vec![h, ONSET_BASIS_DIM], dims(&o.bw_in)),
            ("onsetwise.Wbw_rec", vec![h, h], dims(&o.bw_rec)),
            ("onsetwise.bbw", vec![h], vec![o.bw_bias.len()]),
            ("onsetwise.Wout", vec![2, 2 * h], dims(&o.out)),
            ("onsetwise.bout", vec![2], vec![o.out_bias.len()]),
            ("notewise.W1", vec![h1, NOTE_BASIS_DIM], dims(&n.w1)),
            ("notewise.b1", vec![h1], vec![n.b1.len()]),
            ("notewise.W2", vec![h2, h1], dims(&n.w2)),
            ("notewise.b2", vec![h2], vec![n.b2.len()]),
            ("notewise.Wout", vec![3, h2], dims(&n.out)),
            ("notewise.bout", vec![3], vec![n.out_bias.len()]),
        ];
        for (array, expected, found) in checks {
            if expected != found {
                return Err(WeightsError::Shape {
                    array: array.to_string(),
                    expected,
                    found,
                });
            }
        }
        let arrays: [(&str, &[f64]); 14] = [
            ("onsetwise.Wfw_in", o.fw_in.data()),
            ("onsetwise.Wfw_rec", o.fw_rec.data()),
            ("onsetwise.bfw", &o.fw_bias),
            ("onsetwise.Wbw_in", o.bw_in.data()),
            ("onsetwise.Wbw_rec", o.bw_rec.data()),
            ("onsetwise.bbw", &o.bw_bias),
            ("onsetwise.Wout", o.out.data()),
            ("onsetwise.bout", &o.out_bias),
            ("notewise.W1", n.w1.data()),
            ("notewise.b1", &n.b1),
            ("notewise.W2", n.w2.data()),
            ("notewise.b2", &n.b2),
            ("notewise.Wout", n.out.data()),
            ("notewise.bout", &n.out_bias),
        ];
        for (array, data) in arrays {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(WeightsError::NonFinite(array.to_string()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let o = &self.onsetwise;
        let n = &self.notewise;
        let mut onset = BTreeMap::new();
        onset.insert("Wfw_in", ArrayJson::matrix(&o.fw_in));
        onset.insert("Wfw_rec", ArrayJson::matrix(&o.fw_rec));
        onset.insert("bfw", ArrayJson::vector(&o.fw_bias));
        onset.insert("Wbw_in", ArrayJson::matrix(&o.bw_in));
        onset.insert("Wbw_rec", ArrayJson::matrix(&o.bw_rec));
        onset.insert("bbw", ArrayJson::vector(&o.bw_bias));
        onset.insert("Wout", ArrayJson::matrix(&o.out));
        onset.insert("bout", ArrayJson::vector(&o.out_bias));
        let mut note = BTreeMap::new();
        note.insert("W1", ArrayJson::matrix(&n.w1));
        note.insert("b1", ArrayJson::vector(&n.b1));
        note.insert("W2", ArrayJson::matrix(&n.w2));
        note.insert("b2", ArrayJson::vector(&n.b2));
        note.insert("Wout", ArrayJson::matrix(&n.out));
        note.insert("bout", ArrayJson::vector(&n.out_bias));
        let file = FileJson {
            onsetwise: onset.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            notewise: note.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        };
        serde_json::to_string_pretty(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, WeightsError> {
        let mut file: FileJson = serde_json::from_str(text)?;
        let mut take = |section: &str, name: &str| -> Result<ArrayJson, WeightsError> {
            let map = if section == "onsetwise" {
                &mut file.onsetwise
            } else {
                &mut file.notewise
            };
            let a = map.remove(name).ok_or_else(|| WeightsError::Missing(format!("{section}.{name}")))?;
            let expected: usize = a.shape.iter().product();
            if a.shape.is_empty() || a.shape.len() > 2 || expected != a.data.len() {
                return Err(WeightsError::DataLength {
                    array: format!("{section}.{name}"),
                    shape: a.shape,
                    len: a.data.len(),
                });
            }
            Ok(a)
        };
        let weights = Self {
            onsetwise: OnsetwiseWeights {
                fw_in: take("onsetwise", "Wfw_in")?.into_matrix(),
                fw_rec: take("onsetwise", "Wfw_rec")?.into_matrix(),
                fw_bias: take("onsetwise", "bfw")?.data,
                bw_in: take("onsetwise", "Wbw_in")?.into_matrix(),
                bw_rec: take("onsetwise", "Wbw_rec")?.into_matrix(),
                bw_bias: take("onsetwise", "bbw")?.data,
                out: take("onsetwise", "Wout")?.into_matrix(),
                out_bias: take("onsetwise", "bout")?.data,
            },
            notewise: NotewiseWeights {
                w1: take("notewise", "W1")?.into_matrix(),
                b1: take("notewise", "b1")?.data,
                w2: take("notewise", "W2")?.into_matrix(),
                b2: take("notewise", "b2")?.data,
                out: take("notewise", "Wout")?.into_matrix(),
                out_bias: take("notewise", "bout")?.data,
            },
        };
        weights.validate()?;
        Ok(weights)
    }
}

fn dims(m: &Matrix) -> Vec<usize> {
    vec![m.rows(), m.cols()]
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ArrayJson {
    fn matrix(m: &Matrix) -> Self {
        Self {
            shape: dims(m),
            data: m.data().to_vec(),
        }
    }

    fn vector(v: &[f64]) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.to_vec(),
        }
    }

    fn into_matrix(self) -> Matrix {
        let (rows, cols) = match self.shape[..] {
            [r, c] => (r, c),
            [r] => (r, 1),
            _ => unreachable!("shape rank checked on load"),
        };
        Matrix::from_vec(rows, cols, self.data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FileJson {
    onsetwise: BTreeMap<String, ArrayJson>,
    notewise: BTreeMap<String, ArrayJson>,
}

//! Fully-connected network with tanh hidden layers and a configurable
//! output head. Gradients are hand-derived; `Forward` carries everything
//! `backward` needs.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Output head applied to the last linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Row-wise softmax; outputs are class probabilities.
    Softmax,
    /// Identity; outputs are the raw linear values.
    Linear,
    /// Element-wise logistic; outputs in (0, 1).
    Sigmoid,
}

/// One dense layer, `w` is (fan_in × fan_out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: Matrix::zeros(fan_in, fan_out),
            b: vec![0.0; fan_out],
        }
    }
}

/// Parameter-shaped accumulator, also used for optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<Dense>,
}

impl Grads {
    pub fn zeros_like(model: &Mlp) -> Self {
        Grads {
            layers: model
                .layers
                .iter()
                .map(|l| Dense::zeros(l.w.rows(), l.w.cols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(CoreError::shape(
                "Grads::add_assign",
                format!("{} layers", self.layers.len()),
                format!("{}", other.layers.len()),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.w.add_assign(&b.w)?;
            for (x, y) in a.b.iter_mut().zip(b.b.iter()) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.scale(s);
            for v in &mut l.b {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.is_finite() && l.b.iter().all(|v| v.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for l in &self.layers {
            acc += l.w.data().iter().map(|v| v * v).sum::<f64>();
            acc += l.b.iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data().len() + l.b.len())
            .sum()
    }

    /// Flat parameter indexing: per layer, weights row-major then bias.
    pub fn get_flat(&self, idx: usize) -> f64 {
        let mut i = idx;
        for l in &self.layers {
            let nw = l.w.data().len();
            if i < nw {
                return l.w.data()[i];
            }
            i -= nw;
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("flat index {idx} out of range");
    }
}

/// Cache produced by `Mlp::forward`; consumed by `Mlp::backward`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub input: Matrix,
    /// Post-tanh activations per hidden layer.
    pub hidden: Vec<Matrix>,
    /// Pre-head linear outputs.
    pub logits: Matrix,
    /// Head outputs (probabilities for Softmax/Sigmoid, raw for Linear).
    pub output: Matrix,
}

impl Forward {
    /// The representation fed into distance terms: the last hidden layer.
    pub fn features(&self) -> &Matrix {
        self.hidden.last().unwrap_or(&self.input)
    }
}

/// Sidecar metadata stored next to checkpoint parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub arch: Vec<usize>,
    pub head: Head,
    pub seed: u64,
    pub iteration: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub role: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pair: Option<usize>,
}

/// Multi-layer perceptron; all hidden layers use tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub head: Head,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Xavier-initialized network. `dims` lists layer widths input-first.
    pub fn new(dims: &[usize], head: Head, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = rng::stream(seed, 0x4d4c50);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let m = Matrix::from_fn(fan_in, fan_out, |_, _| rng::normal(&mut rng) * std);
            layers.push(Dense {
                w: m,
                b: vec![0.0; fan_out],
            });
        }
        Mlp {
            dims: dims.to_vec(),
            head,
            layers,
        }
    }

    /// All-zero parameters; softmax output is exactly uniform.
    pub fn zeroed(dims: &[usize], head: Head) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Mlp {
            dims: dims.to_vec(),
            head,
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data().len() + l.b.len())
            .sum()
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for l in &self.layers {
            let nw = l.w.data().len();
            if i < nw {
                return l.w.data()[i];
            }
            i -= nw;
            if i < l.b.len() {
                return l.b[i];
            }
            i -= l.b.len();
        }
        panic!("flat index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let mut i = idx;
        for l in &mut self.layers {
            let nw = l.w.data().len();
            if i < nw {
                l.w.data_mut()[i] = v;
                return;
            }
            i -= nw;
            if i < l.b.len() {
                l.b[i] = v;
                return;
            }
            i -= l.b.len();
        }
        panic!("flat index {idx} out of range");
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, batch: &Matrix) -> Result<Forward> {
        if batch.cols() != self.input_dim() {
            return Err(CoreError::shape(
                "forward",
                format!("{} input cols", self.input_dim()),
                format!("{}", batch.cols()),
            ));
        }
        let mut hidden = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = batch.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = cur.matmul(&layer.w)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(layer.b.iter()) {
                    *v += b;
                }
            }
            if li + 1 < self.layers.len() {
                let a = z.map(f64::tanh);
                hidden.push(a.clone());
                cur = a;
            } else {
                cur = z;
            }
        }
        let logits = cur;
        let output = match self.head {
            Head::Softmax => softmax_rows(&logits),
            Head::Linear => logits.clone(),
            Head::Sigmoid => logits.map(|z| 1.0 / (1.0 + (-z).exp())),
        };
        if !output.is_finite() {
            return Err(CoreError::non_finite("forward"));
        }
        Ok(Forward {
            input: batch.clone(),
            hidden,
            logits,
            output,
        })
    }

    /// Backpropagates `d_logits` (gradient w.r.t. the pre-head linear
    /// outputs) plus an optional gradient injected at the last hidden
    /// activation (`d_features`). Returns parameter gradients and the
    /// gradient w.r.t. the input batch.
    pub fn backward(
        &self,
        fwd: &Forward,
        d_logits: &Matrix,
        d_features: Option<&Matrix>,
    ) -> Result<(Grads, Matrix)> {
        let batch_rows = fwd.input.rows();
        if d_logits.rows() != batch_rows || d_logits.cols() != self.output_dim() {
            return Err(CoreError::shape(
                "backward",
                format!("{}x{} d_logits", batch_rows, self.output_dim()),
                format!("{}x{}", d_logits.rows(), d_logits.cols()),
            ));
        }
        if fwd.hidden.len() + 1 != self.layers.len() {
            return Err(CoreError::StaleCache(format!(
                "cache has {} hidden activations, model has {} layers",
                fwd.hidden.len(),
                self.layers.len()
            )));
        }
        let mut grads = Grads::zeros_like(self);
        let mut delta = d_logits.clone();
        for li in (0..self.layers.len()).rev() {
            let upstream: &Matrix = if li == 0 {
                &fwd.input
            } else {
                &fwd.hidden[li - 1]
            };
            grads.layers[li].w = upstream.transpose_matmul(&delta)?;
            for r in 0..delta.rows() {
                for (bg, &d) in grads.layers[li].b.iter_mut().zip(delta.row(r).iter()) {
                    *bg += d;
                }
            }
            // Gradient w.r.t. the activation feeding this layer.
            let mut d_act = delta.matmul_transpose(&self.layers[li].w)?;
            if li > 0 {
                if li == self.layers.len() - 1 {
                    if let Some(df) = d_features {
                        d_act.add_assign(df)?;
                    }
                }
                // tanh' = 1 - a^2, from the stored activation.
                let a = &fwd.hidden[li - 1];
                for r in 0..d_act.rows() {
                    let arow = a.row(r);
                    for (d, &av) in d_act.row_mut(r).iter_mut().zip(arow.iter()) {
                        *d *= 1.0 - av * av;
                    }
                }
            }
            delta = d_act;
        }
        if !grads.is_finite() {
            return Err(CoreError::non_finite("backward"));
        }
        Ok((grads, delta))
    }

    /// Writes parameters one-per-line (17 significant digits) plus a JSON
    /// sidecar; `path` is the parameter file, sidecar gets `.json` added.
    pub fn save_checkpoint(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for li in 0..self.layers.len() {
            for v in self.layers[li].w.data() {
                writeln!(f, "{v:.16e}")?;
            }
            for v in &self.layers[li].b {
                writeln!(f, "{v:.16e}")?;
            }
        }
        f.flush()?;
        let sidecar = path.with_extension(format!(
            "{}json",
            path.extension()
                .map(|e| format!("{}.", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        let mut meta = meta.clone();
        meta.arch = self.dims.clone();
        meta.head = self.head;
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Mlp, CheckpointMeta)> {
        let sidecar = path.with_extension(format!(
            "{}json",
            path.extension()
                .map(|e| format!("{}.", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        let meta: CheckpointMeta = serde_json::from_str(&std::fs::read_to_string(&sidecar)?)?;
        let mut model = Mlp::zeroed(&meta.arch, meta.head);
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut values = Vec::with_capacity(model.param_count());
        for line in f.lines() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            values.push(t.parse::<f64>().map_err(|e| {
                CoreError::Config(format!("bad checkpoint value {t:?}: {e}"))
            })?);
        }
        if values.len() != model.param_count() {
            return Err(CoreError::shape(
                "load_checkpoint",
                format!("{} params", model.param_count()),
                format!("{}", values.len()),
            ));
        }
        for (i, v) in values.into_iter().enumerate() {
            model.set_param(i, v);
        }
        Ok((model, meta))
    }
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

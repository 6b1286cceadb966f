//! Small fully-connected rectifier classifier with a single sigmoid output.
//!
//! Besides the forward pass this module provides the exact derivatives the
//! influence engine needs: parameter and input gradients of the log-loss,
//! matrix-free Hessian-vector products and the mixed input/parameter
//! contraction `∇ₓ(vᵀ∇_θ l)`. The rectifier's second derivative is taken as 0
//! everywhere, including at the kink.

mod derivatives;
mod train;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use derivatives::{
    grad_theta, grad_x, hvp, loss, loss_grad, mixed_vjp, second_order, Instance, LOSS_EPS,
};
pub(crate) use derivatives::accumulate_grad;
pub use train::{train, train_from, EpochRecord, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::linalg::sigmoid;
use crate::rng::rng_from_seed;

/// Affine layer `out = W·in + b` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn affine(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs.max(1))
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

/// Parameters of the base classifier. The flat view concatenates, layer by
/// layer, the row-major weights followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub layers: Vec<Dense>,
}

impl BaseParams {
    /// Layers `d → hidden[0] → … → 1`, weights uniform in `±√(3/fan_in)`,
    /// biases zero.
    pub fn init(d: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d == 0 || hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be >= 1".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut widths = vec![d];
        widths.extend_from_slice(hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let mut layer = Dense::zeros(w[0], w[1]);
                let bound = (3.0 / w[0] as f64).sqrt();
                for v in layer.weights.iter_mut() {
                    *v = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn flat_dim(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    /// Start offset of each layer in the flat view.
    pub(crate) fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.len();
                o
            })
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.flat_dim());
        for l in &self.layers {
            flat.extend_from_slice(&l.weights);
            flat.extend_from_slice(&l.bias);
        }
        flat
    }

    /// Same architecture with coefficients taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.flat_dim() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.flat_dim()
            )));
        }
        let mut out = self.clone();
        out.set_flat(flat);
        Ok(out)
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
    }

    /// `θ += alpha · v` on the flat view.
    pub fn axpy_flat(&mut self, alpha: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.flat_dim());
        let mut at = 0;
        for l in self.layers.iter_mut() {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w += alpha * v[at];
                at += 1;
            }
        }
    }

    /// Final pre-activation.
    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.affine(&h);
            if l < last {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        h[0]
    }

    /// Probability of the positive class.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Checked forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !crate::linalg::all_finite(x) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(self.predict(x))
    }
}

/// On-disk model document: shapes, row-major coefficients, seed and a config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile<P> {
    pub format: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: P,
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl BaseParams {
    pub fn save(&self, path: &Path, seed: u64, config: serde_json::Value) -> Result<()> {
        save_json(
            &ModelFile {
                format: "diwift-basenet/1".into(),
                seed,
                config,
                params: self.clone(),
            },
            path,
        )
    }

    pub fn load(path: &Path) -> Result<ModelFile<BaseParams>> {
        let file: ModelFile<BaseParams> = load_json(path)?;
        for (l, layer) in file.params.layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs
                || layer.bias.len() != layer.outputs
            {
                return Err(Error::Shape(format!("layer {l} has inconsistent coefficients")));
            }
        }
        Ok(file)
    }
}

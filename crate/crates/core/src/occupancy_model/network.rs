//! Fully connected network with ReLU hidden layers and a two-way softmax
//! output, trained with cross-entropy. Output index 0 is "a spot is
//! available", index 1 is "block full".

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::error::{Error, Result};
use crate::pipeline::io::write_atomic;

/// Layer widths of the occupancy network: 4 → 30 → 30 → 2.
pub const MLP_SHAPE: [usize; 4] = [4, 30, 30, 2];
/// Single affine layer + softmax, i.e. multinomial logistic regression.
pub const LOGISTIC_SHAPE: [usize; 2] = [4, 2];

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Affine map `y = x · W + b` with `W` stored row-major as `inputs × outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, o: usize) -> f64 {
        self.weights[i * self.outputs + o]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStat {
    pub mean: f64,
    pub std: f64,
}

/// Per-feature standardization applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureNorm(pub [NormStat; 4]);

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm(
            [NormStat {
                mean: 0.0,
                std: 1.0,
            }; 4],
        )
    }
}

impl FeatureNorm {
    /// Mean and population standard deviation of each feature; a constant
    /// feature gets std 1.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; 4];
        let rows: Vec<[f64; 4]> = features.into_iter().map(|f| f.to_array()).collect();
        for r in &rows {
            n += 1;
            for k in 0..4 {
                sum[k] += r[k];
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum.map(|s| s / n as f64);
        let mut ss = [0.0; 4];
        for r in &rows {
            for k in 0..4 {
                ss[k] += (r[k] - mean[k]).powi(2);
            }
        }
        let mut stats = [NormStat {
            mean: 0.0,
            std: 1.0,
        }; 4];
        for k in 0..4 {
            let std = (ss[k] / n as f64).sqrt();
            stats[k] = NormStat {
                mean: mean[k],
                std: if std > 1e-12 { std } else { 1.0 },
            };
        }
        FeatureNorm(stats)
    }

    pub fn apply(&self, x: &FeatureVector) -> [f64; 4] {
        let raw = x.to_array();
        std::array::from_fn(|k| (raw[k] - self.0[k].mean) / self.0[k].std)
    }
}

/// A labelled network input; `available` is the observed ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub available: bool,
}

impl Example {
    fn class(&self) -> usize {
        if self.available {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Dense>,
    pub feature_norm: FeatureNorm,
}

/// Same shape as a [`Network`]'s layers; holds d(loss)/d(parameter).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_shapes: Vec<[usize; 2]>,
    #[serde(flatten)]
    network: Network,
}

fn log_sum_exp2(z: [f64; 2]) -> f64 {
    let m = z[0].max(z[1]);
    m + ((z[0] - m).exp() + (z[1] - m).exp()).ln()
}

impl Network {
    /// All weights and biases zero, identity normalization.
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(shape.len() >= 2, "network needs at least one layer");
        Network {
            layers: shape.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            feature_norm: FeatureNorm::default(),
        }
    }

    /// Weights uniform in ±scale·sqrt(6 / (fan_in + fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        for layer in &mut net.layers {
            let bound = scale * (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-1.0..=1.0) * bound;
            }
        }
        net
    }

    pub fn shape(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count());
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }

    fn check(&self) -> Result<()> {
        let shape_ok = self.layers.first().map(|l| l.inputs) == Some(FeatureVector::LEN)
            && self.layers.last().map(|l| l.outputs) == Some(2)
            && self.layers.windows(2).all(|w| w[0].outputs == w[1].inputs)
            && self
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs);
        if !shape_ok {
            return Err(Error::InvalidInput(format!(
                "inconsistent network shape {:?}",
                self.shape()
            )));
        }
        if !self.parameters().iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        if !self
            .feature_norm
            .0
            .iter()
            .all(|s| s.mean.is_finite() && s.std.is_finite() && s.std > 0.0)
        {
            return Err(Error::Numeric("invalid feature normalization".into()));
        }
        Ok(())
    }

    fn logits(&self, x: &FeatureVector) -> [f64; 2] {
        let mut cur = self.feature_norm.apply(x).to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.apply(&cur, &mut out);
            if k != last {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            cur = out;
        }
        [cur[0], cur[1]]
    }

    /// `(p_available, p_full)`.
    pub fn forward(&self, x: &FeatureVector) -> Result<(f64, f64)> {
        if !x.is_finite() {
            return Err(Error::Numeric("non-finite network input".into()));
        }
        let z = self.logits(x);
        let m = z[0].max(z[1]);
        let e0 = (z[0] - m).exp();
        let e1 = (z[1] - m).exp();
        let s = e0 + e1;
        Ok((e0 / s, e1 / s))
    }

    /// Mean cross-entropy (nats) of the true labels.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut total = 0.0;
        for ex in batch {
            if !ex.features.is_finite() {
                return Err(Error::Numeric("non-finite network input".into()));
            }
            let z = self.logits(&ex.features);
            total += log_sum_exp2(z) - z[ex.class()];
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact gradient of [`Network::loss`] by backpropagation. The ReLU
    /// derivative at 0 is taken as 0.
    pub fn gradient(&self, batch: &[Example]) -> Result<Gradient> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let mut grad = Gradient {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        };
        let mut ws = Workspace::new(self);
        let scale = 1.0 / batch.len() as f64;
        for ex in batch {
            if !ex.features.is_finite() {
                return Err(Error::Numeric("non-finite network input".into()));
            }
            self.accumulate(ex, scale, &mut ws, &mut grad);
        }
        Ok(grad)
    }

    /// Adds `scale · d(loss_ex)/dθ` into `grad`.
    fn accumulate(&self, ex: &Example, scale: f64, ws: &mut Workspace, grad: &mut Gradient) {
        let last = self.layers.len() - 1;
        ws.acts[0].copy_from_slice(&self.feature_norm.apply(&ex.features));
        for (k, layer) in self.layers.iter().enumerate() {
            let (prev, next) = ws.acts.split_at_mut(k + 1);
            layer.apply(&prev[k], &mut next[0]);
            if k != last {
                for v in next[0].iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
        let z = &ws.acts[last + 1];
        let m = z[0].max(z[1]);
        let e0 = (z[0] - m).exp();
        let e1 = (z[1] - m).exp();
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let class = ex.class();
        ws.deltas[last + 1][0] = scale * (p[0] - if class == 0 { 1.0 } else { 0.0 });
        ws.deltas[last + 1][1] = scale * (p[1] - if class == 1 { 1.0 } else { 0.0 });

        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let (lower, upper) = ws.deltas.split_at_mut(k + 1);
            let delta = &upper[0];
            let input = &ws.acts[k];
            for (b, d) in g.bias.iter_mut().zip(delta.iter()) {
                *b += d;
            }
            for (i, &a) in input.iter().enumerate() {
                if a != 0.0 {
                    let row = &mut g.weights[i * layer.outputs..(i + 1) * layer.outputs];
                    for (w, d) in row.iter_mut().zip(delta.iter()) {
                        *w += a * d;
                    }
                }
            }
            if k > 0 {
                // Hidden activations are post-ReLU, so a > 0 exactly where the
                // pre-activation was positive.
                let back = &mut lower[k];
                for (i, b) in back.iter_mut().enumerate() {
                    *b = if input[i] > 0.0 {
                        let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                        row.iter().zip(delta.iter()).map(|(w, d)| w * d).sum()
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    /// One plain gradient-descent step over `batch`.
    pub(crate) fn sgd_step(
        &mut self,
        batch: &[Example],
        learning_rate: f64,
        ws: &mut Workspace,
        grad: &mut Gradient,
    ) {
        for l in &mut grad.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let scale = 1.0 / batch.len() as f64;
        for ex in batch {
            self.accumulate(ex, scale, ws, grad);
        }
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= learning_rate * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * d;
            }
        }
    }

    pub fn zero_gradient(&self) -> Gradient {
        Gradient {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            layer_shapes: self.layers.iter().map(|l| [l.inputs, l.outputs]).collect(),
            network: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::parse("model file", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::parse("model file", e))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::parse(
                "model file",
                format!("unsupported format version {}", file.format_version),
            ));
        }
        let shapes: Vec<[usize; 2]> = file
            .network
            .layers
            .iter()
            .map(|l| [l.inputs, l.outputs])
            .collect();
        if shapes != file.layer_shapes {
            return Err(Error::parse(
                "model file",
                "layer_shapes disagree with layers",
            ));
        }
        file.network.check()?;
        Ok(file.network)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Scratch buffers for backprop, reused across samples.
pub(crate) struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub(crate) fn new(net: &Network) -> Self {
        let shape = net.shape();
        Workspace {
            acts: shape.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: shape.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

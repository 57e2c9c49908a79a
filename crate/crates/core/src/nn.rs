//! Small dense feed-forward networks with exact backward gradients.
//!
//! These realize both the transition and readout functions of the graph model
//! and the feed-forward baseline. Weights are stored row-major
//! (`output_dim x input_dim`) so that a layer computes `y = act(W x + b)`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network needs at least one layer")]
    EmptySpec,
    #[error("layer {layer} has a zero dimension")]
    ZeroDim { layer: usize },
    #[error("layer {layer} expects input dim {expected} but previous layer outputs {got}")]
    NonChaining { layer: usize, expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("trace does not belong to this network")]
    TraceMismatch,
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(NnError::UnknownActivation(other.to_string())),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), NnError> {
    if specs.is_empty() {
        return Err(NnError::EmptySpec);
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(NnError::ZeroDim { layer: i });
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(NnError::NonChaining {
                layer: i,
                expected: s.input_dim,
                got: specs[i - 1].output_dim,
            });
        }
    }
    Ok(())
}

/// A chain of affine layers, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    specs: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer inputs and post-activation outputs recorded by [`DenseNet::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Post-activation values of each layer.
    pub fn layer_outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }
}

/// Parameter gradients with the same shapes as a [`DenseNet`]'s weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl DenseGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|x| *x *= factor);
    }

    /// All entries, weights first (layer by layer), then biases.
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    pub fn sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum()
    }
}

impl DenseNet {
    /// Xavier-uniform weights, zero biases, driven by a ChaCha8 stream seeded with `seed`.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(specs.len());
        let mut biases = Vec::with_capacity(specs.len());
        for s in specs {
            let bound = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            weights.push(
                (0..s.input_dim * s.output_dim)
                    .map(|_| dist.sample(&mut rng))
                    .collect(),
            );
            biases.push(vec![0.0; s.output_dim]);
        }
        Ok(Self {
            specs: specs.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit parameters. `weights[i]` is row-major `out x in`.
    pub fn from_parts(
        specs: Vec<LayerSpec>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, NnError> {
        validate_specs(&specs)?;
        if weights.len() != specs.len() {
            return Err(NnError::DimensionMismatch {
                expected: specs.len(),
                got: weights.len(),
            });
        }
        if biases.len() != specs.len() {
            return Err(NnError::DimensionMismatch {
                expected: specs.len(),
                got: biases.len(),
            });
        }
        for (s, (w, b)) in specs.iter().zip(weights.iter().zip(&biases)) {
            if w.len() != s.input_dim * s.output_dim {
                return Err(NnError::DimensionMismatch {
                    expected: s.input_dim * s.output_dim,
                    got: w.len(),
                });
            }
            if b.len() != s.output_dim {
                return Err(NnError::DimensionMismatch {
                    expected: s.output_dim,
                    got: b.len(),
                });
            }
        }
        let net = Self {
            specs,
            weights,
            biases,
        };
        if !net.is_finite() {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].output_dim
    }

    pub fn output_activation(&self) -> Activation {
        self.specs[self.specs.len() - 1].activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    /// Mutable parameter access for tests and hand-built networks.
    /// Callers are responsible for keeping entries finite.
    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flat_map(|v| v.iter())
            .all(|x| x.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Trace), NnError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut outputs = Vec::with_capacity(self.specs.len());
        let mut current = x.to_vec();
        for (i, spec) in self.specs.iter().enumerate() {
            let y = self.layer_forward(i, spec, &current);
            inputs.push(current);
            current = y;
            outputs.push(current.clone());
        }
        Ok((current, Trace { inputs, outputs }))
    }

    /// Forward pass without recording a trace.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        for (i, spec) in self.specs.iter().enumerate() {
            current = self.layer_forward(i, spec, &current);
        }
        Ok(current)
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("input"));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, spec: &LayerSpec, x: &[f64]) -> Vec<f64> {
        let w = &self.weights[i];
        let n = spec.input_dim;
        let mut z = self.biases[i].clone();
        // four rows at a time so independent sums overlap; each row still adds
        // b, w0*x0, w1*x1, ... in that order
        for (zb, wb) in z.chunks_mut(4).zip(w.chunks(4 * n)) {
            if let [z0, z1, z2, z3] = zb {
                let (r0, rest) = wb.split_at(n);
                let (r1, rest) = rest.split_at(n);
                let (r2, r3) = rest.split_at(n);
                for c in 0..n {
                    *z0 += r0[c] * x[c];
                    *z1 += r1[c] * x[c];
                    *z2 += r2[c] * x[c];
                    *z3 += r3[c] * x[c];
                }
            } else {
                for (zr, row) in zb.iter_mut().zip(wb.chunks_exact(n)) {
                    *zr = row.iter().zip(x).fold(*zr, |acc, (wi, xi)| acc + wi * xi);
                }
            }
        }
        z.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        z
    }

    /// Gradients of `y . out_grad` with respect to the input and all parameters.
    pub fn backward(&self, trace: &Trace, out_grad: &[f64]) -> Result<(Vec<f64>, DenseGrads), NnError> {
        let mut grads = DenseGrads::zeros_like(self);
        let in_grad = self.backward_accumulate(trace, out_grad, &mut grads)?;
        Ok((in_grad, grads))
    }

    /// Like [`DenseNet::backward`] but adds parameter gradients into `grads`.
    pub fn backward_accumulate(
        &self,
        trace: &Trace,
        out_grad: &[f64],
        grads: &mut DenseGrads,
    ) -> Result<Vec<f64>, NnError> {
        self.check_trace(trace)?;
        if out_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: out_grad.len(),
            });
        }
        if grads.weights.len() != self.specs.len() {
            return Err(NnError::TraceMismatch);
        }
        let mut upstream = out_grad.to_vec();
        for (i, spec) in self.specs.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            let y = &trace.outputs[i];
            let delta: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, yi)| g * spec.activation.derivative_from_output(*yi))
                .collect();
            let w = &self.weights[i];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.biases[i];
            let mut next = vec![0.0; spec.input_dim];
            for (r, d) in delta.iter().enumerate() {
                gb[r] += d;
                if *d == 0.0 {
                    continue;
                }
                let off = r * spec.input_dim;
                let w_row = &w[off..off + spec.input_dim];
                let gw_row = &mut gw[off..off + spec.input_dim];
                for ((g, xc), (nx, wc)) in gw_row.iter_mut().zip(x).zip(next.iter_mut().zip(w_row)) {
                    *g += d * xc;
                    *nx += d * wc;
                }
            }
            upstream = next;
        }
        Ok(upstream)
    }

    fn check_trace(&self, trace: &Trace) -> Result<(), NnError> {
        if trace.inputs.len() != self.specs.len() || trace.outputs.len() != self.specs.len() {
            return Err(NnError::TraceMismatch);
        }
        for (s, (x, y)) in self.specs.iter().zip(trace.inputs.iter().zip(&trace.outputs)) {
            if x.len() != s.input_dim || y.len() != s.output_dim {
                return Err(NnError::TraceMismatch);
            }
        }
        Ok(())
    }

    /// In-place gradient step `w <- w - lr * g`.
    pub fn apply_step(&mut self, grads: &DenseGrads, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.iter_mut().zip(g).for_each(|(wi, gi)| *wi -= lr * gi);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.iter_mut().zip(g).for_each(|(bi, gi)| *bi -= lr * gi);
        }
    }

    /// Multiplies every weight (not bias) by `factor`.
    pub fn scale_weights(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .flat_map(|w| w.iter_mut())
            .for_each(|x| *x *= factor);
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    #[serde(rename = "in")]
    input: usize,
    #[serde(rename = "out")]
    output: usize,
    act: String,
}

/// Checkpoint fragment: `{"layers":[{"in","out","act"}],"weights":[[..]],"biases":[[..]]}`.
#[derive(Serialize, Deserialize)]
pub(crate) struct DenseNetJson {
    layers: Vec<LayerJson>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<&DenseNet> for DenseNetJson {
    fn from(net: &DenseNet) -> Self {
        Self {
            layers: net
                .specs
                .iter()
                .map(|s| LayerJson {
                    input: s.input_dim,
                    output: s.output_dim,
                    act: s.activation.as_str().to_string(),
                })
                .collect(),
            weights: net.weights.clone(),
            biases: net.biases.clone(),
        }
    }
}

impl TryFrom<DenseNetJson> for DenseNet {
    type Error = NnError;

    fn try_from(j: DenseNetJson) -> Result<Self, Self::Error> {
        let specs = j
            .layers
            .iter()
            .map(|l| Ok(LayerSpec::new(l.input, l.output, l.act.parse()?)))
            .collect::<Result<Vec<_>, NnError>>()?;
        DenseNet::from_parts(specs, j.weights, j.biases)
    }
}

impl Serialize for DenseNet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        DenseNetJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DenseNet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let j = DenseNetJson::deserialize(deserializer)?;
        DenseNet::try_from(j).map_err(serde::de::Error::custom)
    }
}

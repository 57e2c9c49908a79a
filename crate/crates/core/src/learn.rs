//! Penalized squared-error loss, backpropagation through the unrolled
//! fixed-point iteration, and full-batch gradient descent for both the graph
//! model and the feed-forward baseline.

use crate::gnn::{
    fixed_point_trajectory, readout_input, transition_input, Convergence, GnnError, GnnModel,
    States,
};
use crate::graph::{FeatureVector, GraphInstance, NodeId};
use crate::nn::{Activation, DenseGrads, DenseNet, LayerSpec, NnError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("prediction {0} outside [0, 1]")]
    PredictionOutOfRange(f64),
    #[error("example {0} has no label")]
    Unlabeled(usize),
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    /// Learning rate.
    pub alpha: f64,
    /// Weight of the output penalty.
    pub beta: f64,
    /// Output level above which the penalty applies.
    pub mu: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Training stops once train accuracy reaches this value.
    pub target_metric: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 0.01,
            mu: 0.9,
            epsilon: 1e-4,
            max_iterations: 50,
            epochs: 200,
            seed: 0,
            target_metric: 0.99,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidHyperparams(m.to_string()));
        // alpha = 0 is accepted and freezes the weights
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad("alpha must be finite and >= 0");
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad("beta must be finite and >= 0");
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad("mu must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be > 0");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.target_metric > 0.0 && self.target_metric <= 1.0) {
            return bad("target_metric must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn convergence(&self) -> Convergence {
        Convergence {
            epsilon: self.epsilon,
            max_iterations: self.max_iterations,
        }
    }
}

/// `0.5 (c - p)^2 + beta * max(0, c - mu)^2` for one prediction `c` and target `p`.
pub fn loss(prediction: f64, target: bool, beta: f64, mu: f64) -> Result<f64, LearnError> {
    if !(0.0..=1.0).contains(&prediction) {
        return Err(LearnError::PredictionOutOfRange(prediction));
    }
    let p = if target { 1.0 } else { 0.0 };
    let excess = (prediction - mu).max(0.0);
    Ok(0.5 * (prediction - p).powi(2) + beta * excess * excess)
}

/// Derivative of [`loss`] with respect to the prediction.
pub fn loss_derivative(prediction: f64, target: bool, beta: f64, mu: f64) -> f64 {
    let p = if target { 1.0 } else { 0.0 };
    (prediction - p) + 2.0 * beta * (prediction - mu).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnGrads {
    pub transition: DenseGrads,
    pub readout: DenseGrads,
}

impl GnnGrads {
    pub fn zeros_like(model: &GnnModel) -> Self {
        Self {
            transition: DenseGrads::zeros_like(model.transition()),
            readout: DenseGrads::zeros_like(model.readout_net()),
        }
    }

    pub fn add_assign(&mut self, other: &GnnGrads) {
        self.transition.add_assign(&other.transition);
        self.readout.add_assign(&other.readout);
    }

    pub fn sq_norm(&self) -> f64 {
        self.transition.sq_norm() + self.readout.sq_norm()
    }
}

/// Loss, predictions and summed gradients over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient<G> {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub grads: G,
}

fn labels_of(batch: &[GraphInstance]) -> Result<Vec<bool>, LearnError> {
    batch
        .iter()
        .enumerate()
        .map(|(i, g)| g.label().ok_or(LearnError::Unlabeled(i)))
        .collect()
}

/// Gradient of one example's loss, unrolled over the iterations the forward
/// pass actually took.
fn gnn_example(
    model: &GnnModel,
    g: &GraphInstance,
    target: bool,
    hp: &Hyperparams,
) -> Result<(f64, f64, GnnGrads), LearnError> {
    let (fp, trajectory) = fixed_point_trajectory(g, model, hp.convergence())?;
    let s = model.state_dim();
    let d = model.feature_dim();
    let t = g.target();
    let mut grads = GnnGrads::zeros_like(model);

    let mut buf = Vec::new();
    readout_input(&mut buf, fp.states.node(t), g.features(t));
    let (out, trace) = model.readout_net().forward(&buf)?;
    let prediction = out[0];
    let l = loss(prediction, target, hp.beta, hp.mu)?;
    let dl = loss_derivative(prediction, target, hp.beta, hp.mu);
    let in_grad = model
        .readout_net()
        .backward_accumulate(&trace, &[dl], &mut grads.readout)?;

    // adjoint[n] = dL / d a_n(k), walked from k = K down to 1
    let nodes = g.len();
    let mut adjoint = vec![0.0; nodes * s];
    adjoint[t.0 * s..(t.0 + 1) * s].copy_from_slice(&in_grad[..s]);
    let h = model.transition();
    for k in (1..=fp.iterations).rev() {
        let prev: &States = &trajectory[k - 1];
        let mut next_adjoint = vec![0.0; nodes * s];
        for n in 0..nodes {
            let lam = &adjoint[n * s..(n + 1) * s];
            if lam.iter().all(|x| *x == 0.0) {
                continue;
            }
            let f_n = g.features(NodeId(n));
            for &m in g.in_neighbors(NodeId(n)).map_err(GnnError::from)? {
                transition_input(&mut buf, f_n, g.features(m), prev.node(m));
                let (_, trace) = h.forward(&buf)?;
                let gx = h.backward_accumulate(&trace, lam, &mut grads.transition)?;
                next_adjoint[m.0 * s..(m.0 + 1) * s]
                    .iter_mut()
                    .zip(&gx[2 * d..])
                    .for_each(|(a, b)| *a += b);
            }
        }
        adjoint = next_adjoint;
    }
    Ok((l, prediction, grads))
}

/// Exact gradient of the summed batch loss with respect to both networks.
pub fn gnn_gradient(
    model: &GnnModel,
    batch: &[GraphInstance],
    hp: &Hyperparams,
) -> Result<BatchGradient<GnnGrads>, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let labels = labels_of(batch)?;
    let per_example = batch
        .par_iter()
        .zip(labels.par_iter())
        .map(|(g, &y)| gnn_example(model, g, y, hp))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = GnnGrads::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(batch.len());
    for (l, p, g) in &per_example {
        loss_sum += l;
        predictions.push(*p);
        total.add_assign(g);
    }
    Ok(BatchGradient {
        loss: loss_sum,
        predictions,
        grads: total,
    })
}

/// Summed loss of the converged predictions, without gradients.
pub fn gnn_batch_loss(model: &GnnModel, batch: &[GraphInstance], hp: &Hyperparams) -> Result<f64, LearnError> {
    let labels = labels_of(batch)?;
    let mut total = 0.0;
    for (g, y) in batch.iter().zip(labels) {
        let p = crate::gnn::predict(g, model, hp.convergence())?;
        total += loss(p, y, hp.beta, hp.mu)?;
    }
    Ok(total)
}

/// Gradient of the summed loss of a dense classifier on labeled feature vectors.
pub fn fnn_gradient(
    net: &DenseNet,
    data: &[(FeatureVector, bool)],
    hp: &Hyperparams,
) -> Result<BatchGradient<DenseGrads>, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let per_example = data
        .par_iter()
        .map(|(f, y)| -> Result<_, LearnError> {
            let (out, trace) = net.forward(f.as_slice())?;
            let p = out[0];
            let l = loss(p, *y, hp.beta, hp.mu)?;
            let (_, g) = net.backward(&trace, &[loss_derivative(p, *y, hp.beta, hp.mu)])?;
            Ok((l, p, g))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = DenseGrads::zeros_like(net);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for (l, p, g) in &per_example {
        loss_sum += l;
        predictions.push(*p);
        total.add_assign(g);
    }
    Ok(BatchGradient {
        loss: loss_sum,
        predictions,
        grads: total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    /// Milliseconds since training started, measured at the end of the epoch.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_accuracy,wall_ms\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.train_accuracy, e.wall_ms);
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn accuracy(predictions: &[f64], labels: &[bool]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| (**p >= 0.5) == **y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Shared full-batch descent loop: evaluate, record, stop on target accuracy, step.
fn descend<M, G>(
    model: &mut M,
    labels: &[bool],
    hp: &Hyperparams,
    eval: impl Fn(&M) -> Result<BatchGradient<G>, LearnError>,
    update: impl Fn(&mut M, &G, f64),
) -> Result<TrainHistory, LearnError> {
    let start = Instant::now();
    let mut history = TrainHistory::default();
    for epoch in 0..hp.epochs {
        let batch = eval(model)?;
        if !batch.loss.is_finite() {
            return Err(LearnError::NonFiniteLoss { epoch });
        }
        let train_accuracy = accuracy(&batch.predictions, labels);
        history.epochs.push(EpochRecord {
            epoch,
            loss: batch.loss,
            train_accuracy,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if train_accuracy >= hp.target_metric {
            break;
        }
        update(model, &batch.grads, hp.alpha);
    }
    Ok(history)
}

/// Full-batch gradient descent on the graph model.
pub fn train(
    model: GnnModel,
    data: &[GraphInstance],
    hp: &Hyperparams,
) -> Result<(GnnModel, TrainHistory), LearnError> {
    hp.validate()?;
    if data.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let labels = labels_of(data)?;
    let mut model = model;
    let history = descend(
        &mut model,
        &labels,
        hp,
        |m| gnn_gradient(m, data, hp),
        |m, g, lr| {
            m.transition_mut().apply_step(&g.transition, lr);
            m.readout_net_mut().apply_step(&g.readout, lr);
        },
    )?;
    Ok((model, history))
}

/// The baseline classifier `d -> hidden (tanh) -> 1 (sigmoid)`.
pub fn fnn_init(feature_dim: usize, hidden: usize, seed: u64) -> Result<DenseNet, NnError> {
    DenseNet::init(
        &[
            LayerSpec::new(feature_dim, hidden, Activation::Tanh),
            LayerSpec::new(hidden, 1, Activation::Sigmoid),
        ],
        seed,
    )
}

/// Full-batch gradient descent on a dense classifier.
pub fn train_fnn(
    net: DenseNet,
    data: &[(FeatureVector, bool)],
    hp: &Hyperparams,
) -> Result<(DenseNet, TrainHistory), LearnError> {
    hp.validate()?;
    if data.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    let mut net = net;
    let history = descend(
        &mut net,
        &labels,
        hp,
        |n| fnn_gradient(n, data, hp),
        |n, g, lr| n.apply_step(g, lr),
    )?;
    Ok((net, history))
}

/// Baseline on target features only, hidden width 16, initialized from `hp.seed`.
pub fn train_fnn_baseline(
    data: &[(FeatureVector, bool)],
    hp: &Hyperparams,
) -> Result<(DenseNet, TrainHistory), LearnError> {
    let dim = data.first().ok_or(LearnError::EmptyBatch)?.0.dim();
    let net = fnn_init(dim, 16, hp.seed)?;
    train_fnn(net, data, hp)
}

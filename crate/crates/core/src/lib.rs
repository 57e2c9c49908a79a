//! Recurrent graph neural network for predicting receptor activation from
//! sequence composition, with a dense feed-forward baseline, corpus handling
//! and cross-validated evaluation.

pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod gnn;
pub mod graph;
pub mod learn;
pub mod nn;

pub use checkpoint::{Checkpoint, FnnCheckpoint, GnnCheckpoint};
pub use dataset::{DatasetError, FeatureMode, ResiduePolicy, SequenceRecord};
pub use eval::EvalError;
pub use gnn::{Convergence, GnnError, GnnModel, GnnShape};
pub use graph::{FeatureVector, GraphError, GraphInstance, NodeId, Role, TopologyTemplate};
pub use learn::{Hyperparams, LearnError, TrainHistory};
pub use nn::{DenseNet, NnError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_fold(self, fold: usize) -> Self {
        Error::InFold {
            fold,
            source: Box::new(self),
        }
    }

    /// True for failures caused by bad input or configuration rather than by
    /// the numerics of training or inference.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Dataset(_) | Error::Graph(_) | Error::Config(_) => true,
            Error::Learn(LearnError::InvalidHyperparams(_)) => true,
            Error::InFold { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}

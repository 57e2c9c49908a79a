//! On-disk model checkpoints.
//!
//! A graph-model checkpoint is the model JSON (`state_dim`, `feature_dim`,
//! `h_net`, `g_net`) plus optional keys that make it self-contained for
//! prediction: the role prototypes and template used to build instances and
//! the decision threshold. A baseline checkpoint is a dense-net fragment plus
//! an optional threshold.

use crate::gnn::{predict, Convergence, GnnModel};
use crate::graph::{build_instance, FeatureVector, Role, TopologyTemplate};
use crate::nn::DenseNet;
use crate::Error;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnCheckpoint {
    #[serde(flatten)]
    pub model: GnnModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prototypes: Option<BTreeMap<Role, FeatureVector>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<TopologyTemplate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnCheckpoint {
    #[serde(flatten)]
    pub net: DenseNet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Gnn(GnnCheckpoint),
    Fnn(FnnCheckpoint),
}

impl Checkpoint {
    /// Parses either flavour, telling them apart by the `h_net` key.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("h_net").is_some() {
            Ok(Checkpoint::Gnn(serde_json::from_value(value)?))
        } else {
            Ok(Checkpoint::Fnn(serde_json::from_value(value)?))
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = match self {
            Checkpoint::Gnn(c) => serde_json::to_string(c),
            Checkpoint::Fnn(c) => serde_json::to_string(c),
        }
        .expect("checkpoint parameters are finite");
        s.push('\n');
        s
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Checkpoint::Gnn(c) => c.model.feature_dim(),
            Checkpoint::Fnn(c) => c.net.input_dim(),
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match self {
            Checkpoint::Gnn(c) => c.threshold,
            Checkpoint::Fnn(c) => c.threshold,
        }
    }

    /// Activation probability for one candidate's features. A graph checkpoint
    /// must carry its prototypes; a missing template means the star.
    pub fn score(&self, features: &FeatureVector, control: Convergence) -> Result<f64, Error> {
        match self {
            Checkpoint::Gnn(c) => {
                let protos = c
                    .prototypes
                    .as_ref()
                    .ok_or_else(|| Error::Config("graph checkpoint has no prototypes".into()))?;
                let star;
                let template = match &c.template {
                    Some(t) => t,
                    None => {
                        star = TopologyTemplate::star();
                        &star
                    }
                };
                let g = build_instance(features, protos, template, None)?;
                Ok(predict(&g, &c.model, control)?)
            }
            Checkpoint::Fnn(c) => Ok(c.net.eval(features.as_slice())?[0]),
        }
    }
}

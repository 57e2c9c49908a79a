//! Receptor dependency graphs.
//!
//! A [`GraphInstance`] is a small directed graph whose nodes carry a role tag
//! and a feature vector. Edges point from a feeding node into the node whose
//! state it contributes to. Per-example instances are stamped out of a
//! [`TopologyTemplate`] with [`build_instance`].

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("node ids must be dense 0..N-1 in order; found {found} at position {position}")]
    NonDenseIds { position: usize, found: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(usize, usize),
    #[error("target node {0} has no in-neighbors")]
    IsolatedTarget(usize),
    #[error("graph has no nodes")]
    Empty,
    #[error("node {node} has feature dimension {got}, expected {expected}")]
    FeatureDim { node: usize, expected: usize, got: usize },
    #[error("feature vector contains a non-finite value")]
    NonFiniteFeature,
    #[error("feature vector is empty")]
    EmptyFeature,
    #[error("no prototype for role {0}")]
    MissingPrototype(Role),
    #[error("role {0} cannot appear in a graph")]
    InvalidGraphRole(Role),
    #[error("unknown role tag {0:?}")]
    UnknownRole(String),
    #[error("template edge {0} -> {0} is a self-loop")]
    TemplateSelfLoop(Role),
    #[error("template repeats edge {0} -> {1}")]
    TemplateDuplicate(Role, Role),
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
}

/// Role tags for graph nodes and sequence records.
///
/// `NonPrr` only labels negative records; it never appears as a graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Tlr,
    Rlr,
    Nlr,
    Clr,
    Cdr,
    Ifn,
    Candidate,
    NonPrr,
}

impl Role {
    /// The receptor families that positive records belong to.
    pub const FAMILIES: [Role; 5] = [Role::Tlr, Role::Rlr, Role::Nlr, Role::Clr, Role::Cdr];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Tlr => "TLR",
            Role::Rlr => "RLR",
            Role::Nlr => "NLR",
            Role::Clr => "CLR",
            Role::Cdr => "CDR",
            Role::Ifn => "IFN",
            Role::Candidate => "CANDIDATE",
            Role::NonPrr => "NONPRR",
        }
    }

    pub fn is_family(self) -> bool {
        Role::FAMILIES.contains(&self)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "TLR" => Role::Tlr,
            "RLR" => Role::Rlr,
            "NLR" => Role::Nlr,
            "CLR" => Role::Clr,
            "CDR" => Role::Cdr,
            "IFN" => Role::Ifn,
            "CANDIDATE" => Role::Candidate,
            "NONPRR" => Role::NonPrr,
            _ => return Err(GraphError::UnknownRole(s.to_string())),
        })
    }
}

impl Serialize for Role {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Fixed-length numeric encoding of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GraphError> {
        if values.is_empty() {
            return Err(GraphError::EmptyFeature);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GraphError::NonFiniteFeature);
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = GraphError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        FeatureVector::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub role: Role,
    pub features: FeatureVector,
}

/// An immutable, validated graph with precomputed sorted in-neighbor lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct GraphInstance {
    nodes: Vec<Node>,
    edges: Vec<(NodeId, NodeId)>,
    target: NodeId,
    label: Option<bool>,
    in_adj: Vec<Vec<NodeId>>,
}

impl GraphInstance {
    pub fn new(
        nodes: Vec<Node>,
        edges: Vec<(NodeId, NodeId)>,
        target: NodeId,
        label: Option<bool>,
    ) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        let dim = nodes[0].features.dim();
        for (pos, n) in nodes.iter().enumerate() {
            if n.id.0 != pos {
                return Err(GraphError::NonDenseIds {
                    position: pos,
                    found: n.id.0,
                });
            }
            if n.role == Role::NonPrr {
                return Err(GraphError::InvalidGraphRole(n.role));
            }
            if n.features.dim() != dim {
                return Err(GraphError::FeatureDim {
                    node: pos,
                    expected: dim,
                    got: n.features.dim(),
                });
            }
        }
        let count = nodes.len();
        let mut seen = BTreeSet::new();
        let mut in_adj = vec![Vec::new(); count];
        for &(src, dst) in &edges {
            for id in [src, dst] {
                if id.0 >= count {
                    return Err(GraphError::UnknownNode(id.0));
                }
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src.0));
            }
            if !seen.insert((src, dst)) {
                return Err(GraphError::DuplicateEdge(src.0, dst.0));
            }
            in_adj[dst.0].push(src);
        }
        if target.0 >= count {
            return Err(GraphError::UnknownNode(target.0));
        }
        if count > 1 && in_adj[target.0].is_empty() {
            return Err(GraphError::IsolatedTarget(target.0));
        }
        in_adj.iter_mut().for_each(|v| v.sort_unstable());
        Ok(Self {
            nodes,
            edges,
            target,
            label,
            in_adj,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(NodeId, NodeId)] {
        &self.edges
    }

    pub fn target(&self) -> NodeId {
        self.target
    }

    pub fn label(&self) -> Option<bool> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes[0].features.dim()
    }

    pub fn features(&self, n: NodeId) -> &[f64] {
        self.nodes[n.0].features.as_slice()
    }

    /// Sources of all edges into `n`, ascending by id.
    pub fn in_neighbors(&self, n: NodeId) -> Result<&[NodeId], GraphError> {
        self.in_adj
            .get(n.0)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(n.0))
    }

    pub(crate) fn in_adjacency(&self) -> &[Vec<NodeId>] {
        &self.in_adj
    }

    pub fn max_in_degree(&self) -> usize {
        self.in_adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Same graph with a different label.
    pub fn with_label(mut self, label: Option<bool>) -> Self {
        self.label = label;
        self
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    role: Role,
    f: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    nodes: Vec<NodeJson>,
    edges: Vec<[usize; 2]>,
    target: usize,
    label: Option<u8>,
}

impl TryFrom<GraphJson> for GraphInstance {
    type Error = GraphError;

    fn try_from(j: GraphJson) -> Result<Self, Self::Error> {
        let nodes = j
            .nodes
            .into_iter()
            .map(|n| {
                Ok(Node {
                    id: NodeId(n.id),
                    role: n.role,
                    features: FeatureVector::new(n.f)?,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        let label = match j.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => return Err(GraphError::BadLabel(other)),
        };
        let edges = j.edges.into_iter().map(|[a, b]| (NodeId(a), NodeId(b))).collect();
        GraphInstance::new(nodes, edges, NodeId(j.target), label)
    }
}

impl From<GraphInstance> for GraphJson {
    fn from(g: GraphInstance) -> Self {
        GraphJson {
            nodes: g
                .nodes
                .into_iter()
                .map(|n| NodeJson {
                    id: n.id.0,
                    role: n.role,
                    f: n.features.into_inner(),
                })
                .collect(),
            edges: g.edges.into_iter().map(|(a, b)| [a.0, b.0]).collect(),
            target: g.target.0,
            label: g.label.map(u8::from),
        }
    }
}

/// Role-level edge list from which per-example graphs are instantiated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(Role, Role)>", into = "Vec<(Role, Role)>")]
pub struct TopologyTemplate {
    edges: Vec<(Role, Role)>,
}

impl TopologyTemplate {
    pub fn new(edges: Vec<(Role, Role)>) -> Result<Self, GraphError> {
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            for r in [a, b] {
                if r == Role::NonPrr {
                    return Err(GraphError::InvalidGraphRole(r));
                }
            }
            if a == b {
                return Err(GraphError::TemplateSelfLoop(a));
            }
            if !seen.insert((a, b)) {
                return Err(GraphError::TemplateDuplicate(a, b));
            }
        }
        Ok(Self { edges })
    }

    /// Every receptor family feeding directly into the candidate.
    pub fn star() -> Self {
        Self {
            edges: Role::FAMILIES.iter().map(|&r| (r, Role::Candidate)).collect(),
        }
    }

    pub fn edges(&self) -> &[(Role, Role)] {
        &self.edges
    }

    /// Distinct non-candidate roles, in enum order.
    pub fn feeder_roles(&self) -> Vec<Role> {
        let set: BTreeSet<Role> = self
            .edges
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter(|r| *r != Role::Candidate)
            .collect();
        set.into_iter().collect()
    }
}

impl Default for TopologyTemplate {
    fn default() -> Self {
        Self::star()
    }
}

impl TryFrom<Vec<(Role, Role)>> for TopologyTemplate {
    type Error = GraphError;
    fn try_from(v: Vec<(Role, Role)>) -> Result<Self, Self::Error> {
        TopologyTemplate::new(v)
    }
}

impl From<TopologyTemplate> for Vec<(Role, Role)> {
    fn from(t: TopologyTemplate) -> Self {
        t.edges
    }
}

/// Instantiates `template` for one candidate.
///
/// Nodes are the template's feeder roles in enum order followed by the
/// candidate, which is always the target.
pub fn build_instance(
    candidate: &FeatureVector,
    prototypes: &BTreeMap<Role, FeatureVector>,
    template: &TopologyTemplate,
    label: Option<bool>,
) -> Result<GraphInstance, GraphError> {
    let roles = template.feeder_roles();
    let mut index = BTreeMap::new();
    let mut nodes = Vec::with_capacity(roles.len() + 1);
    for role in roles {
        let proto = prototypes
            .get(&role)
            .ok_or(GraphError::MissingPrototype(role))?;
        let id = NodeId(nodes.len());
        index.insert(role, id);
        nodes.push(Node {
            id,
            role,
            features: proto.clone(),
        });
    }
    let target = NodeId(nodes.len());
    index.insert(Role::Candidate, target);
    nodes.push(Node {
        id: target,
        role: Role::Candidate,
        features: candidate.clone(),
    });
    let edges = template
        .edges()
        .iter()
        .map(|(a, b)| (index[a], index[b]))
        .collect();
    GraphInstance::new(nodes, edges, target, label)
}

//! Fixed-point state propagation and readout.
//!
//! Every node state is the sum, over its in-neighbors `m`, of the transition
//! network applied to `[f_n ; f_m ; a_m]`. Starting from all-zero states the
//! update is iterated until the max-norm change drops below `epsilon` or the
//! iteration budget runs out. The readout network maps `[a_n ; f_n]` to an
//! activation probability.

use crate::graph::{GraphError, GraphInstance, NodeId};
use crate::nn::{Activation, DenseNet, LayerSpec, NnError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("readout network must end in a sigmoid layer")]
    ReadoutActivation,
    #[error("state update produced a non-finite value at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("convergence controls need epsilon > 0 and at least one iteration")]
    InvalidControl,
}

/// Per-node states stored contiguously, `len = nodes * dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct States {
    dim: usize,
    data: Vec<f64>,
}

impl States {
    pub fn zeros(nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; nodes * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GnnError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(GnnError::Dimension {
                    what: "state row",
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn node(&self, n: NodeId) -> &[f64] {
        &self.data[n.0 * self.dim..(n.0 + 1) * self.dim]
    }

    fn node_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &States) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Convergence {
    pub fn new(epsilon: f64, max_iterations: usize) -> Result<Self, GnnError> {
        let c = Self {
            epsilon,
            max_iterations,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), GnnError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.max_iterations == 0 {
            return Err(GnnError::InvalidControl);
        }
        Ok(())
    }
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub states: States,
    pub iterations: usize,
    pub converged: bool,
    /// Max-norm change of the last iteration.
    pub residual: f64,
    /// Residual after each iteration, `len == iterations`.
    pub residuals: Vec<f64>,
}

/// Layer widths for [`GnnModel::init`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnShape {
    pub state_dim: usize,
    pub feature_dim: usize,
    pub transition_hidden: usize,
    pub readout_hidden: usize,
}

impl GnnShape {
    pub fn new(state_dim: usize, feature_dim: usize) -> Self {
        Self {
            state_dim,
            feature_dim,
            transition_hidden: 16,
            readout_hidden: 16,
        }
    }
}

/// The transition network `h` and readout network `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    transition: DenseNet,
    readout: DenseNet,
    state_dim: usize,
    feature_dim: usize,
}

impl GnnModel {
    pub fn new(
        transition: DenseNet,
        readout: DenseNet,
        state_dim: usize,
        feature_dim: usize,
    ) -> Result<Self, GnnError> {
        let check = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(GnnError::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("transition input", 2 * feature_dim + state_dim, transition.input_dim())?;
        check("transition output", state_dim, transition.output_dim())?;
        check("readout input", state_dim + feature_dim, readout.input_dim())?;
        check("readout output", 1, readout.output_dim())?;
        if readout.output_activation() != Activation::Sigmoid {
            return Err(GnnError::ReadoutActivation);
        }
        if !transition.is_finite() || !readout.is_finite() {
            return Err(NnError::NonFinite("parameters").into());
        }
        Ok(Self {
            transition,
            readout,
            state_dim,
            feature_dim,
        })
    }

    /// One tanh hidden layer in each network; tanh transition output, sigmoid readout.
    pub fn init(shape: GnnShape, seed: u64) -> Result<Self, GnnError> {
        let GnnShape {
            state_dim: s,
            feature_dim: d,
            transition_hidden,
            readout_hidden,
        } = shape;
        let transition = DenseNet::init(
            &[
                LayerSpec::new(2 * d + s, transition_hidden, Activation::Tanh),
                LayerSpec::new(transition_hidden, s, Activation::Tanh),
            ],
            seed,
        )?;
        let readout = DenseNet::init(
            &[
                LayerSpec::new(s + d, readout_hidden, Activation::Tanh),
                LayerSpec::new(readout_hidden, 1, Activation::Sigmoid),
            ],
            seed ^ 0x9e37_79b9_7f4a_7c15,
        )?;
        Self::new(transition, readout, s, d)
    }

    pub fn transition(&self) -> &DenseNet {
        &self.transition
    }

    pub fn readout_net(&self) -> &DenseNet {
        &self.readout
    }

    pub fn transition_mut(&mut self) -> &mut DenseNet {
        &mut self.transition
    }

    pub fn readout_net_mut(&mut self) -> &mut DenseNet {
        &mut self.readout
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn check_graph(&self, g: &GraphInstance) -> Result<(), GnnError> {
        if g.feature_dim() != self.feature_dim {
            return Err(GnnError::Dimension {
                what: "graph features",
                expected: self.feature_dim,
                got: g.feature_dim(),
            });
        }
        Ok(())
    }

    fn check_states(&self, g: &GraphInstance, states: &States) -> Result<(), GnnError> {
        if states.dim() != self.state_dim {
            return Err(GnnError::Dimension {
                what: "state",
                expected: self.state_dim,
                got: states.dim(),
            });
        }
        if states.nodes() != g.len() {
            return Err(GnnError::Dimension {
                what: "state count",
                expected: g.len(),
                got: states.nodes(),
            });
        }
        Ok(())
    }
}

/// Writes `[f_n ; f_m ; a_m]` into `buf`.
pub(crate) fn transition_input(buf: &mut Vec<f64>, f_n: &[f64], f_m: &[f64], a_m: &[f64]) {
    buf.clear();
    buf.extend_from_slice(f_n);
    buf.extend_from_slice(f_m);
    buf.extend_from_slice(a_m);
}

/// Writes `[a_n ; f_n]` into `buf`.
pub(crate) fn readout_input(buf: &mut Vec<f64>, a_n: &[f64], f_n: &[f64]) {
    buf.clear();
    buf.extend_from_slice(a_n);
    buf.extend_from_slice(f_n);
}

/// One synchronous update of every node state. Reads only `states`.
pub fn propagate_step(
    g: &GraphInstance,
    states: &States,
    model: &GnnModel,
) -> Result<States, GnnError> {
    model.check_graph(g)?;
    model.check_states(g, states)?;
    step_unchecked(g, states, model)
}

fn step_unchecked(g: &GraphInstance, states: &States, model: &GnnModel) -> Result<States, GnnError> {
    let mut next = States::zeros(g.len(), model.state_dim);
    let mut buf = Vec::with_capacity(model.transition.input_dim());
    for (n, sources) in g.in_adjacency().iter().enumerate() {
        let f_n = g.features(NodeId(n));
        let acc = next.node_mut(n);
        for &m in sources {
            transition_input(&mut buf, f_n, g.features(m), states.node(m));
            let contribution = model.transition.eval(&buf)?;
            acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c);
        }
    }
    Ok(next)
}

fn iterate(
    g: &GraphInstance,
    model: &GnnModel,
    control: Convergence,
    mut trajectory: Option<&mut Vec<States>>,
) -> Result<FixedPointResult, GnnError> {
    control.validate()?;
    model.check_graph(g)?;
    let mut states = States::zeros(g.len(), model.state_dim);
    let mut residuals = Vec::new();
    let mut converged = false;
    if let Some(t) = trajectory.as_deref_mut() {
        t.push(states.clone());
    }
    while residuals.len() < control.max_iterations {
        let next = step_unchecked(g, &states, model)?;
        if !next.is_finite() {
            return Err(GnnError::Divergence {
                iteration: residuals.len() + 1,
            });
        }
        let residual = next.max_abs_diff(&states);
        residuals.push(residual);
        states = next;
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(states.clone());
        }
        if residual < control.epsilon {
            converged = true;
            break;
        }
    }
    Ok(FixedPointResult {
        states,
        iterations: residuals.len(),
        converged,
        residual: *residuals.last().unwrap_or(&0.0),
        residuals,
    })
}

/// Iterates [`propagate_step`] from the zero state.
pub fn fixed_point(
    g: &GraphInstance,
    model: &GnnModel,
    control: Convergence,
) -> Result<FixedPointResult, GnnError> {
    iterate(g, model, control, None)
}

/// As [`fixed_point`], also returning every intermediate state `a(0) ..= a(K)`.
pub fn fixed_point_trajectory(
    g: &GraphInstance,
    model: &GnnModel,
    control: Convergence,
) -> Result<(FixedPointResult, Vec<States>), GnnError> {
    let mut traj = Vec::new();
    let res = iterate(g, model, control, Some(&mut traj))?;
    Ok((res, traj))
}

/// Activation probability of every node from its state and features.
pub fn readout(g: &GraphInstance, states: &States, model: &GnnModel) -> Result<Vec<f64>, GnnError> {
    model.check_graph(g)?;
    model.check_states(g, states)?;
    (0..g.len())
        .map(|n| readout_node(g, states, model, NodeId(n)))
        .collect()
}

fn readout_node(
    g: &GraphInstance,
    states: &States,
    model: &GnnModel,
    n: NodeId,
) -> Result<f64, GnnError> {
    let mut buf = Vec::with_capacity(model.readout.input_dim());
    readout_input(&mut buf, states.node(n), g.features(n));
    Ok(model.readout.eval(&buf)?[0])
}

/// Converged readout at the graph's target node.
pub fn predict(g: &GraphInstance, model: &GnnModel, control: Convergence) -> Result<f64, GnnError> {
    let fp = fixed_point(g, model, control)?;
    readout_node(g, &fp.states, model, g.target())
}

#[derive(Serialize, Deserialize)]
struct GnnModelJson {
    state_dim: usize,
    feature_dim: usize,
    h_net: DenseNet,
    g_net: DenseNet,
}

impl Serialize for GnnModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GnnModelJson {
            state_dim: self.state_dim,
            feature_dim: self.feature_dim,
            h_net: self.transition.clone(),
            g_net: self.readout.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GnnModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = GnnModelJson::deserialize(d)?;
        GnnModel::new(j.h_net, j.g_net, j.state_dim, j.feature_dim)
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FeatureVector, Node, Role};

    fn node(id: usize, role: Role, f: &[f64]) -> Node {
        Node {
            id: NodeId(id),
            role,
            features: FeatureVector::new(f.to_vec()).unwrap(),
        }
    }

    fn small_model(seed: u64) -> GnnModel {
        let shape = GnnShape {
            state_dim: 3,
            feature_dim: 2,
            transition_hidden: 4,
            readout_hidden: 4,
        };
        GnnModel::init(shape, seed).unwrap()
    }

    fn star(order: &[usize]) -> GraphInstance {
        let nodes = vec![
            node(0, Role::Tlr, &[0.1, 0.9]),
            node(1, Role::Nlr, &[0.25, 0.75]),
            node(2, Role::Rlr, &[0.6, 0.4]),
            node(3, Role::Ifn, &[0.5, 0.5]),
        ];
        let edges = order.iter().map(|&i| (NodeId(i), NodeId(3))).collect();
        GraphInstance::new(nodes, edges, NodeId(3), Some(true)).unwrap()
    }

    /// Identity transition on a 1-d state: a' = 0.5 a + 1, features ignored.
    fn linear_stub() -> GnnModel {
        let h = DenseNet::from_parts(
            vec![LayerSpec::new(3, 1, Activation::Identity)],
            vec![vec![0.0, 0.0, 0.5]],
            vec![vec![1.0]],
        )
        .unwrap();
        let g = DenseNet::from_parts(
            vec![LayerSpec::new(2, 1, Activation::Sigmoid)],
            vec![vec![0.3, -0.7]],
            vec![vec![0.1]],
        )
        .unwrap();
        GnnModel::new(h, g, 1, 1).unwrap()
    }

    fn two_cycle() -> GraphInstance {
        GraphInstance::new(
            vec![node(0, Role::Candidate, &[0.25]), node(1, Role::Tlr, &[0.75])],
            vec![(NodeId(0), NodeId(1)), (NodeId(1), NodeId(0))],
            NodeId(0),
            None,
        )
        .unwrap()
    }

    #[test]
    fn star_step_is_sum_of_three_terms() {
        let model = small_model(5);
        let g = star(&[0, 1, 2]);
        let prev = States::from_rows(&[
            vec![0.1, -0.2, 0.3],
            vec![0.0, 0.5, -0.5],
            vec![0.9, 0.1, 0.2],
            vec![0.4, 0.4, 0.4],
        ])
        .unwrap();
        let next = propagate_step(&g, &prev, &model).unwrap();
        let h = model.transition();
        let f4 = g.features(NodeId(3));
        let term = |m: usize| {
            let mut x = f4.to_vec();
            x.extend_from_slice(g.features(NodeId(m)));
            x.extend_from_slice(prev.node(NodeId(m)));
            h.eval(&x).unwrap()
        };
        let (t1, t2, t3) = (term(0), term(1), term(2));
        let expected: Vec<f64> = (0..3).map(|i| t1[i] + t2[i] + t3[i]).collect();
        assert_eq!(next.node(NodeId(3)), expected.as_slice());
        for n in 0..3 {
            assert!(next.node(NodeId(n)).iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn edge_order_does_not_matter() {
        let model = small_model(9);
        let a = star(&[0, 1, 2]);
        let b = star(&[2, 0, 1]);
        let s = States::from_rows(&vec![vec![0.3, 0.2, 0.1]; 4]).unwrap();
        assert_eq!(
            propagate_step(&a, &s, &model).unwrap(),
            propagate_step(&b, &s, &model).unwrap()
        );
    }

    #[test]
    fn edgeless_graph_is_fixed_at_zero() {
        let model = small_model(1);
        let g = GraphInstance::new(vec![node(0, Role::Candidate, &[0.5, 0.5])], vec![], NodeId(0), None)
            .unwrap();
        let s = States::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let next = propagate_step(&g, &s, &model).unwrap();
        assert_eq!(next, States::zeros(1, 3));
        let fp = fixed_point(&g, &model, Convergence::default()).unwrap();
        assert_eq!(fp.iterations, 1);
        assert_eq!(fp.residual, 0.0);
        assert!(fp.converged);
    }

    #[test]
    fn linear_stub_reaches_closed_form_fixed_point() {
        let model = linear_stub();
        let g = two_cycle();
        let eps = 1e-6;
        let fp = fixed_point(&g, &model, Convergence::new(eps, 100).unwrap()).unwrap();
        assert!(fp.converged);
        for n in 0..2 {
            assert!((fp.states.node(NodeId(n))[0] - 2.0).abs() < eps);
        }
        // residual after k steps is 2^(1-k); first k with 2^(1-k) < eps
        let expected_iters = (1.0 + (1.0 / eps).log2()).floor() as usize + 1;
        assert_eq!(fp.iterations, expected_iters);
        for (k, r) in fp.residuals.iter().enumerate() {
            assert_eq!(*r, 2f64.powi(-(k as i32)));
        }
    }

    #[test]
    fn budget_of_one_runs_one_step() {
        let model = linear_stub();
        let fp = fixed_point(&two_cycle(), &model, Convergence::new(1e-3, 1).unwrap()).unwrap();
        assert_eq!(fp.iterations, 1);
        assert!(!fp.converged);
        assert_eq!(fp.residual, 1.0);
        let loose = fixed_point(&two_cycle(), &model, Convergence::new(2.0, 1).unwrap()).unwrap();
        assert!(loose.converged);
    }

    #[test]
    fn zero_readout_weights_give_half() {
        let mut model = small_model(2);
        let last = model.readout_net().specs().len() - 1;
        model.readout_net_mut().weights_mut()[last].iter_mut().for_each(|w| *w = 0.0);
        let g = star(&[0, 1, 2]);
        let s = States::from_rows(&vec![vec![0.7, -0.1, 0.2]; 4]).unwrap();
        assert!(readout(&g, &s, &model).unwrap().iter().all(|c| *c == 0.5));
    }

    #[test]
    fn readout_ignores_other_nodes() {
        let model = small_model(4);
        let a = star(&[0, 1, 2]);
        let mut nodes = a.nodes().to_vec();
        nodes[0].features = FeatureVector::new(vec![0.99, 0.01]).unwrap();
        let b = GraphInstance::new(nodes, a.edges().to_vec(), a.target(), a.label()).unwrap();
        let s = States::zeros(4, 3);
        let ra = readout(&a, &s, &model).unwrap();
        let rb = readout(&b, &s, &model).unwrap();
        assert_eq!(ra[3], rb[3]);
        assert_ne!(ra[0], rb[0]);
    }

    #[test]
    fn stub_prediction_matches_hand_evaluation() {
        let model = linear_stub();
        let g = two_cycle();
        let control = Convergence::new(1e-9, 200).unwrap();
        let p = predict(&g, &model, control).unwrap();
        let fp = fixed_point(&g, &model, control).unwrap();
        let a = fp.states.node(NodeId(0))[0];
        let hand = 1.0 / (1.0 + (-(0.1 + 0.3 * a + -0.7 * 0.25f64)).exp());
        assert_eq!(p, hand);
        let at_limit = 1.0 / (1.0 + (-(0.3 * 2.0 - 0.7 * 0.25 + 0.1f64)).exp());
        assert!((p - at_limit).abs() < 1e-9);
    }

    #[test]
    fn predict_is_a_pure_probability() {
        let model = small_model(6);
        let g = star(&[1, 0, 2]);
        let p1 = predict(&g, &model, Convergence::default()).unwrap();
        let p2 = predict(&g, &model, Convergence::default()).unwrap();
        assert_eq!(p1.to_bits(), p2.to_bits());
        assert!(p1 > 0.0 && p1 < 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        // a' = 2 a + 1 grows without bound
        let h = DenseNet::from_parts(
            vec![LayerSpec::new(3, 1, Activation::Identity)],
            vec![vec![0.0, 0.0, 1e200]],
            vec![vec![1.0]],
        )
        .unwrap();
        let g_net = DenseNet::from_parts(
            vec![LayerSpec::new(2, 1, Activation::Sigmoid)],
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
        )
        .unwrap();
        let model = GnnModel::new(h, g_net, 1, 1).unwrap();
        let err = fixed_point(&two_cycle(), &model, Convergence::new(1e-6, 10).unwrap()).unwrap_err();
        assert!(matches!(err, GnnError::Divergence { .. }));
    }

    #[test]
    fn dimension_checks() {
        let model = small_model(0);
        let g = two_cycle();
        assert!(matches!(
            fixed_point(&g, &model, Convergence::default()),
            Err(GnnError::Dimension { what: "graph features", .. })
        ));
        let g = star(&[0, 1, 2]);
        assert!(matches!(
            propagate_step(&g, &States::zeros(4, 2), &model),
            Err(GnnError::Dimension { what: "state", .. })
        ));
        assert!(Convergence::new(0.0, 5).is_err());
        assert!(Convergence::new(1e-3, 0).is_err());
        let bad_readout = DenseNet::init(&[LayerSpec::new(5, 1, Activation::Tanh)], 0).unwrap();
        assert_eq!(
            GnnModel::new(model.transition().clone(), bad_readout, 3, 2),
            Err(GnnError::ReadoutActivation)
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = small_model(12);
        let s = serde_json::to_string(&model).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["state_dim"], 3);
        assert_eq!(v["feature_dim"], 2);
        assert!(v["h_net"]["layers"].is_array());
        let back: GnnModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, model);
    }
}

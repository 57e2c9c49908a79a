use prr_gnn::gnn::{fixed_point, Convergence, GnnModel, GnnShape};
use prr_gnn::graph::{FeatureVector, GraphInstance, Node, NodeId, Role};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, d: usize) -> GraphInstance {
    let n = rng.gen_range(2..=6);
    let nodes = (0..n)
        .map(|i| Node {
            id: NodeId(i),
            role: Role::Nlr,
            features: FeatureVector::new((0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap(),
        })
        .collect();
    let mut edges: Vec<(NodeId, NodeId)> = (0..n).map(|i| (NodeId((i + 1) % n), NodeId(i))).collect();
    for a in 0..n {
        for b in 0..n {
            if a != b && (b + 1) % n != a && rng.gen_bool(0.5) {
                edges.push((NodeId(a), NodeId(b)));
            }
        }
    }
    GraphInstance::new(nodes, edges, NodeId(0), None).unwrap()
}

#[test]
fn scaled_weights_give_non_increasing_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..50u64 {
        let s = rng.gen_range(2..=4);
        let d = 3;
        let g = random_graph(&mut rng, d);
        let mut model = GnnModel::init(GnnShape::new(s, d), seed).unwrap();
        let c = 0.9 / (g.max_in_degree().max(1) * s) as f64;
        model.transition_mut().scale_weights(c);
        model.readout_net_mut().scale_weights(c);
        let fp = fixed_point(&g, &model, Convergence::new(1e-12, 200).unwrap()).unwrap();
        assert!(fp.converged, "seed {seed} did not converge");
        for w in fp.residuals.windows(2).skip(1) {
            assert!(w[1] <= w[0], "seed {seed}: residuals {:?}", fp.residuals);
        }
    }
}

#[test]
fn iteration_budget_is_respected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = random_graph(&mut rng, 2);
    let model = GnnModel::init(GnnShape::new(3, 2), 1).unwrap();
    for m in [1, 2, 7] {
        let fp = fixed_point(&g, &model, Convergence::new(1e-300, m).unwrap()).unwrap();
        assert_eq!(fp.iterations, m);
        assert_eq!(fp.residuals.len(), m);
        assert!(!fp.converged);
    }
}

use prr_gnn::dataset::{redundancy_filter, similarity, SequenceRecord};
use prr_gnn::eval::{confusion, metrics, roc_auc, roc_curve, trapezoid_area, ConfusionMatrix};
use prr_gnn::graph::{FeatureVector, GraphInstance, Node, NodeId, Role};
use prr_gnn::nn::{Activation, DenseNet, LayerSpec};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (0u64..200, 0u64..200, 0u64..200, 0u64..200)
        .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
        .prop_map(|(tp, fp, tn, fn_)| ConfusionMatrix::new(tp, fp, tn, fn_))
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    // scores on a coarse grid so ties are common
    prop::collection::vec((0u32..=20, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|x| x.1) && v.iter().any(|x| !x.1))
        .prop_map(|v| v.into_iter().map(|(s, y)| (s as f64 / 20.0, y)).unzip())
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn residues() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(b"ACDEFGHIKLMNPQRSTVWY".to_vec()), 3..40)
        .prop_map(|v| String::from_utf8(v).unwrap())
}

proptest! {
    #[test]
    fn mcc_matches_formula_and_symmetries(cm in matrix()) {
        let m = metrics(&cm).unwrap();
        let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        let want = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den.sqrt() };
        prop_assert!((m.mcc - want).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&m.mcc));

        let swapped = metrics(&ConfusionMatrix::new(cm.tn, cm.fn_, cm.tp, cm.fp)).unwrap();
        prop_assert!((swapped.mcc - m.mcc).abs() < 1e-12);
        let inverted = metrics(&ConfusionMatrix::new(cm.fn_, cm.tn, cm.fp, cm.tp)).unwrap();
        prop_assert!((inverted.mcc + m.mcc).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_weighted_sensitivity_and_specificity(cm in matrix()) {
        let m = metrics(&cm).unwrap();
        let (p, n) = (cm.positives() as f64, cm.negatives() as f64);
        let recombined = (m.sensitivity * p + m.specificity * n) / (p + n);
        prop_assert!((m.accuracy - recombined).abs() < 1e-12);
    }

    #[test]
    fn auc_agrees_with_pairs_and_trapezoid((scores, labels) in scored()) {
        let auc = roc_auc(&scores, &labels).unwrap();
        prop_assert!((auc - brute_auc(&scores, &labels)).abs() < 1e-12);
        let area = trapezoid_area(&roc_curve(&scores, &labels).unwrap());
        prop_assert!((auc - area).abs() < 1e-12);
    }

    #[test]
    fn raising_threshold_is_monotone((scores, labels) in scored(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = metrics(&confusion(&scores, &labels, lo).unwrap()).unwrap();
        let m_hi = metrics(&confusion(&scores, &labels, hi).unwrap()).unwrap();
        prop_assert!(m_hi.sensitivity <= m_lo.sensitivity);
        prop_assert!(m_hi.specificity >= m_lo.specificity);
    }

    #[test]
    fn redundancy_filter_invariants(seqs in prop::collection::vec(residues(), 1..25), t in 0.05f64..1.0) {
        let records: Vec<SequenceRecord> = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| SequenceRecord::new(format!("r{i}"), Role::NonPrr, s.clone()).unwrap())
            .collect();
        let kept = redundancy_filter(&records, t).unwrap();
        prop_assert!(!kept.is_empty());
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(similarity(a, b).unwrap() < t);
            }
        }
        // survivors keep their input order
        let positions: Vec<usize> = kept
            .iter()
            .map(|k| records.iter().position(|r| r.id() == k.id()).unwrap())
            .collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(redundancy_filter(&kept, t).unwrap(), kept);
    }

    #[test]
    fn graph_json_round_trips(n in 2usize..6, d in 1usize..4, bits in prop::collection::vec(any::<bool>(), 36), label in any::<Option<bool>>()) {
        let nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                id: NodeId(i),
                role: Role::FAMILIES[i % 5],
                features: FeatureVector::new((0..d).map(|j| (i * 7 + j) as f64 / 9.0).collect()).unwrap(),
            })
            .collect();
        let mut edges = vec![(NodeId(1), NodeId(0))];
        for a in 0..n {
            for b in 0..n {
                if a != b && (a, b) != (1, 0) && bits[a * 6 + b] {
                    edges.push((NodeId(a), NodeId(b)));
                }
            }
        }
        let g = GraphInstance::new(nodes, edges, NodeId(0), label).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: GraphInstance = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn dense_gradients_match_finite_differences(
        seed in any::<u64>(),
        d in 1usize..5,
        hidden in 1usize..6,
        x in prop::collection::vec(-1.5f64..1.5, 5),
        out_act in prop::sample::select(vec![Activation::Tanh, Activation::Sigmoid, Activation::Identity]),
    ) {
        let net = DenseNet::init(
            &[LayerSpec::new(d, hidden, Activation::Tanh), LayerSpec::new(hidden, 2, out_act)],
            seed,
        ).unwrap();
        let x = &x[..d];
        let upstream = [0.7, -1.3];
        let (_, trace) = net.forward(x).unwrap();
        let (in_grad, grads) = net.backward(&trace, &upstream).unwrap();
        let objective = |n: &DenseNet, x: &[f64]| {
            let y = n.eval(x).unwrap();
            y[0] * upstream[0] + y[1] * upstream[1]
        };
        let h = 1e-6;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
        for layer in 0..2 {
            for i in 0..net.weights()[layer].len() {
                let mut p = net.clone();
                p.weights_mut()[layer][i] += h;
                let mut m = net.clone();
                m.weights_mut()[layer][i] -= h;
                let numeric = (objective(&p, x) - objective(&m, x)) / (2.0 * h);
                prop_assert!(close(grads.weights[layer][i], numeric));
            }
        }
        for i in 0..d {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let numeric = (objective(&net, &xp) - objective(&net, &xm)) / (2.0 * h);
            prop_assert!(close(in_grad[i], numeric));
        }
    }
}

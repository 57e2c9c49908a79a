use prr_gnn::gnn::{fixed_point, GnnModel, GnnShape};
use prr_gnn::graph::{build_instance, FeatureVector, GraphInstance, Role, TopologyTemplate};
use prr_gnn::learn::{
    fnn_gradient, fnn_init, gnn_batch_loss, gnn_gradient, train, train_fnn_baseline, Hyperparams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Ten compositions dominated by residue 0 and ten dominated by residue 9.
fn clusters() -> Vec<(FeatureVector, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..20)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut f: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..0.02)).collect();
            f[if positive { 0 } else { 9 }] += 0.7;
            let total: f64 = f.iter().sum();
            f.iter_mut().for_each(|x| *x /= total);
            (FeatureVector::new(f).unwrap(), positive)
        })
        .collect()
}

fn uniform_prototypes() -> BTreeMap<Role, FeatureVector> {
    Role::FAMILIES
        .iter()
        .map(|&r| (r, FeatureVector::new(vec![0.05; 20]).unwrap()))
        .collect()
}

fn star_graphs(data: &[(FeatureVector, bool)]) -> Vec<GraphInstance> {
    let protos = uniform_prototypes();
    data.iter()
        .map(|(f, y)| build_instance(f, &protos, &TopologyTemplate::star(), Some(*y)).unwrap())
        .collect()
}

fn hp() -> Hyperparams {
    Hyperparams {
        alpha: 0.1,
        epochs: 200,
        target_metric: 0.95,
        ..Hyperparams::default()
    }
}

#[test]
fn separable_clusters_are_learned_within_200_epochs() {
    let data = clusters();
    // the hand rule f[0] > f[9] separates the set
    assert!(data.iter().all(|(f, y)| (f.as_slice()[0] > f.as_slice()[9]) == *y));

    let model = GnnModel::init(GnnShape::new(8, 20), 1).unwrap();
    let (_, history) = train(model, &star_graphs(&data), &hp()).unwrap();
    assert!(history.epochs.len() <= 200);
    assert!(history.last().unwrap().train_accuracy >= 0.95, "{:?}", history.last());

    let (_, history) = train_fnn_baseline(&data, &hp()).unwrap();
    assert!(history.last().unwrap().train_accuracy >= 0.95, "{:?}", history.last());
}

#[test]
fn small_steps_rarely_increase_the_loss() {
    let graphs = star_graphs(&clusters());
    let hp = Hyperparams {
        alpha: 1e-4,
        epochs: 200,
        target_metric: 1.0,
        ..Hyperparams::default()
    };
    let model = GnnModel::init(GnnShape::new(8, 20), 2).unwrap();
    let (_, history) = train(model, &graphs, &hp).unwrap();
    let increases = history.epochs.windows(2).filter(|w| w[1].loss > w[0].loss).count();
    assert!(increases * 20 <= history.epochs.len(), "{increases} increases");
}

#[test]
fn one_tiny_step_decreases_the_loss() {
    let graphs = star_graphs(&clusters());
    let hp = Hyperparams::default();
    for seed in 0..5 {
        let model = GnnModel::init(GnnShape::new(4, 20), seed).unwrap();
        let batch = gnn_gradient(&model, &graphs, &hp).unwrap();
        if batch.grads.sq_norm().sqrt() < 1e-10 {
            continue;
        }
        let mut stepped = model.clone();
        stepped.transition_mut().apply_step(&batch.grads.transition, 1e-6);
        stepped.readout_net_mut().apply_step(&batch.grads.readout, 1e-6);
        assert!(gnn_batch_loss(&stepped, &graphs, &hp).unwrap() < batch.loss);
    }

    let data = clusters();
    let net = fnn_init(20, 16, 3).unwrap();
    let batch = fnn_gradient(&net, &data, &hp).unwrap();
    let mut stepped = net.clone();
    stepped.apply_step(&batch.grads, 1e-6);
    assert!(fnn_gradient(&stepped, &data, &hp).unwrap().loss < batch.loss);
}

#[test]
fn three_feeder_star_gradient_matches_finite_differences() {
    let template = TopologyTemplate::new(vec![
        (Role::Tlr, Role::Candidate),
        (Role::Rlr, Role::Candidate),
        (Role::Nlr, Role::Candidate),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut random_fv = || FeatureVector::new((0..3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let protos: BTreeMap<Role, FeatureVector> =
        [Role::Tlr, Role::Rlr, Role::Nlr].into_iter().map(|r| (r, random_fv())).collect();
    let g = build_instance(&random_fv(), &protos, &template, Some(true)).unwrap();
    for k in 1..=5 {
        let model = GnnModel::init(GnnShape { state_dim: 2, feature_dim: 3, transition_hidden: 3, readout_hidden: 3 }, k as u64).unwrap();
        let hp = Hyperparams {
            max_iterations: k,
            beta: 1.0,
            mu: 0.4,
            ..Hyperparams::default()
        };
        let taken = fixed_point(&g, &model, hp.convergence()).unwrap().iterations;
        assert!(taken <= k);
        let batch = std::slice::from_ref(&g);
        let grads = gnn_gradient(&model, batch, &hp).unwrap().grads;
        for layer in 0..2 {
            for i in 0..model.transition().weights()[layer].len() {
                let loss_at = |delta: f64| {
                    let mut m = model.clone();
                    m.transition_mut().weights_mut()[layer][i] += delta;
                    gnn_batch_loss(&m, batch, &hp).unwrap()
                };
                let numeric = (loss_at(1e-5) - loss_at(-1e-5)) / 2e-5;
                let want = grads.transition.weights[layer][i];
                let rel = (want - numeric).abs() / want.abs().max(numeric.abs()).max(1e-5);
                assert!(rel < 1e-4, "K = {k}, h layer {layer} weight {i}: {want} vs {numeric}");
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let graphs = star_graphs(&clusters());
    let hp = Hyperparams { epochs: 20, ..hp() };
    let run = || train(GnnModel::init(GnnShape::new(8, 20), 9).unwrap(), &graphs, &hp).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    let losses = |h: &prr_gnn::TrainHistory| h.epochs.iter().map(|e| e.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&ha), losses(&hb));

    let data = clusters();
    let (x, _) = train_fnn_baseline(&data, &hp).unwrap();
    let (y, _) = train_fnn_baseline(&data, &hp).unwrap();
    assert_eq!(x, y);
}

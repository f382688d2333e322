use impfilter_core::ap::{super_sample, ApState, TrainingConfig};
use impfilter_core::baselines::{genie_decide, genie_probability, ClassDistribution};
use impfilter_core::datasets::{synth_gaussians, Dataset};
use impfilter_core::energy::EnergyParams;
use impfilter_core::filter::{euclidean_distance, FilterConfig, NodeState, ScoredEntry};
use impfilter_core::model::{Activation, LossKind, ModelConfig, ModelState, OptimizerConfig};
use impfilter_core::rng::stream;
use impfilter_core::simulator::classification_error;
use impfilter_core::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn model(sizes: Vec<usize>, seed: u64) -> ModelState {
    let mut cfg = ModelConfig::new(sizes);
    cfg.seed = seed;
    ModelState::init(cfg).unwrap()
}

/// A separating hyperplane found by the perceptron rule, if one exists
/// within `max_epochs`. Any returned `(w, b)` is checked by the caller.
fn perceptron(x: &Matrix, y: &[usize], max_epochs: usize) -> Option<(Vec<f64>, f64)> {
    let mut w = vec![0.0; x.cols()];
    let mut b = 0.0;
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (row, &label) in x.iter_rows().zip(y) {
            let t = if label == 1 { 1.0 } else { -1.0 };
            let margin: f64 = t * (row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b);
            if margin <= 0.0 {
                for (wi, xi) in w.iter_mut().zip(row) {
                    *wi += t * xi;
                }
                b += t;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return Some((w, b));
        }
    }
    None
}

#[test]
fn separable_toy_set_is_learned_exactly() {
    let mut rng = stream(4, 4);
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let centre = if i % 2 == 0 { -1.0 } else { 1.0 };
            vec![centre + rng.random_range(-0.6..0.6), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let (w, b) = perceptron(&x, &labels, 1000).expect("toy set must be separable");
    for (row, &label) in x.iter_rows().zip(&labels) {
        let side = row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
        assert_eq!(side > 0.0, label == 1);
    }

    let data = Dataset::new(x.clone(), labels.clone(), 2).unwrap();
    let mut ap = ApState::new(model(vec![2, 8, 2], 3), stream(4, 1));
    for id in 0..data.len() {
        ap.receive(0, data.sample(id), &data).unwrap();
    }
    let cfg = TrainingConfig {
        optimizer: OptimizerConfig::sgd(0.1),
        epochs: 200,
        batch_size: Some(8),
    };
    ap.train_round(&cfg).unwrap();
    assert_eq!(classification_error(&ap.model, &x, &labels).unwrap(), 0.0);
}

#[test]
fn convex_round_does_not_increase_loss() {
    let mut rng = stream(8, 8);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0)).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let data = Dataset::new(x.clone(), labels.clone(), 2).unwrap();

    let cfg = ModelConfig {
        layer_sizes: vec![2, 1],
        activation: Activation::Relu,
        dropout_rate: 0.0,
        loss: LossKind::MeanSquaredError,
        seed: 1,
    };
    let mut ap = ApState::new(ModelState::init(cfg).unwrap(), stream(8, 1));
    for id in 0..data.len() {
        ap.receive(0, data.sample(id), &data).unwrap();
    }
    let before = ap.model.loss(&ap.model.forward(&x).unwrap(), &labels).unwrap();
    let training = TrainingConfig {
        optimizer: OptimizerConfig::sgd(0.01),
        epochs: 1,
        batch_size: None,
    };
    ap.train_round(&training).unwrap();
    let after = ap.model.loss(&ap.model.forward(&x).unwrap(), &labels).unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn super_sample_matches_scalar_loop() {
    let mut rng = stream(2, 2);
    let vs: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.random_range(-9.0..9.0)).collect()).collect();
    let mean = super_sample(&vs).unwrap();
    for c in 0..4 {
        let mut acc = 0.0;
        for v in &vs {
            acc += v[c];
        }
        assert!((mean[c] - acc / 5.0).abs() < 1e-12);
    }
}

/// `clusters` groups of `per_cluster` nodes; node `k` sits in cluster
/// `k / per_cluster`. Each node delivers `b` samples around its centre.
struct Clustered {
    centres: Vec<Vec<f64>>,
    per_cluster: usize,
    data: Dataset,
    ap: ApState,
}

fn clustered(seed: u64, clusters: usize, per_cluster: usize, b: usize) -> Clustered {
    let mut rng = stream(seed, 31);
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| vec![rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)])
        .collect();
    let nodes = clusters * per_cluster;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for k in 0..nodes {
        for _ in 0..b {
            let c = &centres[k / per_cluster];
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![c[0] + 0.5 * dx, c[1] + 0.5 * dy]);
            labels.push(k % 2);
        }
    }
    let data = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
    let mut ap = ApState::new(model(vec![2, 4, 2], seed), stream(seed, 1));
    for id in 0..data.len() {
        ap.receive(id / b, data.sample(id), &data).unwrap();
    }
    ap.train_round(&TrainingConfig {
        optimizer: OptimizerConfig::sgd(0.0),
        epochs: 1,
        batch_size: None,
    })
    .unwrap();
    ap.score_current().unwrap();
    Clustered { centres, per_cluster, data, ap }
}

#[test]
fn feedback_comes_from_own_cluster() {
    let (b, capacity) = (4, 8);
    let c = clustered(1, 3, 2, b);
    for node in 0..6 {
        let feedback = c.ap.select_feedback(node, capacity, b);
        assert_eq!(feedback.len(), capacity);

        // Exhaustive sort of super-sample distances.
        let centre_of = |k: usize| {
            let rows: Vec<&[f64]> = (k * b..(k + 1) * b).map(|i| c.data.features().row(i)).collect();
            super_sample(&rows).unwrap()
        };
        let own = centre_of(node);
        let mut order: Vec<(f64, usize)> =
            (0..6).map(|k| (euclidean_distance(&own, &centre_of(k)).unwrap(), k)).collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut expected: Vec<usize> = order[..capacity / b]
            .iter()
            .flat_map(|&(_, k)| k * b..(k + 1) * b)
            .collect();
        expected.sort_unstable();

        let mut got: Vec<usize> = feedback
            .iter()
            .map(|e| (0..c.data.len()).find(|&i| c.data.features().row(i) == e.sample.as_slice()).unwrap())
            .collect();
        got.sort_unstable();
        assert_eq!(got, expected);
        assert!(got.iter().all(|&i| i / b / c.per_cluster == node / c.per_cluster));

        // The node's own group is delivered last, so it is newest.
        let own_ids: Vec<usize> = (node * b..(node + 1) * b).collect();
        let tail: Vec<usize> = feedback[capacity - b..]
            .iter()
            .map(|e| (0..c.data.len()).find(|&i| c.data.features().row(i) == e.sample.as_slice()).unwrap())
            .collect();
        assert_eq!(tail, own_ids);

        for e in &feedback {
            let idx = (0..c.data.len()).find(|&i| c.data.features().row(i) == e.sample.as_slice()).unwrap();
            let exact = c.ap.model.leverage_score(&e.sample, c.data.labels()[idx]).unwrap();
            assert_eq!(e.score, exact);
        }
    }
}

#[test]
fn proximity_feedback_is_tighter_than_random() {
    let (clusters, per_cluster, b, capacity) = (5, 2, 5, 10);
    let trials = 50;
    let mut tighter = 0;
    for seed in 0..trials {
        let c = clustered(100 + seed, clusters, per_cluster, b);
        let mut rng = stream(seed, 99);
        let node = rng.random_range(0..clusters * per_cluster);
        let centre = &c.centres[node / per_cluster];
        let fresh: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let dx: f64 = StandardNormal.sample(&mut rng);
                let dy: f64 = StandardNormal.sample(&mut rng);
                vec![centre[0] + 0.5 * dx, centre[1] + 0.5 * dy]
            })
            .collect();
        let spread = |entries: &[ScoredEntry]| {
            fresh
                .iter()
                .flat_map(|x| entries.iter().map(move |e| euclidean_distance(x, &e.sample).unwrap()))
                .fold(0.0f64, f64::max)
        };

        let chosen = c.ap.select_feedback(node, capacity, b);
        let groups = c.ap.super_samples();
        let mut random = Vec::new();
        let mut picks: Vec<usize> = (0..groups.len()).collect();
        for i in 0..capacity / b {
            let j = rng.random_range(i..picks.len());
            picks.swap(i, j);
            random.extend(groups[picks[i]].entries.iter().cloned());
        }
        if spread(&chosen) < spread(&random) {
            tighter += 1;
        }
    }
    assert!(tighter as f64 >= 0.9 * trials as f64, "{tighter}/{trials}");
}

#[test]
fn untrained_model_is_at_chance() {
    let classes = 3;
    let data = synth_gaussians(
        &[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]],
        &[1.0; 3],
        &[1.0 / 3.0; 3],
        3000,
        5,
    )
    .unwrap();
    let seeds = 300;
    let mean: f64 = (0..seeds)
        .map(|s| classification_error(&model(vec![2, 8, classes], s), data.features(), data.labels()).unwrap())
        .sum::<f64>()
        / seeds as f64;
    assert!((mean - (1.0 - 1.0 / classes as f64)).abs() < 0.03, "{mean}");
}

#[test]
fn midpoint_threshold_separates_distant_gaussians() {
    let d = synth_gaussians(&[vec![-3.0], vec![3.0]], &[1.0, 1.0], &[0.5, 0.5], 10_000, 3).unwrap();
    let wrong = d
        .features()
        .iter_rows()
        .zip(d.labels())
        .filter(|(x, &y)| usize::from(x[0] > 0.0) != y)
        .count();
    // Φ(−3) ≈ 0.00135.
    assert!((wrong as f64 / 1e4) < 0.01, "{wrong}");
}

#[test]
fn flat_buffer_transmits_at_rate() {
    for rate in [0.1, 0.3, 0.5] {
        let cfg = FilterConfig {
            beta_min: 0.0,
            beta_max: 0.0,
            target_rate: rate,
            ..FilterConfig::default()
        };
        let mut rng = stream(6, 6);
        let initial: Vec<Vec<f64>> = (0..cfg.buffer_size).map(|_| vec![rng.random(), rng.random()]).collect();
        let mut node = NodeState::new(initial, cfg.buffer_size, stream(6, 7), EnergyParams::default()).unwrap();
        let n = 100_000;
        let sent = (0..n)
            .filter(|_| {
                let x = [rng.random::<f64>(), rng.random::<f64>()];
                node.decide_transmit(&x, &cfg).unwrap()
            })
            .count();
        assert!((sent as f64 / n as f64 - rate).abs() < 0.01, "R={rate}: {sent}");
    }
}

#[test]
fn genie_rate_and_weights() {
    let dist = ClassDistribution::new(vec![0.7, 0.3]).unwrap();
    let total: f64 = (0..2).map(|c| genie_probability(c, &dist).unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let rate = 0.2;
    let mut rng = stream(7, 7);
    let n = 100_000;
    let mut sent = 0;
    for _ in 0..n {
        let label = usize::from(rng.random::<f64>() >= 0.7);
        if genie_decide(&mut rng, label, &dist, rate).unwrap() {
            sent += 1;
        }
    }
    let realized = sent as f64 / n as f64;
    assert!((realized - rate).abs() / rate < 0.02, "{realized}");
}

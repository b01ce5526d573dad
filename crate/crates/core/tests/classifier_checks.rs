use noise_entropy::classifier::{
    gradient, loss, predict_score, train, train_vectors, LinearModel, TrainConfig,
};
use noise_entropy::entropy::{EntropyParams, EntropyTensor, RangeMode};
use noise_entropy::eval::auc;
use noise_entropy::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss written out independently: standardise, logistic, mean BCE, L2.
fn reference_loss(
    weights: &[f64],
    bias: f64,
    mean: &[f32],
    std: &[f32],
    batch: &[Vec<f32>],
    labels: &[Label],
    l2: f64,
) -> f64 {
    let mut total = 0.0;
    for (x, y) in batch.iter().zip(labels) {
        let mut s = bias;
        for i in 0..x.len() {
            s += weights[i] * (x[i] as f64 - mean[i] as f64) / std[i] as f64;
        }
        let p = 1.0 / (1.0 + (-s).exp());
        let y = if *y == Label::Generated { 1.0 } else { 0.0 };
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    total / batch.len() as f64 + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

fn random_case(seed: u64) -> (LinearModel, Vec<Vec<f32>>, Vec<Label>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..12);
    let m = rng.random_range(1..9);
    let model = LinearModel::new(
        (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        rng.random_range(-1.0..1.0),
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        (0..dim).map(|_| rng.random_range(0.5..2.0)).collect(),
        None,
        seed,
    )
    .unwrap();
    let batch = (0..m)
        .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let labels = (0..m)
        .map(|_| if rng.random_bool(0.5) { Label::Generated } else { Label::Real })
        .collect();
    (model, batch, labels, rng.random_range(0.0..0.1))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let eps = 1e-4;
    for seed in 0..20 {
        let (model, batch, labels, l2) = random_case(seed);
        let refs: Vec<&[f32]> = batch.iter().map(|v| v.as_slice()).collect();
        let g = gradient(&model, &refs, &labels, l2).unwrap();
        let w: Vec<f64> = model.weights().iter().map(|&v| v as f64).collect();
        let b = model.bias() as f64;
        let f = |w: &[f64], b: f64| {
            reference_loss(w, b, model.feat_mean(), model.feat_std(), &batch, &labels, l2)
        };
        for i in 0..=w.len() {
            let fd = if i < w.len() {
                let mut up = w.clone();
                let mut down = w.clone();
                up[i] += eps;
                down[i] -= eps;
                (f(&up, b) - f(&down, b)) / (2.0 * eps)
            } else {
                (f(&w, b + eps) - f(&w, b - eps)) / (2.0 * eps)
            };
            assert!(rel_err(g[i], fd) < 1e-4, "seed {seed} coord {i}: {} vs {fd}", g[i]);
        }
        let crate_loss = loss(&model, &refs, &labels, l2).unwrap();
        assert!((crate_loss - f(&w, b)).abs() < 1e-10);
    }
}

#[test]
fn gradient_vanishes_at_a_fit_point() {
    let model = LinearModel::new(vec![20.0], 0.0, vec![0.0], vec![1.0], None, 0).unwrap();
    let x = [1.0f32];
    let l2 = 1e-4;
    let g = gradient(&model, &[&x], &[Label::Generated], l2).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < l2 * 20.0 + 1e-6, "{norm}");
}

#[test]
fn duplicated_batch_gives_same_gradient() {
    let (model, batch, labels, l2) = random_case(5);
    let refs: Vec<&[f32]> = batch.iter().map(|v| v.as_slice()).collect();
    let doubled: Vec<&[f32]> = refs.iter().chain(refs.iter()).copied().collect();
    let doubled_labels: Vec<Label> = labels.iter().chain(labels.iter()).copied().collect();
    let a = gradient(&model, &refs, &labels, l2).unwrap();
    let b = gradient(&model, &doubled, &doubled_labels, l2).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
    assert!(gradient(&model, &[], &[], l2).is_err());
}

fn params(n: usize) -> EntropyParams {
    EntropyParams {
        canvas: 8 * n,
        n,
        bins: 8,
        range_mode: RangeMode::PerChannel,
    }
}

/// Two noisy clusters in 3·n² dimensions.
fn clusters(seed: u64, count: usize, n: usize) -> (Vec<EntropyTensor>, Vec<Label>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 3 * n * n;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for i in 0..count {
        let label = if i % 2 == 0 { Label::Real } else { Label::Generated };
        let centre = if label == Label::Real { 2.0 } else { 2.6 };
        let values = (0..dim)
            .map(|_| centre + rng.random_range(-0.8f32..0.8))
            .collect();
        feats.push(EntropyTensor::new(n, values).unwrap());
        labels.push(label);
    }
    (feats, labels)
}

#[test]
fn same_seed_gives_identical_weights() {
    let (f, l) = clusters(1, 40, 2);
    let cfg = TrainConfig {
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&f, &l, &cfg, &params(2)).unwrap();
    let b = train(&f, &l, &cfg, &params(2)).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.loss_history, b.loss_history);
}

#[test]
fn flipped_labels_reverse_the_ranking() {
    let (f, l) = clusters(2, 60, 2);
    let cfg = TrainConfig {
        seed: 3,
        epochs: 80,
        ..TrainConfig::default()
    };
    let flipped: Vec<Label> = l.iter().map(|x| x.flipped()).collect();
    let a = train(&f, &l, &cfg, &params(2)).unwrap().model;
    let b = train(&f, &flipped, &cfg, &params(2)).unwrap().model;
    let sa: Vec<f64> = f.iter().map(|t| predict_score(&a, t).unwrap()).collect();
    let sb: Vec<f64> = f.iter().map(|t| predict_score(&b, t).unwrap()).collect();
    let auc_a = auc(&sa, &l).unwrap();
    let auc_b = auc(&sb, &l).unwrap();
    assert!(auc_a > 0.9, "{auc_a}");
    assert!((auc_a - (1.0 - auc_b)).abs() < 0.02, "{auc_a} vs {auc_b}");
}

#[test]
fn loss_never_increases_across_epochs() {
    let (f, l) = clusters(4, 30, 1);
    for lr in [0.001, 0.005, 0.01] {
        let cfg = TrainConfig {
            learning_rate: lr,
            epochs: 40,
            batch_size: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let out = train(&f, &l, &cfg, &params(1)).unwrap();
        for w in out.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "lr {lr}: {w:?}");
        }
        assert!(out.final_loss().is_finite());
    }
}

#[test]
fn huge_learning_rate_triggers_rollback() {
    let (f, l) = clusters(6, 30, 1);
    let cfg = TrainConfig {
        learning_rate: 500.0,
        epochs: 10,
        batch_size: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&f, &l, &cfg, &params(1)).unwrap();
    assert!(!out.rejected_epochs.is_empty());
    assert!(out.final_learning_rate < 500.0);
    for w in out.loss_history.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(out.log_text().contains("rejected"));
}

#[test]
fn stored_standardiser_centres_training_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rows: Vec<Vec<f32>> = (0..50)
        .map(|_| vec![rng.random_range(0.0..5.0), 7.0, rng.random_range(-1.0..1.0)])
        .collect();
    let labels: Vec<Label> = (0..50)
        .map(|i| if i < 25 { Label::Real } else { Label::Generated })
        .collect();
    let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
    let model = train_vectors(&refs, &labels, &TrainConfig::default(), None)
        .unwrap()
        .model;
    let z: Vec<Vec<f64>> = refs.iter().map(|r| model.standardize(r).unwrap()).collect();
    for d in [0, 2] {
        let mean = z.iter().map(|r| r[d]).sum::<f64>() / 50.0;
        let std = (z.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        assert!(mean.abs() < 1e-6, "dim {d} mean {mean}");
        assert!((std - 1.0).abs() < 1e-6, "dim {d} std {std}");
    }
    assert_eq!(model.feat_std()[1], 1.0);
}

#[test]
fn prediction_does_not_depend_on_other_examples_order() {
    let (f, l) = clusters(12, 20, 1);
    let model = train(&f, &l, &TrainConfig::default(), &params(1)).unwrap().model;
    let forward: Vec<f64> = f.iter().map(|t| predict_score(&model, t).unwrap()).collect();
    let mut backward: Vec<f64> = f.iter().rev().map(|t| predict_score(&model, t).unwrap()).collect();
    backward.reverse();
    assert_eq!(forward, backward);
}

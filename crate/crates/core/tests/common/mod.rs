#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcaps::autodiff::{finite_difference_gradient, max_relative_error};
use xcaps::capsules::{route, CapsuleConfig};
use xcaps::embeddings::Vocab;
use xcaps::features::FEATURE_COUNT;
use xcaps::model::{EmbeddingMode, Model, ModelConfig, Variant};
use xcaps::params::Binder;
use xcaps::data::NewsExample;
use xcaps::features::FeatureExtractor;
use xcaps::model::EncodedExample;
use xcaps::synthetic::{separable_examples, SyntheticConfig};
use xcaps::train::TrainConfig;
use xcaps::{Graph, Result, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-6;

pub type Build = fn(&mut Graph<'_>, &[Var], &mut ChaCha8Rng) -> Result<Var>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, lo, hi, rng)
}

/// Reduces an op output to a scalar with fixed random weights.
pub fn project(g: &mut Graph<'_>, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let n = g.value(x).len();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    g.weighted_sum(x, w)
}

/// Max relative error between backprop and central differences over every
/// input of `build`. The projection weights are re-drawn from `seed` on
/// every evaluation, so all evaluations see the same function.
pub fn graph_error(inputs: &[Tensor], seed: u64, build: Build) -> f64 {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone(), false)).collect();
        let loss = build(&mut g, &vars, &mut rng(seed)).unwrap();
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let loss = build(&mut g, &vars, &mut rng(seed)).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.dense(*var);
        let numeric = finite_difference_gradient(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[k] = probe.clone();
                eval(&xs)
            },
            &inputs[k],
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, numeric.data(), FD_FLOOR));
    }
    worst
}

pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Inputs drawn from `[lo, hi]`.
    pub range: (f64, f64),
    pub build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], build: Build) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        range: (-1.0, 1.0),
        build,
    }
}

pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("conv1d", &[&[5, 3], &[2, 2, 3], &[2]], |g, v, r| {
            let y = g.conv1d(v[0], v[1], v[2])?;
            project(g, y, r)
        }),
        case("global_max_pool", &[&[4, 3]], |g, v, r| {
            let y = g.global_max_pool(v[0])?;
            project(g, y, r)
        }),
        case("leaky_relu", &[&[6]], |g, v, r| {
            let y = g.leaky_relu(v[0], 0.1);
            project(g, y, r)
        }),
        case("relu", &[&[6]], |g, v, r| {
            let y = g.relu(v[0]);
            project(g, y, r)
        }),
        case("dense", &[&[4], &[3, 4], &[3]], |g, v, r| {
            let y = g.dense(v[0], v[1], v[2])?;
            project(g, y, r)
        }),
        case("sigmoid", &[&[5]], |g, v, r| {
            let y = g.sigmoid(v[0]);
            project(g, y, r)
        }),
        case("softmax", &[&[2, 4]], |g, v, r| {
            let y = g.softmax(v[0]);
            project(g, y, r)
        }),
        case("dropout", &[&[8]], |g, v, r| {
            let y = g.dropout(v[0], 0.5, true, 17)?;
            project(g, y, r)
        }),
        case("concat", &[&[3], &[2, 2]], |g, v, r| {
            let y = g.concat(&[v[0], v[1]])?;
            project(g, y, r)
        }),
        case("sum", &[&[4]], |g, v, _| {
            let s = g.sum(v[0]);
            let sq = g.squash(s);
            Ok(g.sum(sq))
        }),
        case("add", &[&[3], &[3]], |g, v, r| {
            let y = g.add(v[0], v[1])?;
            project(g, y, r)
        }),
        case("scale", &[&[4]], |g, v, r| {
            let y = g.scale(v[0], -2.5);
            project(g, y, r)
        }),
        case("reshape", &[&[2, 3]], |g, v, r| {
            let y = g.reshape(v[0], &[3, 2])?;
            let y = g.softmax(y);
            project(g, y, r)
        }),
        case("squash", &[&[3, 4]], |g, v, r| {
            let y = g.squash(v[0]);
            project(g, y, r)
        }),
        case("gather_rows", &[&[4, 3]], |g, v, r| {
            let y = g.gather_rows(v[0], vec![Some(2), None, Some(0), Some(2)])?;
            project(g, y, r)
        }),
        case("capsule_transform", &[&[3, 2], &[2, 2, 3, 2]], |g, v, r| {
            let y = g.capsule_transform(v[0], v[1], vec![0, 1, 1])?;
            project(g, y, r)
        }),
        case("route_sum", &[&[1, 3, 2], &[1, 3, 2, 4]], |g, v, r| {
            let c = g.softmax(v[0]);
            let y = g.route_sum(c, v[1])?;
            project(g, y, r)
        }),
        case("route_agree", &[&[1, 3, 2, 4], &[1, 2, 4]], |g, v, r| {
            let y = g.route_agree(v[0], v[1])?;
            project(g, y, r)
        }),
        case("routing_r1", &[&[2, 3, 2, 4]], |g, v, r| {
            let y = route(g, v[0], 1)?.poses;
            project(g, y, r)
        }),
        case("routing_r2", &[&[2, 3, 2, 4]], |g, v, r| {
            let y = route(g, v[0], 2)?.poses;
            project(g, y, r)
        }),
        case("routing_r3", &[&[2, 3, 2, 4]], |g, v, r| {
            let y = route(g, v[0], 3)?.poses;
            project(g, y, r)
        }),
        case("cross_entropy", &[&[5]], |g, v, _| g.cross_entropy(v[0], 2)),
    ];
    cases.push(OpCase {
        name: "margin_loss",
        shapes: vec![vec![4]],
        range: (0.15, 0.85),
        build: |g, v, _| g.margin_loss(v[0], 1, 0.9, 0.1, 0.5),
    });
    cases
}

/// Worst error of one op case over `seeds` random draws.
pub fn op_error(case: &OpCase, seeds: std::ops::Range<u64>) -> f64 {
    seeds
        .map(|seed| {
            let mut r = rng(seed);
            let inputs: Vec<Tensor> = case
                .shapes
                .iter()
                .map(|s| uniform(s, case.range.0, case.range.1, &mut r))
                .collect();
            graph_error(&inputs, seed, case.build)
        })
        .fold(0.0, f64::max)
}

pub fn tiny_capsules(r: usize) -> CapsuleConfig {
    CapsuleConfig {
        conv_filters: 3,
        conv_width: 2,
        primary_channels: 2,
        primary_dim: 3,
        conv_caps_channels: 2,
        conv_caps_dim: 3,
        conv_caps_window: 2,
        class_caps: 2,
        class_caps_dim: 4,
        routing_iterations: r,
        leaky_alpha: 0.01,
    }
}

pub fn tiny_config(variant: Variant, r: usize, num_classes: usize) -> ModelConfig {
    ModelConfig {
        variant,
        num_classes,
        embedding_mode: EmbeddingMode::StaticTrainable,
        embedding_dim: 3,
        max_len: 5,
        filter_widths: vec![2, 3],
        filters_per_width: 2,
        capsules: tiny_capsules(r),
        mlp_sizes: vec![FEATURE_COUNT, 5, 4],
        head_hidden: 4,
        dropout: 0.3,
        seed: 11 + r as u64,
        ..ModelConfig::default()
    }
}

/// Tiny model with every tensor (biases included) drawn at random, so no
/// unit sits exactly on a ReLU kink.
pub fn randomized_model(cfg: ModelConfig, seed: u64) -> Model {
    let vocab = Vocab::new(vec!["a".into(), "b".into()]);
    let mut model = Model::build_with_vocab(cfg, vocab).unwrap();
    let mut r = rng(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v = r.gen_range(-0.6..0.6);
        }
    }
    model
}

fn model_loss(model: &Model, embedded: &Tensor, features: Option<&[f64; FEATURE_COUNT]>, target: usize, dropout: Option<u64>) -> f64 {
    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, false);
    let out = model.forward_graph(&mut g, &mut b, embedded.clone(), features, false, dropout).unwrap();
    let loss = model.loss(&mut g, &out, target).unwrap();
    g.value(loss).item()
}

/// Max relative error of the full-model gradient, over every parameter
/// tensor and both inputs.
pub fn model_error(model: &Model, seed: u64, dropout: Option<u64>) -> f64 {
    let mut r = rng(seed);
    let cfg = &model.config;
    let embedded = uniform(&[cfg.max_len, cfg.embedding_dim], -1.0, 1.0, &mut r);
    let features: Option<[f64; FEATURE_COUNT]> = (cfg.variant == Variant::MlpCapsNet).then(|| {
        let mut f = [0.0; FEATURE_COUNT];
        f.iter_mut().for_each(|v| *v = r.gen_range(-1.5..1.5));
        f
    });
    let target = r.gen_range(0..cfg.num_classes);

    let mut g = Graph::new();
    let mut b = Binder::new(&model.params, true);
    let out = model
        .forward_graph(&mut g, &mut b, embedded.clone(), features.as_ref(), true, dropout)
        .unwrap();
    let loss = model.loss(&mut g, &out, target).unwrap();
    let grads = g.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (id, var) in b.bound() {
        let analytic = grads.dense(var);
        let numeric = finite_difference_gradient(
            |probe| {
                let mut m = model.clone();
                *m.params.get_mut(id) = probe.clone();
                model_loss(&m, &embedded, features.as_ref(), target, dropout)
            },
            model.params.get(id),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, numeric.data(), FD_FLOOR));
    }
    let analytic = grads.dense(out.embedded);
    let numeric = finite_difference_gradient(
        |probe| model_loss(model, probe, features.as_ref(), target, dropout),
        &embedded,
        FD_STEP,
    );
    worst = worst.max(max_relative_error(&analytic, numeric.data(), FD_FLOOR));
    if let (Some(fv), Some(f)) = (out.features, features) {
        let analytic = grads.dense(fv);
        let numeric = finite_difference_gradient(
            |probe| {
                let mut p = [0.0; FEATURE_COUNT];
                p.copy_from_slice(probe.data());
                model_loss(model, &embedded, Some(&p), target, dropout)
            },
            &Tensor::vector(f.to_vec()),
            FD_STEP,
        );
        worst = worst.max(max_relative_error(&analytic, numeric.data(), FD_FLOOR));
    }
    worst
}

pub const ROUTING_TOL: f64 = 1e-9;

/// Checks one routing run on `N_in×N_out×D` predictions: every coupling row
/// of every iteration sums to one, every output length is below one, and a
/// single iteration equals squashing the plain average of the predictions.
pub fn routing_violation(predictions: &Tensor, r: usize) -> Option<String> {
    let state = xcaps::capsules::dynamic_routing(predictions, r).ok()?;
    let (n_in, n_out, d) = (predictions.shape()[0], predictions.shape()[1], predictions.shape()[2]);
    for (it, c) in state.coupling_history.iter().enumerate() {
        for i in 0..n_in {
            let s: f64 = c.row(i).iter().sum();
            if (s - 1.0).abs() > ROUTING_TOL {
                return Some(format!("iteration {it} row {i} couplings sum to {s}"));
            }
        }
    }
    for (j, len) in state.output.lengths().into_iter().enumerate() {
        if len >= 1.0 || !len.is_finite() {
            return Some(format!("output capsule {j} has length {len}"));
        }
    }
    if r == 1 {
        for j in 0..n_out {
            let mut s = vec![0.0; d];
            for i in 0..n_in {
                for (k, v) in s.iter_mut().enumerate() {
                    *v += predictions.data()[(i * n_out + j) * d + k] / n_out as f64;
                }
            }
            let expected = xcaps::capsules::squash(&s);
            for (a, b) in state.output.pose(j).iter().zip(&expected) {
                if (a - b).abs() > ROUTING_TOL {
                    return Some(format!("single iteration pose {j} is {a}, uniform squash gives {b}"));
                }
            }
        }
    }
    None
}

/// Accuracy and per-class `(precision, recall, f1)` recounted from the pairs.
pub fn brute_force_metrics(preds: &[usize], labels: &[usize], n: usize) -> (f64, Vec<(f64, f64, f64)>) {
    let correct = preds.iter().zip(labels).filter(|(p, t)| p == t).count();
    let per_class = (0..n)
        .map(|c| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (&p, &t) in preds.iter().zip(labels) {
                match (p == c, t == c) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
            (p, r, f)
        })
        .collect();
    (correct as f64 / preds.len() as f64, per_class)
}

/// Float tolerance between the report's ratios and the recount; the two
/// evaluate the same fractions through different expressions.
pub const METRIC_TOL: f64 = 1e-15;

/// `n×n` counts indexed `[truth][predicted]`.
pub fn brute_force_confusion(preds: &[usize], labels: &[usize], n: usize) -> Vec<Vec<u64>> {
    (0..n)
        .map(|t| {
            (0..n)
                .map(|p| preds.iter().zip(labels).filter(|&(&x, &y)| x == p && y == t).count() as u64)
                .collect()
        })
        .collect()
}

/// `None` when the report's confusion matrix equals the recount exactly,
/// otherwise the first differing cell.
pub fn confusion_mismatch(preds: &[usize], labels: &[usize], n: usize) -> Option<(usize, usize)> {
    let m = xcaps::metrics::ConfusionMatrix::from_pairs(preds, labels, n).unwrap();
    let brute = brute_force_confusion(preds, labels, n);
    (0..n).flat_map(|t| (0..n).map(move |p| (t, p))).find(|&(t, p)| m.get(t, p) != brute[t][p])
}

/// Largest gap between a report and the recount, over every reported ratio.
pub fn metric_gap(preds: &[usize], labels: &[usize], n: usize) -> f64 {
    let names: Vec<String> = (0..n).map(|c| format!("c{c}")).collect();
    let report = xcaps::metrics::evaluate_predictions(preds, labels, &names).unwrap();
    let (acc, per_class) = brute_force_metrics(preds, labels, n);
    let mut gap = (report.accuracy - acc).abs();
    for (m, (p, r, f)) in report.per_class.iter().zip(&per_class) {
        gap = gap.max((m.precision - p).abs()).max((m.recall - r).abs()).max((m.f1 - f).abs());
    }
    let macro_f1 = per_class.iter().map(|x| x.2).sum::<f64>() / n as f64;
    let headline = if n == 2 { per_class[1].2 } else { macro_f1 };
    gap.max((report.f1 - headline).abs())
}

/// Margin loss recomputed from its definition.
pub fn margin_oracle(a: &[f64], target: usize) -> f64 {
    a.iter()
        .enumerate()
        .map(|(k, &v)| {
            if k == target {
                (0.9 - v).max(0.0).powi(2)
            } else {
                0.5 * (v - 0.1).max(0.0).powi(2)
            }
        })
        .sum()
}

/// Model small enough to overfit 64 separable examples in seconds.
pub fn small_config(variant: Variant, num_classes: usize, r: usize) -> ModelConfig {
    ModelConfig {
        variant,
        num_classes,
        embedding_dim: 16,
        max_len: 16,
        filter_widths: vec![2, 3, 4],
        filters_per_width: 16,
        capsules: CapsuleConfig {
            conv_filters: 16,
            conv_width: 3,
            primary_channels: 4,
            primary_dim: 4,
            conv_caps_channels: 4,
            conv_caps_dim: 4,
            conv_caps_window: 3,
            class_caps: 2,
            class_caps_dim: 8,
            routing_iterations: r,
            leaky_alpha: 0.01,
        },
        mlp_sizes: vec![FEATURE_COUNT, 16, 8],
        head_hidden: 16,
        dropout: 0.2,
        seed: 5,
        ..ModelConfig::default()
    }
}

pub fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 200,
        learning_rate: 0.01,
        patience: 200,
        seed,
        ..TrainConfig::default()
    }
}

pub fn synthetic(num_classes: usize, examples: usize, seed: u64) -> Vec<NewsExample> {
    separable_examples(&SyntheticConfig {
        examples,
        num_classes,
        length: 12,
        seed,
        ..SyntheticConfig::default()
    })
}

/// Model with a vocabulary of `train` and features fitted on it.
pub fn fitted_model(cfg: ModelConfig, train: &[NewsExample]) -> Model {
    let docs: Vec<Vec<String>> = train.iter().map(|e| xcaps::features::tokenize(&e.text)).collect();
    let vocab = Vocab::from_corpus(docs.iter().map(Vec::as_slice), 1);
    let mut model = Model::build_with_vocab(cfg, vocab).unwrap();
    model.fit_features(train, &FeatureExtractor::default()).unwrap();
    model
}

pub fn encode_all(model: &Model, examples: &[NewsExample]) -> Vec<EncodedExample> {
    let extractor = FeatureExtractor::default();
    examples.iter().map(|e| model.encode(e, &extractor, None).unwrap()).collect()
}

pub fn class_names(n: usize) -> Vec<String> {
    match n {
        2 => xcaps::data::DatasetKind::BinaryLong.class_names(),
        6 => xcaps::data::DatasetKind::MulticlassShort.class_names(),
        _ => (0..n).map(|c| format!("c{c}")).collect(),
    }
}

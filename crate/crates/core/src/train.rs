//! Mini-batch training with early stopping, and batch evaluation.
//!
//! Per-example gradients within a batch are computed independently (in
//! parallel when enabled) and summed in example order, so a run is
//! reproducible bit-for-bit for a given seed regardless of thread count.
//! Parameters are rounded to f32 after every update; the weights that are
//! evaluated are exactly the ones a checkpoint stores.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::config::parse_value;
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::{argmax, EncodedExample, Model, Prediction, SequenceInput};
use crate::parallel::Execution;
use crate::params::{Binder, ParamId, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer {s:?}"))),
        }
    }
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub execution: Execution,
    /// Stop as soon as the validation score reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 50,
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 5,
            seed: 0,
            shuffle: true,
            execution: Execution::default(),
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            problems.push(format!("betas must be in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.epsilon <= 0.0 {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        [
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("optimizer", self.optimizer.as_str().to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("execution", self.execution.as_str().to_string()),
            ("stop_at", self.stop_at.map(|v| v.to_string()).unwrap_or_default()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "shuffle" => self.shuffle = parse_value(key, value)?,
            "execution" => self.execution = value.parse()?,
            "stop_at" => {
                self.stop_at = match value.trim() {
                    "" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            _ => return Err(Error::Config(format!("unknown training setting {key:?}"))),
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for one flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer over every tensor of a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig, params: &ParamSet) -> Self {
        let states = match cfg.optimizer {
            OptimizerKind::Adam => params.iter().map(|(_, _, t)| AdamState::new(t.len())).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            states,
        }
    }

    /// Applies one update; `grads[i]` belongs to parameter `i`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>]) {
        let ids: Vec<ParamId> = params.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let p = params.get_mut(id).data_mut();
            match self.kind {
                OptimizerKind::Adam => {
                    adam_step(p, g, &mut self.states[id.index()], self.lr, self.beta1, self.beta2, self.eps)
                }
                OptimizerKind::Sgd => p.iter_mut().zip(g).for_each(|(p, g)| *p -= self.lr * g),
            }
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Loss and gradients of one example.
#[derive(Clone, Debug)]
pub struct ExampleGradient {
    pub loss: f64,
    pub prediction: usize,
    /// Dense gradient per parameter, in parameter order; the embedding table
    /// entry stays empty and its rows come in `embedding_rows`.
    pub params: Vec<Vec<f64>>,
    pub embedding_rows: Vec<(usize, Vec<f64>)>,
}

/// Forward and backward pass for one example in training mode.
pub fn example_gradient(model: &Model, example: &EncodedExample, dropout_seed: Option<u64>) -> Result<ExampleGradient> {
    let embedded = model.embed(example);
    let d = embedded.dim();
    let mut graph = Graph::new();
    let mut binder = Binder::new(&model.params, true);
    let out = model.forward_graph(
        &mut graph,
        &mut binder,
        embedded.matrix,
        example.features.as_ref(),
        true,
        dropout_seed,
    )?;
    let prediction = argmax(graph.value(out.activations).data());
    let loss = model.loss(&mut graph, &out, example.label)?;
    let loss_value = graph.value(loss).item();
    let mut grads = graph.backward(loss)?;

    let mut params: Vec<Vec<f64>> = vec![Vec::new(); model.params.len()];
    for (id, var) in binder.bound() {
        params[id.index()] = grads.take(var).unwrap_or_else(|| vec![0.0; model.params.get(id).len()]);
    }
    let mut embedding_rows = Vec::new();
    if let (Some(_), SequenceInput::Rows(rows)) = (model.embedding_param(), &example.sequence) {
        if let Some(g) = grads.take(out.embedded) {
            let pad = model.vocab.as_ref().map(|v| v.pad());
            for (pos, &row) in rows.iter().enumerate() {
                if Some(row) != pad {
                    embedding_rows.push((row, g[pos * d..(pos + 1) * d].to_vec()));
                }
            }
        }
    }
    Ok(ExampleGradient {
        loss: loss_value,
        prediction,
        params,
        embedding_rows,
    })
}

/// Mean loss and mean gradient over a batch, summed in example order.
pub fn batch_gradient(
    model: &Model,
    batch: &[&EncodedExample],
    seeds: &[Option<u64>],
    execution: Execution,
) -> Result<(f64, usize, Vec<Vec<f64>>)> {
    let per_example = execution.try_map(batch, |i, ex| example_gradient(model, ex, seeds[i]))?;
    let scale = 1.0 / batch.len() as f64;
    let mut total: Vec<Vec<f64>> = model.params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
    let mut loss = 0.0;
    let mut correct = 0;
    let embed = model.embedding_param();
    let d = model.config.embedding_dim;
    for (g, ex) in per_example.iter().zip(batch) {
        loss += g.loss;
        correct += usize::from(g.prediction == ex.label);
        for (acc, part) in total.iter_mut().zip(&g.params) {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
        if let Some(id) = embed {
            let table = &mut total[id.index()];
            for (row, grad) in &g.embedding_rows {
                for (a, p) in table[row * d..(row + 1) * d].iter_mut().zip(grad) {
                    *a += p;
                }
            }
        }
    }
    for v in total.iter_mut().flatten() {
        *v *= scale;
    }
    Ok((loss * scale, correct, total))
}

/// Inference-mode predictions, in input order.
pub fn predict_all(model: &Model, data: &[EncodedExample], execution: Execution) -> Result<Vec<Prediction>> {
    execution.try_map(data, |_, ex| model.predict_encoded(ex))
}

/// Metrics of `model` on `data`. Work is split into shards whose confusion
/// matrices are merged.
pub fn evaluate(model: &Model, data: &[EncodedExample], class_names: &[String], execution: Execution) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    const SHARD: usize = 32;
    let shards: Vec<&[EncodedExample]> = data.chunks(SHARD).collect();
    let parts = execution.try_map(&shards, |_, shard| {
        let mut m = ConfusionMatrix::new(class_names.len());
        for ex in shard.iter() {
            m.add(ex.label, model.predict_encoded(ex)?.label)?;
        }
        Ok(m)
    })?;
    let mut confusion = ConfusionMatrix::new(class_names.len());
    for p in &parts {
        confusion.merge(p)?;
    }
    MetricsReport::from_confusion(confusion, class_names)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode (dropout) predictions seen during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_score: f64,
    pub improved: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,train_accuracy,val_accuracy,val_precision,val_recall,val_f1,val_score,improved\n",
        );
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_accuracy,
                r.val_accuracy,
                r.val_precision,
                r.val_recall,
                r.val_f1,
                r.val_score,
                u8::from(r.improved)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: Model,
    pub history: History,
    pub best_epoch: usize,
    pub best_val: MetricsReport,
    pub stopped_early: bool,
}

fn diagnostics(params: &ParamSet) -> String {
    params
        .norms()
        .into_iter()
        .map(|(name, n)| format!("{name}={n:.6e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train(
    mut model: Model,
    train_split: &[EncodedExample],
    val_split: &[EncodedExample],
    class_names: &[String],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val_split.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    model.params.snap_to_f32();
    let mut optimizer = Optimizer::new(cfg, &model.params);
    let mut history = History::default();
    let mut best: Option<(f64, usize, MetricsReport, ParamSet)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let use_dropout = model.config.dropout > 0.0;

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &train_split[i]).collect();
            let seeds: Vec<Option<u64>> = chunk
                .iter()
                .map(|&i| use_dropout.then(|| mix_seed(&[cfg.seed, epoch as u64, step as u64, i as u64])))
                .collect();
            let (loss, batch_correct, grads) = batch_gradient(&model, &batch, &seeds, cfg.execution)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: step + 1,
                    diagnostics: format!("loss {loss}; parameter norms: {}", diagnostics(&model.params)),
                });
            }
            optimizer.step(&mut model.params, &grads);
            if let Some(id) = model.embedding_param() {
                // the pad row stays zero
                let pad = model.vocab.as_ref().map(|v| v.pad()).unwrap_or(0);
                let d = model.config.embedding_dim;
                model.params.get_mut(id).data_mut()[pad * d..(pad + 1) * d].fill(0.0);
            }
            model.params.snap_to_f32();
            loss_sum += loss * chunk.len() as f64;
            correct += batch_correct;
            debug!("epoch {epoch} batch {} loss {loss:.6}", step + 1);
        }

        let val = evaluate(&model, val_split, class_names, cfg.execution)?;
        let score = val.selection_score();
        let improved = best.as_ref().is_none_or(|(b, ..)| score > *b);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_split.len() as f64,
            train_accuracy: correct as f64 / train_split.len() as f64,
            val_accuracy: val.accuracy,
            val_precision: val.precision,
            val_recall: val.recall,
            val_f1: val.f1,
            val_score: score,
            improved,
        };
        info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4} val f1 {:.4}{}",
            record.train_loss,
            record.train_accuracy,
            val.accuracy,
            val.f1,
            if improved { " *" } else { "" }
        );
        history.epochs.push(record);
        if improved {
            best = Some((score, epoch, val, model.params.clone()));
            since_best = 0;
            if cfg.stop_at.is_some_and(|t| score >= t) {
                stopped_early = epoch < cfg.epochs;
                info!("validation score {score:.4} reached the target, stopping");
                break;
            }
        } else {
            since_best += 1;
            if since_best > cfg.patience {
                stopped_early = epoch < cfg.epochs;
                info!("no improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }

    let (_, best_epoch, best_val, params) = best.expect("at least one epoch ran");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_hand_step() {
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 0.1, 0.9, 0.999, 1e-8);
        assert!((p[0] + 0.1).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = [0.3, -1.2];
        let mut s = AdamState::new(2);
        for _ in 0..10 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, 0.9, 0.999, 1e-8);
        }
        assert_eq!(p, [0.3, -1.2]);
    }

    #[test]
    fn adam_minimizes_square() {
        let mut p = [1.0];
        let mut s = AdamState::new(1);
        let mut reached = None;
        for i in 0..500 {
            let g = 2.0 * p[0];
            adam_step(&mut p, &[g], &mut s, 0.05, 0.9, 0.999, 1e-8);
            if p[0].abs() < 1e-3 {
                reached = Some(i);
                break;
            }
        }
        assert!(reached.is_some(), "p = {}", p[0]);
    }

    #[test]
    fn seeds_differ_per_part() {
        assert_ne!(mix_seed(&[1, 2, 3]), mix_seed(&[1, 2, 4]));
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[7, 7]), mix_seed(&[7, 7]));
    }

    #[test]
    fn config_keys_round_trip() {
        let mut cfg = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            execution: Execution::Sequential,
            ..TrainConfig::default()
        };
        cfg.learning_rate = 0.02;
        let mut back = TrainConfig::default();
        for (k, v) in cfg.entries() {
            back.set(&k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
    }
}

//! Run configuration: `key = value` text with dotted keys.
//!
//! ```text
//! # comment
//! dataset = liar
//! data_dir = /data/liar
//! [model]
//! caps.routing_iterations = 2
//! [train]
//! epochs = 30
//! ```
//!
//! A `[section]` line prefixes the following keys with `section.`. The
//! `dataset` key selects the defaults every other key starts from, wherever
//! it appears. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

/// Splits config text into ordered `(key, value, line)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// Optional resource files; bundled defaults are used when unset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResourcePaths {
    pub vocab: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub negators: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    /// Minimum training-split frequency for the generated vocabulary.
    pub min_count: usize,
    pub resources: ResourcePaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn for_dataset(kind: DatasetKind) -> Self {
        RunConfig {
            dataset: kind,
            data_dir: None,
            min_count: 1,
            resources: ResourcePaths::default(),
            model: ModelConfig::for_dataset(kind),
            train: TrainConfig::default(),
        }
    }

    /// Parses config text, then applies `overrides` (`key=value`) in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut pairs: Vec<(String, String, Option<usize>)> =
            parse_pairs(text)?.into_iter().map(|(k, v, l)| (k, v, Some(l))).collect();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string(), None));
        }
        let kind = match pairs.iter().rev().find(|(k, _, _)| k == "dataset") {
            Some((_, v, _)) => v.parse()?,
            None => DatasetKind::BinaryLong,
        };
        let mut cfg = RunConfig::for_dataset(kind);
        for (k, v, line) in &pairs {
            if k == "dataset" {
                continue;
            }
            cfg.set(k, v).map_err(|e| match (e, line) {
                (Error::Config(msg), Some(l)) => Error::Config(format!("line {l}: {msg}")),
                (e, _) => e,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, overrides)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r = &mut self.resources;
        match key {
            "dataset" => {
                let kind: DatasetKind = value.parse()?;
                if kind != self.dataset {
                    *self = RunConfig::for_dataset(kind);
                }
            }
            "data_dir" => self.data_dir = opt_path(value),
            "embeddings.min_count" => self.min_count = parse_value(key, value)?,
            "embeddings.vocab" => r.vocab = opt_path(value),
            "embeddings.matrix" => r.matrix = opt_path(value),
            "embeddings.store" => r.store = opt_path(value),
            "features.lexicon" => r.lexicon = opt_path(value),
            "features.negators" => r.negators = opt_path(value),
            "features.stopwords" => r.stopwords = opt_path(value),
            _ => {
                if let Some(k) = key.strip_prefix("model.") {
                    self.model.set(k, value)?;
                } else if let Some(k) = key.strip_prefix("train.") {
                    self.train.set(k, value)?;
                } else {
                    return Err(Error::Config(format!("unknown setting {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> BTreeMap<String, String> {
        let r = &self.resources;
        let mut out: BTreeMap<String, String> = [
            ("dataset", self.dataset.as_str().to_string()),
            ("data_dir", show_path(&self.data_dir)),
            ("embeddings.min_count", self.min_count.to_string()),
            ("embeddings.vocab", show_path(&r.vocab)),
            ("embeddings.matrix", show_path(&r.matrix)),
            ("embeddings.store", show_path(&r.store)),
            ("features.lexicon", show_path(&r.lexicon)),
            ("features.negators", show_path(&r.negators)),
            ("features.stopwords", show_path(&r.stopwords)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(self.model.entries().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        out.extend(self.train.entries().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        out
    }

    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.model.num_classes != self.dataset.num_classes() {
            return Err(Error::Config(format!(
                "dataset {} has {} classes but model.num_classes = {}",
                self.dataset.as_str(),
                self.dataset.num_classes(),
                self.model.num_classes
            )));
        }
        if self.resources.vocab.is_some() != self.resources.matrix.is_some() {
            return Err(Error::Config("embeddings.vocab and embeddings.matrix must be set together".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn sections_comments_and_overrides() {
        let text = "# run\n[model]\ncaps.routing_iterations = 3\n\ndataset = liar\n[train]\nepochs = 7\n";
        // `dataset` sits inside the [model] section here, so it is model.dataset
        assert!(RunConfig::parse(text, &[]).is_err());

        let text = "dataset = liar\n[model]\ncaps.routing_iterations = 3\n[train]\nepochs = 7\n";
        let cfg = RunConfig::parse(text, &["train.epochs=9".into()]).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::MulticlassShort);
        assert_eq!(cfg.model.variant, Variant::MlpCapsNet);
        assert_eq!(cfg.model.capsules.routing_iterations, 3);
        assert_eq!(cfg.train.epochs, 9);
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let err = RunConfig::parse("dataset = covid\nmodel.nonsense = 1\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::parse("", &["bogus=1".into()]).is_err());
        assert!(RunConfig::parse("no equals sign\n", &[]).is_err());
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = RunConfig::for_dataset(DatasetKind::MulticlassShort);
        cfg.train.learning_rate = 0.0025;
        cfg.resources.store = Some("x.xseq".into());
        let back = RunConfig::parse(&cfg.canonical_text(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}

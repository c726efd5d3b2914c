//! End-to-end runs: resources → model → training → reports on disk.
//!
//! Files written by [`run_training`] into the output directory:
//!
//! | file | content |
//! |---|---|
//! | `model.xcap` | best-validation checkpoint |
//! | `history.csv` | per-epoch loss and validation metrics |
//! | `metrics_val.csv`, `metrics_test.csv` | metric reports |
//! | `confusion_val.csv`, `confusion_test.csv` | confusion matrices |
//! | `config.txt` | canonical run configuration |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{self, DatasetBundle, NewsExample, Split};
use crate::embeddings::{load_static_embeddings, PrecomputedStore, Vocab};
use crate::error::{Error, Result};
use crate::features::{tokenize, FeatureExtractor, SentimentLexicon, Stopwords};
use crate::metrics::MetricsReport;
use crate::model::{EmbeddingMode, EncodedExample, Model};
use crate::parallel::Execution;
use crate::train::{self, TrainOutcome};

/// Lexicon, stopwords and the optional embedding store of a run.
#[derive(Debug)]
pub struct Resources {
    pub extractor: FeatureExtractor,
    pub store: Option<PrecomputedStore>,
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

/// Checks that every configured path exists before any work starts.
pub fn check_paths(cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = &cfg.data_dir {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
    }
    let r = &cfg.resources;
    for p in [&r.vocab, &r.matrix, &r.store, &r.lexicon, &r.negators, &r.stopwords].into_iter().flatten() {
        require_file(p)?;
    }
    if cfg.model.embedding_mode == EmbeddingMode::FrozenStore && r.store.is_none() {
        return Err(Error::Config("frozen-store embeddings need embeddings.store".into()));
    }
    Ok(())
}

pub fn load_resources(cfg: &RunConfig) -> Result<Resources> {
    let r = &cfg.resources;
    let lexicon = match &r.lexicon {
        Some(p) => SentimentLexicon::load(p, r.negators.as_deref())?,
        None => SentimentLexicon::bundled(),
    };
    let stopwords = match &r.stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::bundled(),
    };
    let store = match (&r.store, cfg.model.embedding_mode) {
        (Some(p), EmbeddingMode::FrozenStore) => {
            let store = PrecomputedStore::open(p)?;
            if store.dim() != cfg.model.embedding_dim {
                return Err(Error::Config(format!(
                    "embedding store {} has D={} but model.embedding_dim = {}",
                    p.display(),
                    store.dim(),
                    cfg.model.embedding_dim
                )));
            }
            Some(store)
        }
        _ => None,
    };
    Ok(Resources {
        extractor: FeatureExtractor { lexicon, stopwords },
        store,
    })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<DatasetBundle> {
    let dir = cfg
        .data_dir
        .as_ref()
        .ok_or_else(|| Error::Config("data_dir is not set".into()))?;
    data::load(cfg.dataset, dir)
}

/// Fresh model for a run: the static table comes from the configured files
/// or, failing that, from a vocabulary of the training split with random
/// vectors. Feature statistics are fitted on the training split.
pub fn prepare_model(cfg: &RunConfig, train_split: &[NewsExample], res: &Resources) -> Result<Model> {
    let mut model = match cfg.model.embedding_mode {
        EmbeddingMode::StaticTrainable => match (&cfg.resources.vocab, &cfg.resources.matrix) {
            (Some(v), Some(m)) => {
                let table = load_static_embeddings(v, m, true)?;
                info!("static embeddings: {} rows of dimension {}", table.vocab.len(), table.dim());
                Model::build(cfg.model.clone(), Some(table))?
            }
            _ => {
                let docs: Vec<Vec<String>> = train_split.iter().map(|e| tokenize(&e.text)).collect();
                let vocab = Vocab::from_corpus(docs.iter().map(Vec::as_slice), cfg.min_count);
                info!("vocabulary from the training split: {} entries", vocab.len());
                Model::build_with_vocab(cfg.model.clone(), vocab)?
            }
        },
        EmbeddingMode::FrozenStore => Model::build(cfg.model.clone(), None)?,
    };
    model.fit_features(train_split, &res.extractor)?;
    Ok(model)
}

pub fn encode_split(
    model: &Model,
    examples: &[NewsExample],
    res: &Resources,
    execution: Execution,
) -> Result<Vec<EncodedExample>> {
    execution.try_map(examples, |_, ex| model.encode(ex, &res.extractor, res.store.as_ref()))
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub outcome: TrainOutcome,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub files: Vec<PathBuf>,
}

fn write(path: PathBuf, body: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Trains on `bundle` and writes checkpoint, history and metric reports to `out`.
pub fn run_training(cfg: &RunConfig, bundle: &DatasetBundle, res: &Resources, out: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let exec = cfg.train.execution;
    if bundle.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let model = prepare_model(cfg, &bundle.train, res)?;
    let train_set = encode_split(&model, &bundle.train, res, exec)?;
    let val_set = encode_split(&model, &bundle.validation, res, exec)?;
    let test_set = encode_split(&model, &bundle.test, res, exec)?;
    info!(
        "training {} ({} parameters) on {} examples",
        model.config.variant,
        model.params.total_len(),
        train_set.len()
    );

    let outcome = train::train(model, &train_set, &val_set, &bundle.class_names, &cfg.train)?;
    let val = train::evaluate(&outcome.model, &val_set, &bundle.class_names, exec)?;
    let test = train::evaluate(&outcome.model, &test_set, &bundle.class_names, exec)?;
    info!(
        "best epoch {}: val acc {:.4} f1 {:.4}; test acc {:.4} f1 {:.4}",
        outcome.best_epoch, val.accuracy, val.f1, test.accuracy, test.f1
    );

    let mut files = Vec::new();
    let ckpt = out.join("model.xcap");
    checkpoint::save(&outcome.model, &ckpt)?;
    files.push(ckpt);
    write(out.join("history.csv"), &outcome.history.to_csv(), &mut files)?;
    write(out.join("metrics_val.csv"), &val.to_csv(), &mut files)?;
    write(out.join("confusion_val.csv"), &val.confusion_csv(), &mut files)?;
    write(out.join("metrics_test.csv"), &test.to_csv(), &mut files)?;
    write(out.join("confusion_test.csv"), &test.confusion_csv(), &mut files)?;
    write(out.join("config.txt"), &cfg.canonical_text(), &mut files)?;
    Ok(RunSummary {
        outcome,
        val,
        test,
        files,
    })
}

/// Metrics of a trained model on one split of `bundle`.
pub fn evaluate_split(model: &Model, bundle: &DatasetBundle, split: Split, res: &Resources, execution: Execution) -> Result<MetricsReport> {
    let examples = bundle.split(split);
    if examples.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let encoded = encode_split(model, examples, res, execution)?;
    train::evaluate(model, &encoded, &bundle.class_names, execution)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub iterations: usize,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("r,best_epoch,val_Acc,val_Prec,val_Rec,val_F1,test_Acc,test_Prec,test_Rec,test_F1\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iterations,
            r.best_epoch,
            r.val.accuracy,
            r.val.precision,
            r.val.recall,
            r.val.f1,
            r.test.accuracy,
            r.test.precision,
            r.test.recall,
            r.test.f1
        );
    }
    out
}

/// Trains once per routing iteration count with the same seeds and writes
/// `routing_sweep.csv` plus one run directory `r<N>/` per value.
pub fn routing_sweep(
    cfg: &RunConfig,
    bundle: &DatasetBundle,
    res: &Resources,
    iterations: &[usize],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if iterations.is_empty() {
        return Err(Error::Config("routing sweep needs at least one iteration count".into()));
    }
    if let Some(r) = iterations.iter().find(|&&r| r == 0) {
        return Err(Error::Config(format!("routing iterations must be at least 1, got {r}")));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for &r in iterations {
        let mut run = cfg.clone();
        run.model.capsules.routing_iterations = r;
        info!("routing sweep: r = {r}");
        let summary = run_training(&run, bundle, res, &out.join(format!("r{r}")))?;
        rows.push(SweepRow {
            iterations: r,
            best_epoch: summary.outcome.best_epoch,
            val: summary.val,
            test: summary.test,
        });
    }
    let path = out.join("routing_sweep.csv");
    std::fs::write(&path, sweep_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

use std::path::{Path, PathBuf};

use log::{info, warn};
use xcaps::checkpoint;
use xcaps::config::RunConfig;
use xcaps::data::{self, CreditHistory, DatasetKind, NewsExample, Split};
use xcaps::embeddings::Vocab;
use xcaps::features::{NormalizationStats, FEATURE_NAMES};
use xcaps::metrics::MetricsReport;
use xcaps::model::{Model, Variant};
use xcaps::pipeline::{self, check_paths, load_dataset, load_resources};
use xcaps::report::corpus_report;
use xcaps::{Error, Result};

use crate::ConfigArgs;

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("model.seed={seed}"));
        overrides.push(format!("train.seed={seed}"));
    }
    if let Some(r) = args.routing_iterations {
        overrides.push(format!("model.caps.routing_iterations={r}"));
    }
    match &args.config {
        Some(path) => RunConfig::load(path, &overrides),
        None => RunConfig::parse("", &overrides),
    }
}

/// Config for commands that take the model from a checkpoint.
fn config_for(args: &ConfigArgs, model: &Model) -> Result<RunConfig> {
    let mut cfg = load_config(args)?;
    cfg.model = model.config.clone();
    Ok(cfg)
}

fn class_names(num_classes: usize) -> Vec<String> {
    [DatasetKind::BinaryLong, DatasetKind::MulticlassShort]
        .into_iter()
        .find(|k| k.num_classes() == num_classes)
        .map(DatasetKind::class_names)
        .unwrap_or_else(|| (0..num_classes).map(|c| format!("class{c}")).collect())
}

fn print_report(title: &str, r: &MetricsReport) {
    println!("{title}");
    println!("  {:<10} {:<14} {:>8} {:>8} {:>8} {:>8}", "scope", "class", "Acc", "Prec", "Rec", "F1");
    let row = |scope: &str, class: &str, acc: Option<f64>, p: f64, rec: f64, f: f64| {
        let acc = acc.map(|a| format!("{a:.4}")).unwrap_or_default();
        println!("  {scope:<10} {class:<14} {acc:>8} {p:>8.4} {rec:>8.4} {f:>8.4}");
    };
    if r.is_binary() {
        row("binary", &r.class_names[1], Some(r.accuracy), r.precision, r.recall, r.f1);
    }
    let (m, w) = (r.macro_avg, r.weighted);
    row("macro", "", Some(r.accuracy), m.precision, m.recall, m.f1);
    row("weighted", "", Some(r.accuracy), w.precision, w.recall, w.f1);
    for (name, c) in r.class_names.iter().zip(&r.per_class) {
        row("class", name, None, c.precision, c.recall, c.f1);
    }
}

pub fn train(args: &ConfigArgs, out: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    check_paths(&cfg)?;
    let bundle = load_dataset(&cfg)?;
    let res = load_resources(&cfg)?;
    let summary = pipeline::run_training(&cfg, &bundle, &res, out)?;
    println!(
        "best epoch {} of {}{}",
        summary.outcome.best_epoch,
        summary.outcome.history.epochs.len(),
        if summary.outcome.stopped_early { " (stopped early)" } else { "" }
    );
    print_report("validation", &summary.val);
    print_report("test", &summary.test);
    for f in &summary.files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

fn check_vocab(cfg: &RunConfig, model: &Model) -> Result<()> {
    if let (Some(path), Some(expected)) = (&cfg.resources.vocab, model.vocab_hash()) {
        let found = Vocab::load(path)?.hash();
        if found != expected {
            return Err(Error::HashMismatch {
                what: "vocabulary",
                expected: expected.to_hex(),
                found: found.to_hex(),
            });
        }
    }
    Ok(())
}

pub fn eval(args: &ConfigArgs, checkpoint_path: &Path, split: Split, out: Option<&Path>) -> Result<()> {
    let model = checkpoint::load(checkpoint_path)?;
    let cfg = config_for(args, &model)?;
    if cfg.dataset.num_classes() != model.config.num_classes {
        return Err(Error::Config(format!(
            "checkpoint has {} classes but dataset {} has {}",
            model.config.num_classes,
            cfg.dataset.as_str(),
            cfg.dataset.num_classes()
        )));
    }
    check_paths(&cfg)?;
    check_vocab(&cfg, &model)?;
    let bundle = load_dataset(&cfg)?;
    let res = load_resources(&cfg)?;
    let report = pipeline::evaluate_split(&model, &bundle, split, &res, cfg.train.execution)?;
    print_report(&format!("{} split ({} examples)", split.as_str(), report.confusion.total()), &report);

    let dir: PathBuf = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let metrics = dir.join(format!("metrics_{}.csv", split.as_str()));
    let confusion = dir.join(format!("confusion_{}.csv", split.as_str()));
    report.write_csv(&metrics, &confusion)?;
    info!("wrote {} and {}", metrics.display(), confusion.display());
    Ok(())
}

pub fn predict(args: &ConfigArgs, checkpoint_path: &Path, id: &str, text: &str, credit: Option<&[u32]>) -> Result<()> {
    let model = checkpoint::load(checkpoint_path)?;
    let cfg = config_for(args, &model)?;
    check_paths(&cfg)?;
    let res = load_resources(&cfg)?;
    let mut example = NewsExample::new(id, text, 0);
    match credit {
        Some(c) => {
            let counts: [u32; 5] = c
                .try_into()
                .map_err(|_| Error::Config(format!("--credit needs 5 counts, got {}", c.len())))?;
            example.credit_history = Some(CreditHistory::new(counts));
        }
        None if model.config.variant == Variant::MlpCapsNet => {
            warn!("no speaker credit history given; using zero credit counts");
        }
        None => {}
    }
    let prediction = model.predict(&example, &res.extractor, res.store.as_ref())?;
    let names = class_names(model.config.num_classes);
    println!("label: {}", names[prediction.label]);
    for (name, a) in names.iter().zip(&prediction.activations) {
        println!("  {name:<14} {a:.4}");
    }
    Ok(())
}

pub fn analyze(args: &ConfigArgs, split: Split, k: usize, out: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    check_paths(&cfg)?;
    let bundle = load_dataset(&cfg)?;
    let res = load_resources(&cfg)?;
    let examples = bundle.split(split);
    let report = corpus_report(examples, &bundle.class_names, &res.extractor.stopwords, &res.extractor.lexicon, k)?;
    let files = report.write_csv(out)?;
    println!(
        "{} split: {} examples, {:.2} tokens on average",
        split.as_str(),
        examples.len(),
        data::average_token_length(examples)
    );
    for class in &report.classes {
        let top: Vec<&str> = class.top_tokens.iter().map(|(t, _)| t.as_str()).collect();
        println!("  {:<14} {:>6}  {}", class.class_name, class.documents, top.join(" "));
    }
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}

pub fn sweep_routing(args: &ConfigArgs, r_values: &[usize], out: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    cfg.validate()?;
    check_paths(&cfg)?;
    let bundle = load_dataset(&cfg)?;
    let res = load_resources(&cfg)?;
    let rows = pipeline::routing_sweep(&cfg, &bundle, &res, r_values, out)?;
    println!("{:>3} {:>10} {:>8} {:>8} {:>8} {:>8}", "r", "best_epoch", "val_Acc", "val_F1", "test_Acc", "test_F1");
    for r in &rows {
        println!(
            "{:>3} {:>10} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.iterations, r.best_epoch, r.val.accuracy, r.val.f1, r.test.accuracy, r.test.f1
        );
    }
    info!("wrote {}", out.join("routing_sweep.csv").display());
    Ok(())
}

/// Raw features plus their z-scores under statistics of the training split.
pub fn features(args: &ConfigArgs, split: Split, out: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    check_paths(&cfg)?;
    let bundle = load_dataset(&cfg)?;
    let res = load_resources(&cfg)?;
    let train_rows: Vec<_> = bundle.train.iter().map(|e| res.extractor.raw(e)).collect();
    let stats = NormalizationStats::fit(&train_rows)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("features_{}.csv", split.as_str()));
    let csv_err = |e: csv::Error| Error::format(&path, e.to_string());
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(FEATURE_NAMES.iter().map(|n| n.to_string()));
    header.extend(FEATURE_NAMES.iter().map(|n| format!("z_{n}")));
    w.write_record(&header).map_err(csv_err)?;
    for ex in bundle.split(split) {
        let raw = res.extractor.raw(ex);
        let mut record = vec![ex.id.clone(), bundle.class_names[ex.label].clone()];
        record.extend(raw.iter().map(f64::to_string));
        record.extend(stats.apply(&raw).iter().map(f64::to_string));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("{} rows written to {}", bundle.split(split).len(), path.display());
    Ok(())
}

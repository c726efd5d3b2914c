use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xcaps::data::DatasetKind;
use xcaps::synthetic::{separable_splits, write_dataset, SyntheticConfig};

fn xcaps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xcaps"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new(kind: DatasetKind) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let base = SyntheticConfig {
            num_classes: kind.num_classes(),
            seed: 4,
            ..SyntheticConfig::default()
        };
        write_dataset(kind, &data, &separable_splits(&base, [36, 18, 18])).unwrap();
        let variant = if kind == DatasetKind::BinaryLong { "dcnn-capsnet" } else { "mlp-capsnet" };
        let text = format!(
            "# small synthetic run\n\
             dataset = {}\n\
             data_dir = {}\n\
             [model]\n\
             variant = {variant}\n\
             embedding_dim = 8\n\
             max_len = 12\n\
             filters = 4\n\
             head_hidden = 8\n\
             caps.conv_filters = 8\n\
             caps.primary_channels = 2\n\
             caps.conv_caps_channels = 2\n\
             [train]\n\
             epochs = 3\n\
             batch_size = 12\n\
             lr = 0.01\n",
            kind.as_str(),
            data.display()
        );
        let config = dir.path().join("run.conf");
        std::fs::write(&config, text).unwrap();
        Fixture { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> &str {
        self.config.to_str().unwrap()
    }

    fn train(&self, out: &Path, extra: &[&str]) -> Output {
        let mut args = vec!["train", "--config", self.config(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        xcaps(&args)
    }
}

#[test]
fn missing_dataset_directory_exits_2_and_names_it() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let out = f.path("run");
    let o = f.train(&out, &["--set", "data_dir=/nonexistent/covid"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("/nonexistent/covid"), "{}", stderr(&o));
}

#[test]
fn unknown_setting_is_a_usage_error() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let o = f.train(&f.path("run"), &["--set", "model.colour=blue"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_metrics() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let out = f.path("run");
    let o = f.train(&out, &["--routing-iterations", "2", "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for name in ["model.xcap", "history.csv", "metrics_val.csv", "metrics_test.csv", "confusion_test.csv", "config.txt", "xcaps.log"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    assert!(stdout(&o).contains("Acc"));

    let ckpt = xcaps::checkpoint::load(&out.join("model.xcap")).unwrap();
    assert_eq!(ckpt.config.capsules.routing_iterations, 2);
    assert_eq!(ckpt.config.seed, 9);
    let conf = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(conf.contains("train.seed = 9\n"));

    let eval_dir = f.path("eval");
    let ckpt_path = out.join("model.xcap");
    let o = xcaps(&[
        "eval",
        "--config",
        f.config(),
        "--checkpoint",
        ckpt_path.to_str().unwrap(),
        "--split",
        "test",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let header = stdout(&o).lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>().join(" ");
    assert_eq!(header, "scope class Acc Prec Rec F1");
    for name in ["metrics_test.csv", "confusion_test.csv"] {
        assert_eq!(
            std::fs::read(eval_dir.join(name)).unwrap(),
            std::fs::read(out.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn eval_rejects_changed_lexicon_with_both_hashes() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let out = f.path("run");
    assert_eq!(f.train(&out, &[]).status.code(), Some(0));
    let lex = f.path("other.tsv");
    std::fs::write(&lex, "great\t0.9\t0.8\n").unwrap();
    let ckpt = out.join("model.xcap");
    let o = xcaps(&[
        "eval",
        "--config",
        f.config(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--set",
        &format!("features.lexicon={}", lex.display()),
        "--out",
        f.path("e").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let msg = stderr(&o);
    assert!(msg.contains("lexicon hash mismatch"), "{msg}");
    let hashes = msg
        .split(|c: char| !c.is_ascii_hexdigit())
        .filter(|w| w.len() == 64)
        .count();
    assert_eq!(hashes, 2, "{msg}");
}

#[test]
fn eval_of_empty_split_exits_2() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let out = f.path("run");
    assert_eq!(f.train(&out, &[]).status.code(), Some(0));
    std::fs::write(f.path("data/val.csv"), "id,tweet,label\n").unwrap();
    let ckpt = out.join("model.xcap");
    let o = xcaps(&["eval", "--config", f.config(), "--checkpoint", ckpt.to_str().unwrap(), "--split", "val"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn predict_is_deterministic_and_formatted() {
    let f = Fixture::new(DatasetKind::MulticlassShort);
    let out = f.path("run");
    assert_eq!(f.train(&out, &[]).status.code(), Some(0));
    let ckpt = out.join("model.xcap");
    let args = ["predict", "--checkpoint", ckpt.to_str().unwrap(), "--text", "filler1 marker2x0 filler3"];
    let a = xcaps(&args);
    let b = xcaps(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stderr(&a).contains("credit"), "expected a credit warning: {}", stderr(&a));
    let lines: Vec<String> = stdout(&a).lines().map(str::to_string).collect();
    assert!(lines[0].starts_with("label: "));
    assert_eq!(lines.len(), 7);
    for line in &lines[1..] {
        let value = line.split_whitespace().last().unwrap();
        let (_, decimals) = value.split_once('.').unwrap();
        assert_eq!(decimals.len(), 4, "{line}");
    }
    let with_credit = xcaps(&[&args[..], &["--credit", "0,0,8,1,0"]].concat());
    assert_eq!(with_credit.status.code(), Some(0));
    assert!(!stderr(&with_credit).contains("credit"));
}

#[test]
fn predict_with_unknown_checkpoint_exits_2() {
    let o = xcaps(&["predict", "--checkpoint", "/nonexistent/model.xcap", "--text", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/model.xcap"));
}

#[test]
fn analyze_is_repeatable() {
    let f = Fixture::new(DatasetKind::MulticlassShort);
    let a = f.path("analysis/a");
    let b = f.path("analysis/b");
    for dir in [&a, &b] {
        let o = xcaps(&["analyze", "--config", f.config(), "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let csvs: Vec<_> = names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")).collect();
    assert!(csvs.len() >= 6 + 2);
    for n in csvs {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap());
    }
    let freq = std::fs::read_to_string(a.join("freq_true.csv")).unwrap();
    assert_eq!(freq.lines().count(), 1 + 10);
}

#[test]
fn sweep_routing_writes_one_row_per_value() {
    let f = Fixture::new(DatasetKind::BinaryLong);
    let out = f.path("sweep");
    let o = xcaps(&["sweep-routing", "--config", f.config(), "--r", "1,2,3", "--out", out.to_str().unwrap(), "--set", "train.epochs=1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("routing_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let bad = xcaps(&["sweep-routing", "--config", f.config(), "--r", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn features_export_has_both_value_sets() {
    let f = Fixture::new(DatasetKind::MulticlassShort);
    let out = f.path("feat");
    let o = xcaps(&["features", "--config", f.config(), "--split", "val", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("features_val.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 2 + 24);
    assert_eq!(lines.count(), 18);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (name, kind) in [("covid.conf", DatasetKind::BinaryLong), ("liar.conf", DatasetKind::MulticlassShort), ("covid-store.conf", DatasetKind::BinaryLong)] {
        let cfg = xcaps::config::RunConfig::load(&dir.join(name), &[]).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.dataset, kind, "{name}");
    }
}

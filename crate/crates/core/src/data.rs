//! Dataset loaders for the Covid-19 tweet corpus (binary, long statements)
//! and the Liar corpus (six-way, short statements with speaker metadata).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpeakerMetadata {
    pub subject: String,
    pub speaker: String,
    pub job: String,
    pub state: String,
    pub party: String,
    pub context: String,
}

/// Speaker's historical label counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CreditHistory {
    pub barely_true: u32,
    pub false_count: u32,
    pub half_true: u32,
    pub mostly_true: u32,
    pub pants_fire: u32,
}

impl CreditHistory {
    /// From `[barely_true, false, half_true, mostly_true, pants_fire]`.
    pub fn new(counts: [u32; 5]) -> Self {
        CreditHistory {
            barely_true: counts[0],
            false_count: counts[1],
            half_true: counts[2],
            mostly_true: counts[3],
            pants_fire: counts[4],
        }
    }

    pub fn as_array(&self) -> [u32; 5] {
        [
            self.barely_true,
            self.false_count,
            self.half_true,
            self.mostly_true,
            self.pants_fire,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsExample {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub metadata: Option<SpeakerMetadata>,
    pub credit_history: Option<CreditHistory>,
}

impl NewsExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        NewsExample {
            id: id.into(),
            text: text.into(),
            label,
            metadata: None,
            credit_history: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    /// Covid-19 style: binary real/fake, long statements.
    BinaryLong,
    /// Liar style: six truthfulness classes, short statements.
    MulticlassShort,
}

impl DatasetKind {
    pub fn class_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            DatasetKind::BinaryLong => &COVID_CLASSES,
            DatasetKind::MulticlassShort => &LIAR_CLASSES,
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    pub fn num_classes(self) -> usize {
        match self {
            DatasetKind::BinaryLong => 2,
            DatasetKind::MulticlassShort => 6,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::BinaryLong => "covid",
            DatasetKind::MulticlassShort => "liar",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "covid" | "binary-long" => Ok(DatasetKind::BinaryLong),
            "liar" | "multiclass-short" => Ok(DatasetKind::MulticlassShort),
            other => Err(Error::Config(format!("unknown dataset kind {other:?} (expected covid or liar)"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (expected train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const COVID_CLASSES: [&str; 2] = ["real", "fake"];
pub const LIAR_CLASSES: [&str; 6] = [
    "pants-fire",
    "false",
    "barely-true",
    "half-true",
    "mostly-true",
    "true",
];

/// Published per-split counts `(real, fake, total)`. The training row does
/// not add up as published, so mismatches only warn.
const COVID_PUBLISHED: [(Split, usize, usize, usize); 3] = [
    (Split::Train, 3360, 3360, 4420),
    (Split::Validation, 1120, 1020, 2140),
    (Split::Test, 1120, 1020, 2140),
];

const LIAR_PUBLISHED: [(Split, usize); 3] = [
    (Split::Train, 10_269),
    (Split::Validation, 1_284),
    (Split::Test, 1_283),
];

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub kind: DatasetKind,
    pub class_names: Vec<String>,
    pub train: Vec<NewsExample>,
    pub validation: Vec<NewsExample>,
    pub test: Vec<NewsExample>,
    /// Non-fatal findings: count mismatches, duplicate ids.
    pub warnings: Vec<String>,
}

impl DatasetBundle {
    pub fn new(
        kind: DatasetKind,
        train: Vec<NewsExample>,
        validation: Vec<NewsExample>,
        test: Vec<NewsExample>,
    ) -> Self {
        let mut bundle = DatasetBundle {
            kind,
            class_names: kind.class_names(),
            train,
            validation,
            test,
            warnings: Vec::new(),
        };
        bundle.check_disjoint();
        bundle
    }

    pub fn split(&self, split: Split) -> &[NewsExample] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Examples per class for one split.
    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for ex in self.split(split) {
            counts[ex.label] += 1;
        }
        counts
    }

    fn warn(&mut self, msg: String) {
        warn!("{msg}");
        self.warnings.push(msg);
    }

    fn check_disjoint(&mut self) {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        let mut dups = Vec::new();
        for split in Split::ALL {
            for ex in self.split(split) {
                if let Some(prev) = seen.insert(ex.id.as_str(), split) {
                    dups.push(format!("{} ({prev}/{split})", ex.id));
                }
            }
        }
        if !dups.is_empty() {
            let shown = dups.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
            let more = if dups.len() > 20 {
                format!(" and {} more", dups.len() - 20)
            } else {
                String::new()
            };
            self.warn(format!("splits are not disjoint: duplicated ids {shown}{more}"));
        }
    }

    fn log_counts(&self) {
        for split in Split::ALL {
            let counts = self.class_counts(split);
            let per_class: Vec<String> = self
                .class_names
                .iter()
                .zip(&counts)
                .map(|(n, c)| format!("{n}={c}"))
                .collect();
            info!(
                "{} {split}: {} examples ({})",
                self.kind,
                self.split(split).len(),
                per_class.join(", ")
            );
        }
    }
}

fn resolve(dir: &Path, candidates: &[&str]) -> Result<PathBuf> {
    for c in candidates {
        let p = dir.join(c);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(candidates[0]),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no split file found (tried {})", candidates.join(", ")),
        ),
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| format!("line {}: ", p.line())).unwrap_or_default();
    Error::format(path, format!("{line}{e}"))
}

const COVID_FILES: [(Split, &[&str]); 3] = [
    (Split::Train, &["train.csv", "train.tsv", "Constraint_Train.csv"]),
    (
        Split::Validation,
        &["val.csv", "val.tsv", "validation.csv", "validation.tsv", "dev.csv", "dev.tsv", "Constraint_Val.csv"],
    ),
    (
        Split::Test,
        &["test.csv", "test.tsv", "english_test_with_labels.csv", "Constraint_Test.csv"],
    ),
];

const LIAR_FILES: [(Split, &[&str]); 3] = [
    (Split::Train, &["train.tsv"]),
    (Split::Validation, &["valid.tsv", "val.tsv", "validation.tsv"]),
    (Split::Test, &["test.tsv"]),
];

/// Reads one Covid-19 split: a header row with `id`, `tweet` (or `text`) and
/// `label` columns, comma- or tab-separated (sniffed from the header line).
pub fn read_covid_file(path: &Path) -> Result<Vec<NewsExample>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header_line = content.lines().next().unwrap_or("");
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let column = |names: &[&str]| {
        headers
            .iter()
            .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
            .ok_or_else(|| Error::format(path, format!("line 1: missing column {:?}", names[0])))
    };
    let (id_col, text_col, label_col) = (column(&["id"])?, column(&["tweet", "text"])?, column(&["label"])?);

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| {
            record
                .get(i)
                .ok_or_else(|| Error::format(path, format!("line {line}: missing field {}", i + 1)))
        };
        let raw_label = field(label_col)?.trim();
        let label = match raw_label.to_lowercase().as_str() {
            "real" => 0,
            "fake" => 1,
            _ => {
                return Err(Error::format(
                    path,
                    format!("line {line}: unknown label {raw_label:?} (expected real or fake)"),
                ))
            }
        };
        out.push(NewsExample::new(field(id_col)?.trim(), field(text_col)?, label));
    }
    Ok(out)
}

/// Loads the Covid-19 train/validation/test files from `dir`. Labels map
/// `real → 0`, `fake → 1`. Counts differing from the published table are
/// reported as warnings.
pub fn load_covid(dir: &Path) -> Result<DatasetBundle> {
    let mut splits = Vec::with_capacity(3);
    for (split, names) in COVID_FILES {
        let path = resolve(dir, names)?;
        info!("reading covid {split} split from {}", path.display());
        splits.push(read_covid_file(&path)?);
    }
    let test = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let mut bundle = DatasetBundle::new(DatasetKind::BinaryLong, train, validation, test);
    for (split, real, fake, total) in COVID_PUBLISHED {
        let counts = bundle.class_counts(split);
        let n = bundle.split(split).len();
        if counts != [real, fake] || n != total {
            bundle.warn(format!(
                "covid {split} split: observed real={} fake={} total={n}; published table lists real={real} fake={fake} total={total}",
                counts[0], counts[1]
            ));
        }
    }
    bundle.log_counts();
    Ok(bundle)
}

fn parse_count(raw: &str) -> Option<u32> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<u32>() {
        return Some(v);
    }
    let f: f64 = raw.parse().ok()?;
    (f >= 0.0 && f.fract() == 0.0 && f <= u32::MAX as f64).then_some(f as u32)
}

/// Reads one Liar split: 14 tab-separated columns (id, label, statement,
/// subject, speaker, job, state, party, five credit counts, context), no
/// header.
pub fn read_liar_file(path: &Path) -> Result<Vec<NewsExample>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .quoting(false)
        .flexible(true)
        .from_reader(open(path)?);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != 14 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 14 columns, got {}", record.len()),
            ));
        }
        let raw_label = record[1].trim();
        let label = LIAR_CLASSES
            .iter()
            .position(|c| c.eq_ignore_ascii_case(raw_label))
            .ok_or_else(|| Error::format(path, format!("line {line}: unknown label {raw_label:?}")))?;
        let mut counts = [0u32; 5];
        for (k, c) in counts.iter_mut().enumerate() {
            let raw = &record[8 + k];
            *c = parse_count(raw).ok_or_else(|| {
                Error::format(path, format!("line {line}: credit count {raw:?} is not a nonnegative integer"))
            })?;
        }
        out.push(NewsExample {
            id: record[0].trim().to_string(),
            text: record[2].to_string(),
            label,
            metadata: Some(SpeakerMetadata {
                subject: record[3].to_string(),
                speaker: record[4].to_string(),
                job: record[5].to_string(),
                state: record[6].to_string(),
                party: record[7].to_string(),
                context: record[13].to_string(),
            }),
            credit_history: Some(CreditHistory::new(counts)),
        });
    }
    Ok(out)
}

/// Loads the Liar train/valid/test TSV files from `dir`. Labels map
/// pants-fire, false, barely-true, half-true, mostly-true, true to 0..=5.
pub fn load_liar(dir: &Path) -> Result<DatasetBundle> {
    let mut splits = Vec::with_capacity(3);
    for (split, names) in LIAR_FILES {
        let path = resolve(dir, names)?;
        info!("reading liar {split} split from {}", path.display());
        splits.push(read_liar_file(&path)?);
    }
    let test = splits.pop().unwrap();
    let validation = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    let mut bundle = DatasetBundle::new(DatasetKind::MulticlassShort, train, validation, test);
    for (split, published) in LIAR_PUBLISHED {
        let n = bundle.split(split).len();
        if n != published {
            bundle.warn(format!("liar {split} split: observed {n} examples; published size is {published}"));
        }
    }
    bundle.log_counts();
    Ok(bundle)
}

pub fn load(kind: DatasetKind, dir: &Path) -> Result<DatasetBundle> {
    match kind {
        DatasetKind::BinaryLong => load_covid(dir),
        DatasetKind::MulticlassShort => load_liar(dir),
    }
}

/// Mean token count over a split.
pub fn average_token_length(split: &[NewsExample]) -> f64 {
    if split.is_empty() {
        return 0.0;
    }
    let total: usize = split.iter().map(|e| crate::features::tokenize(&e.text).len()).sum();
    total as f64 / split.len() as f64
}

/// Ids that occur more than once in `split`.
pub fn duplicate_ids(split: &[NewsExample]) -> Vec<String> {
    let mut seen = HashSet::new();
    split
        .iter()
        .filter(|e| !seen.insert(e.id.as_str()))
        .map(|e| e.id.clone())
        .collect()
}

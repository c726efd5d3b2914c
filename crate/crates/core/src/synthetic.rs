//! Separable synthetic corpora and writers for the on-disk dataset formats.
//!
//! Every example mixes random filler words with a few class-marker words, so
//! a model that learns the markers classifies the set perfectly. Labels are
//! assigned round-robin, which keeps the classes balanced.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{CreditHistory, DatasetKind, NewsExample, SpeakerMetadata, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub num_classes: usize,
    /// Tokens per example.
    pub length: usize,
    /// Class-marker tokens per example.
    pub markers: usize,
    pub filler_vocab: usize,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            examples: 64,
            num_classes: 2,
            length: 12,
            markers: 3,
            filler_vocab: 40,
            id_prefix: "syn".into(),
            seed: 0,
        }
    }
}

pub fn separable_examples(cfg: &SyntheticConfig) -> Vec<NewsExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.examples)
        .map(|i| {
            let label = i % cfg.num_classes.max(1);
            let mut words: Vec<String> = (0..cfg.length)
                .map(|_| format!("filler{}", rng.gen_range(0..cfg.filler_vocab.max(1))))
                .collect();
            for _ in 0..cfg.markers.min(cfg.length) {
                let pos = rng.gen_range(0..cfg.length);
                words[pos] = format!("marker{label}x{}", rng.gen_range(0..3));
            }
            let mut credit = [0u32; 5];
            for c in &mut credit {
                *c = rng.gen_range(0..3);
            }
            if label < credit.len() {
                credit[label] += 6;
            }
            NewsExample {
                id: format!("{}-{i}", cfg.id_prefix),
                text: words.join(" "),
                label,
                metadata: None,
                credit_history: Some(CreditHistory::new(credit)),
            }
        })
        .collect()
}

/// Train/validation/test splits drawn with distinct ids and seeds.
pub fn separable_splits(base: &SyntheticConfig, sizes: [usize; 3]) -> [Vec<NewsExample>; 3] {
    let mut out = Split::ALL.iter().zip(sizes).map(|(split, n)| {
        separable_examples(&SyntheticConfig {
            examples: n,
            id_prefix: format!("{}-{}", base.id_prefix, split.as_str()),
            seed: base.seed.wrapping_add(1 + *split as u64),
            ..base.clone()
        })
    });
    [out.next().unwrap(), out.next().unwrap(), out.next().unwrap()]
}

/// Writes a Covid-style CSV split (`id,tweet,label`).
pub fn write_covid_file(path: &Path, examples: &[NewsExample]) -> Result<()> {
    let names = DatasetKind::BinaryLong.class_names();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut row = |fields: &[&str]| w.write_record(fields).map_err(|e| Error::format(path, e.to_string()));
    row(&["id", "tweet", "label"])?;
    for ex in examples {
        row(&[&ex.id, &ex.text, &names[ex.label]])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a Liar-style 14-column TSV split. Text may not contain tabs or
/// line breaks.
pub fn write_liar_file(path: &Path, examples: &[NewsExample]) -> Result<()> {
    let names = DatasetKind::MulticlassShort.class_names();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let default_meta = SpeakerMetadata::default();
    for ex in examples {
        if ex.text.contains(['\t', '\n', '\r']) {
            return Err(Error::Contract(format!("example {} text contains a tab or line break", ex.id)));
        }
        let m = ex.metadata.as_ref().unwrap_or(&default_meta);
        let c = ex.credit_history.map(|c| c.as_array()).unwrap_or_default();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ex.id, names[ex.label], ex.text, m.subject, m.speaker, m.job, m.state, m.party, c[0], c[1], c[2], c[3], c[4], m.context
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes three splits in the layout [`crate::data::load`] expects.
pub fn write_dataset(kind: DatasetKind, dir: &Path, splits: &[Vec<NewsExample>; 3]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (split, examples) in Split::ALL.iter().zip(splits) {
        match kind {
            DatasetKind::BinaryLong => write_covid_file(&dir.join(format!("{}.csv", split.as_str())), examples)?,
            DatasetKind::MulticlassShort => {
                let name = if *split == Split::Validation { "valid" } else { split.as_str() };
                write_liar_file(&dir.join(format!("{name}.tsv")), examples)?
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let cfg = SyntheticConfig {
            num_classes: 6,
            examples: 60,
            ..SyntheticConfig::default()
        };
        let a = separable_examples(&cfg);
        assert_eq!(a, separable_examples(&cfg));
        for c in 0..6 {
            assert_eq!(a.iter().filter(|e| e.label == c).count(), 10);
        }
        assert!(a.iter().all(|e| e.text.contains(&format!("marker{}x", e.label))));
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [DatasetKind::BinaryLong, DatasetKind::MulticlassShort] {
            let base = SyntheticConfig {
                num_classes: kind.num_classes(),
                ..SyntheticConfig::default()
            };
            let splits = separable_splits(&base, [12, 6, 6]);
            let sub = dir.path().join(kind.as_str());
            write_dataset(kind, &sub, &splits).unwrap();
            let bundle = crate::data::load(kind, &sub).unwrap();
            for (split, expected) in Split::ALL.iter().zip(&splits) {
                let got = bundle.split(*split);
                assert_eq!(got.len(), expected.len());
                for (g, e) in got.iter().zip(expected) {
                    assert_eq!((&g.id, &g.text, g.label), (&e.id, &e.text, e.label));
                }
            }
        }
    }
}

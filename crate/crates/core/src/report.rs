//! Per-class corpus statistics: frequent words and sentiment histograms.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::NewsExample;
use crate::error::{Error, Result};
use crate::features::{tokenize, SentimentLexicon, Stopwords};

pub const POLARITY_BINS: usize = 21;
pub const SUBJECTIVITY_BINS: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassReport {
    pub class_name: String,
    pub documents: usize,
    /// `(token, count)` by descending count, ties by token.
    pub top_tokens: Vec<(String, usize)>,
    /// Bins of width 2/21 over `[-1, 1]`.
    pub polarity_hist: Vec<usize>,
    /// Bins of width 1/11 over `[0, 1]`.
    pub subjectivity_hist: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusReport {
    pub classes: Vec<ClassReport>,
}

fn bin(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    (((value - lo) / width).floor().max(0.0) as usize).min(bins - 1)
}

fn bin_edges(lo: f64, hi: f64, bins: usize, i: usize) -> (f64, f64) {
    let width = (hi - lo) / bins as f64;
    (lo + width * i as f64, lo + width * (i + 1) as f64)
}

pub fn corpus_report(
    split: &[NewsExample],
    class_names: &[String],
    stopwords: &Stopwords,
    lexicon: &SentimentLexicon,
    k: usize,
) -> Result<CorpusReport> {
    if split.is_empty() {
        return Err(Error::Empty("corpus report"));
    }
    let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); class_names.len()];
    let mut classes: Vec<ClassReport> = class_names
        .iter()
        .map(|name| ClassReport {
            class_name: name.clone(),
            documents: 0,
            top_tokens: Vec::new(),
            polarity_hist: vec![0; POLARITY_BINS],
            subjectivity_hist: vec![0; SUBJECTIVITY_BINS],
        })
        .collect();

    for ex in split {
        let report = classes.get_mut(ex.label).ok_or_else(|| {
            Error::Contract(format!("example {} has label {} outside the class table", ex.id, ex.label))
        })?;
        let tokens = tokenize(&ex.text);
        let (polarity, subjectivity) = lexicon.score_tokens(&tokens);
        report.documents += 1;
        report.polarity_hist[bin(polarity, -1.0, 1.0, POLARITY_BINS)] += 1;
        report.subjectivity_hist[bin(subjectivity, 0.0, 1.0, SUBJECTIVITY_BINS)] += 1;
        for tok in tokens.into_iter().filter(|t| !stopwords.contains(t)) {
            *counts[ex.label].entry(tok).or_default() += 1;
        }
    }

    for (report, table) in classes.iter_mut().zip(counts) {
        let mut ranked: Vec<(String, usize)> = table.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);
        report.top_tokens = ranked;
    }
    Ok(CorpusReport { classes })
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl CorpusReport {
    /// Writes `freq_<class>.csv` (`rank,token,count`), `polarity_hist.csv` and
    /// `subjectivity_hist.csv` (`class,bin,lower,upper,count`) into `dir`,
    /// creating it if needed.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut emit = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::File::create(&path)
                .and_then(|mut f| f.write_all(body.as_bytes()))
                .map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };

        for class in &self.classes {
            let mut body = String::from("rank,token,count\n");
            for (i, (tok, n)) in class.top_tokens.iter().enumerate() {
                body.push_str(&format!("{},{},{}\n", i + 1, csv_field(tok), n));
            }
            emit(format!("freq_{}.csv", file_safe(&class.class_name)), body)?;
        }

        let hist = |pick: fn(&ClassReport) -> &Vec<usize>, lo: f64, hi: f64, bins: usize| {
            let mut body = String::from("class,bin,lower,upper,count\n");
            for class in &self.classes {
                for (i, n) in pick(class).iter().enumerate() {
                    let (a, b) = bin_edges(lo, hi, bins, i);
                    body.push_str(&format!("{},{i},{a:.6},{b:.6},{n}\n", csv_field(&class.class_name)));
                }
            }
            body
        };
        emit(
            "polarity_hist.csv".into(),
            hist(|c| &c.polarity_hist, -1.0, 1.0, POLARITY_BINS),
        )?;
        emit(
            "subjectivity_hist.csv".into(),
            hist(|c| &c.subjectivity_hist, 0.0, 1.0, SUBJECTIVITY_BINS),
        )?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["real".into(), "fake".into()]
    }

    #[test]
    fn zero_polarity_lands_in_middle_bin() {
        assert_eq!(bin(0.0, -1.0, 1.0, POLARITY_BINS), 10);
        assert_eq!(bin(1.0, -1.0, 1.0, POLARITY_BINS), 20);
        assert_eq!(bin(-1.0, -1.0, 1.0, POLARITY_BINS), 0);
        assert_eq!(bin(0.0, 0.0, 1.0, SUBJECTIVITY_BINS), 0);
        assert_eq!(bin(1.0, 0.0, 1.0, SUBJECTIVITY_BINS), 10);
    }

    #[test]
    fn top_k_and_histograms() {
        let split = vec![
            NewsExample::new("1", "covid covid people claim", 1),
            NewsExample::new("2", "covid trump claim the", 1),
            NewsExample::new("3", "cases reported today", 0),
            NewsExample::new("4", "qwerty zxcv", 0),
        ];
        let lex = SentimentLexicon::parse("", "", "empty").unwrap();
        let report = corpus_report(&split, &names(), &Stopwords::bundled(), &lex, 10).unwrap();
        let fake = &report.classes[1];
        assert_eq!(fake.top_tokens[0], ("covid".to_string(), 3));
        assert_eq!(fake.top_tokens[1], ("claim".to_string(), 2));
        assert!(fake.top_tokens.iter().all(|(t, _)| t != "the"));
        assert_eq!(report.classes[0].top_tokens.len(), 5);
        for c in &report.classes {
            assert_eq!(c.polarity_hist.iter().sum::<usize>(), c.documents);
            assert_eq!(c.polarity_hist[10], c.documents);
            assert_eq!(c.subjectivity_hist[0], c.documents);
        }
        let report = corpus_report(&split, &names(), &Stopwords::bundled(), &lex, 2).unwrap();
        assert!(report.classes.iter().all(|c| c.top_tokens.len() == 2));
    }

    #[test]
    fn csv_output() {
        let split = vec![NewsExample::new("1", "good news", 0), NewsExample::new("2", "bad news", 1)];
        let report = corpus_report(&split, &names(), &Stopwords::bundled(), &SentimentLexicon::bundled(), 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        let files = report.write_csv(&out).unwrap();
        assert_eq!(files.len(), 4);
        let freq = fs::read_to_string(out.join("freq_fake.csv")).unwrap();
        assert!(freq.starts_with("rank,token,count\n"));
        let pol = fs::read_to_string(out.join("polarity_hist.csv")).unwrap();
        assert_eq!(pol.lines().count(), 1 + 2 * POLARITY_BINS);
    }

    #[test]
    fn empty_split_rejected() {
        assert!(corpus_report(&[], &names(), &Stopwords::bundled(), &SentimentLexicon::bundled(), 10).is_err());
    }
}

//! Tokenization, lexicon sentiment scoring and the 12-slot indirect feature
//! vector.
//!
//! Slot order of [`IndirectFeatureVector::values`]:
//!
//! | slot | feature |
//! |-----:|---------|
//! | 0 | word count |
//! | 1 | unique word count |
//! | 2 | letter count (alphabetic code points of the raw text) |
//! | 3 | stopword count |
//! | 4 | polarity in `[-1, 1]` |
//! | 5 | subjectivity in `[0, 1]` |
//! | 6 | unique / total words |
//! | 7..=11 | speaker credit history: barely-true, false, half-true, mostly-true, pants-fire |

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::NewsExample;
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 12;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "word_count",
    "unique_word_count",
    "letter_count",
    "stopword_count",
    "polarity",
    "subjectivity",
    "unique_ratio",
    "credit_barely_true",
    "credit_false",
    "credit_half_true",
    "credit_mostly_true",
    "credit_pants_fire",
];

const STD_FLOOR: f64 = 1e-8;

const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");
const BUNDLED_NEGATORS: &str = include_str!("../data/negators.txt");

/// SHA-256 of some versioned content.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        ContentHash(Sha256::digest(bytes).into())
    }

    pub fn of_parts(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        ContentHash(h.finalize().into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(ContentHash(bytes.try_into().ok()?))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ContentHash({})", &self.to_hex()[..12])
    }
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '\u{2019}'
}

/// Case-folded word tokens: maximal runs of letters, digits and apostrophes.
/// URLs and punctuation are dropped; leading/trailing apostrophes are trimmed
/// and the typographic apostrophe is normalized to `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace().filter(|c| !is_url(c)) {
        for run in chunk.split(|c: char| !is_word_char(c)) {
            let run = run.trim_matches(|c| c == '\'' || c == '\u{2019}');
            if run.is_empty() {
                continue;
            }
            tokens.push(run.to_lowercase().replace('\u{2019}', "'"));
        }
    }
    tokens
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct Stopwords {
    words: HashSet<String>,
    hash: ContentHash,
}

impl Stopwords {
    pub fn parse(text: &str) -> Self {
        Stopwords {
            words: content_lines(text).map(|(_, l)| l.to_lowercase()).collect(),
            hash: ContentHash::of(text.as_bytes()),
        }
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_STOPWORDS)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_text(path)?))
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        let text: String = words.into_iter().map(|w| format!("{}\n", w.as_ref())).collect();
        Self::parse(&text)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn hash(&self) -> ContentHash {
        self.hash
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LexiconEntry {
    pub polarity: f64,
    pub subjectivity: f64,
}

#[derive(Clone, Debug)]
pub struct SentimentLexicon {
    entries: HashMap<String, LexiconEntry>,
    negators: HashSet<String>,
    hash: ContentHash,
}

impl SentimentLexicon {
    /// Parses the tab-separated lexicon (`term, polarity, subjectivity`) and the
    /// one-per-line negator list. `source` names the lexicon in errors.
    pub fn parse(lexicon: &str, negators: &str, source: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (line_no, line) in content_lines(lexicon) {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    source,
                    format!("line {line_no}: expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let num = |s: &str, what: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::format(source, format!("line {line_no}: {what} {s:?} is not a number"))
                })
            };
            let polarity = num(fields[1], "polarity")?;
            let subjectivity = num(fields[2], "subjectivity")?;
            if !(-1.0..=1.0).contains(&polarity) || !(0.0..=1.0).contains(&subjectivity) {
                return Err(Error::format(
                    source,
                    format!("line {line_no}: polarity {polarity} or subjectivity {subjectivity} out of range"),
                ));
            }
            entries.insert(
                fields[0].trim().to_lowercase(),
                LexiconEntry {
                    polarity,
                    subjectivity,
                },
            );
        }
        Ok(SentimentLexicon {
            entries,
            negators: content_lines(negators).map(|(_, l)| l.to_lowercase()).collect(),
            hash: ContentHash::of_parts(&[lexicon.as_bytes(), negators.as_bytes()]),
        })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON, BUNDLED_NEGATORS, "bundled lexicon").expect("bundled lexicon is valid")
    }

    pub fn load(lexicon: &Path, negators: Option<&Path>) -> Result<Self> {
        let lex = read_text(lexicon)?;
        let neg = match negators {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        Self::parse(&lex, &neg, &lexicon.display().to_string())
    }

    pub fn get(&self, term: &str) -> Option<LexiconEntry> {
        self.entries.get(term).copied()
    }

    pub fn is_negator(&self, term: &str) -> bool {
        self.negators.contains(term)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hash(&self) -> ContentHash {
        self.hash
    }

    /// Mean polarity and subjectivity over lexicon hits in `tokens`. A hit
    /// directly preceded by a negator has its polarity negated. `(0, 0)`
    /// without hits.
    pub fn score_tokens(&self, tokens: &[String]) -> (f64, f64) {
        let mut polarity = 0.0;
        let mut subjectivity = 0.0;
        let mut hits = 0usize;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(entry) = self.get(tok) else { continue };
            let negated = i > 0 && self.is_negator(&tokens[i - 1]);
            polarity += if negated { -entry.polarity } else { entry.polarity };
            subjectivity += entry.subjectivity;
            hits += 1;
        }
        if hits == 0 {
            return (0.0, 0.0);
        }
        let n = hits as f64;
        ((polarity / n).clamp(-1.0, 1.0), (subjectivity / n).clamp(0.0, 1.0))
    }
}

pub fn polarity_subjectivity(text: &str, lexicon: &SentimentLexicon) -> (f64, f64) {
    lexicon.score_tokens(&tokenize(text))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountFeatures {
    pub word_count: usize,
    pub unique_word_count: usize,
    pub letter_count: usize,
    pub stopword_count: usize,
    pub unique_ratio: f64,
}

pub fn count_features(text: &str, stopwords: &Stopwords) -> CountFeatures {
    count_tokens(text, &tokenize(text), stopwords)
}

fn count_tokens(text: &str, tokens: &[String], stopwords: &Stopwords) -> CountFeatures {
    let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    let word_count = tokens.len();
    CountFeatures {
        word_count,
        unique_word_count: unique.len(),
        letter_count: text.chars().filter(|c| c.is_alphabetic()).count(),
        stopword_count: tokens.iter().filter(|t| stopwords.contains(t)).count(),
        unique_ratio: if word_count == 0 {
            0.0
        } else {
            unique.len() as f64 / word_count as f64
        },
    }
}

/// Lexicon and stopwords used to compute indirect features.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub lexicon: SentimentLexicon,
    pub stopwords: Stopwords,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor {
            lexicon: SentimentLexicon::bundled(),
            stopwords: Stopwords::bundled(),
        }
    }
}

impl FeatureExtractor {
    /// Unnormalized feature values.
    pub fn raw(&self, example: &NewsExample) -> [f64; FEATURE_COUNT] {
        let tokens = tokenize(&example.text);
        let counts = count_tokens(&example.text, &tokens, &self.stopwords);
        let (polarity, subjectivity) = self.lexicon.score_tokens(&tokens);
        let credit = example
            .credit_history
            .map(|c| c.as_array())
            .unwrap_or_default();
        [
            counts.word_count as f64,
            counts.unique_word_count as f64,
            counts.letter_count as f64,
            counts.stopword_count as f64,
            polarity,
            subjectivity,
            counts.unique_ratio,
            credit[0] as f64,
            credit[1] as f64,
            credit[2] as f64,
            credit[3] as f64,
            credit[4] as f64,
        ]
    }

    pub fn lexicon_hash(&self) -> ContentHash {
        self.lexicon.hash()
    }

    pub fn stopword_hash(&self) -> ContentHash {
        self.stopwords.hash()
    }
}

/// Per-slot z-score statistics, fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl NormalizationStats {
    /// Population mean and standard deviation (floored at 1e-8).
    pub fn fit(rows: &[[f64; FEATURE_COUNT]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("normalization statistics"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURE_COUNT];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; FEATURE_COUNT];
        for row in rows {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt().max(STD_FLOOR));
        Ok(NormalizationStats { mean, std })
    }

    pub fn apply(&self, raw: &[f64; FEATURE_COUNT]) -> [f64; FEATURE_COUNT] {
        let mut out = [0.0; FEATURE_COUNT];
        for i in 0..FEATURE_COUNT {
            out[i] = (raw[i] - self.mean[i]) / self.std[i];
        }
        out
    }
}

/// Normalized feature vector tagged with the lexicon and stopword versions it
/// was computed with.
#[derive(Clone, Debug, PartialEq)]
pub struct IndirectFeatureVector {
    pub values: [f64; FEATURE_COUNT],
    pub lexicon: ContentHash,
    pub stopwords: ContentHash,
}

pub fn indirect_feature_vector(
    example: &NewsExample,
    extractor: &FeatureExtractor,
    norm: Option<&NormalizationStats>,
) -> Result<IndirectFeatureVector> {
    let norm = norm.ok_or_else(|| {
        Error::Config("indirect features need normalization statistics from the training split".into())
    })?;
    Ok(IndirectFeatureVector {
        values: norm.apply(&extractor.raw(example)),
        lexicon: extractor.lexicon_hash(),
        stopwords: extractor.stopword_hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CreditHistory;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("The cat sat on the mat"), toks(&["the", "cat", "sat", "on", "the", "mat"]));
        assert_eq!(tokenize("COVID-19 spreads!"), toks(&["covid", "19", "spreads"]));
        assert_eq!(
            tokenize("Read https://t.co/x now, don't 'wait'"),
            toks(&["read", "now", "don't", "wait"])
        );
        assert_eq!(tokenize("Ünïcode Straße"), toks(&["ünïcode", "straße"]));
    }

    #[test]
    fn counts() {
        let sw = Stopwords::from_words(["the", "on"]);
        let c = count_features("", &sw);
        assert_eq!((c.word_count, c.unique_word_count, c.letter_count, c.stopword_count), (0, 0, 0, 0));
        assert_eq!(c.unique_ratio, 0.0);

        let c = count_features("The cat sat on the mat", &sw);
        assert_eq!((c.word_count, c.unique_word_count, c.letter_count, c.stopword_count), (6, 5, 17, 3));
        assert_eq!(c.unique_ratio, 5.0 / 6.0);

        let c = count_features("covid", &sw);
        assert_eq!((c.word_count, c.unique_word_count, c.letter_count, c.stopword_count), (1, 1, 5, 0));
        assert_eq!(c.unique_ratio, 1.0);
    }

    fn tiny_lexicon() -> SentimentLexicon {
        SentimentLexicon::parse("# test\ngood\t0.7\t0.6\nbad\t-0.5\t0.9\n", "not\n", "test").unwrap()
    }

    #[test]
    fn sentiment_scoring() {
        let lex = tiny_lexicon();
        assert_eq!(polarity_subjectivity("nothing here", &lex), (0.0, 0.0));
        assert_eq!(polarity_subjectivity("good", &lex), (0.7, 0.6));
        assert_eq!(polarity_subjectivity("not good", &lex), (-0.7, 0.6));
        let (p, s) = polarity_subjectivity("good and bad", &lex);
        assert!((p - 0.1).abs() < 1e-12 && (s - 0.75).abs() < 1e-12);
    }

    #[test]
    fn lexicon_rejects_bad_lines() {
        assert!(matches!(
            SentimentLexicon::parse("good\t1.5\t0.5\n", "", "x"),
            Err(Error::Format { .. })
        ));
        match SentimentLexicon::parse("ok\t0.1\t0.1\ngood 0.5 0.5\n", "", "x") {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("line 2"), "{detail}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bundled_resources_load() {
        let lex = SentimentLexicon::bundled();
        assert!(lex.len() > 200);
        assert!(lex.is_negator("not"));
        let sw = Stopwords::bundled();
        assert!(sw.len() > 150 && sw.contains("the"));
        assert_ne!(lex.hash(), ContentHash::default());
    }

    #[test]
    fn feature_vector_layout() {
        let ex = NewsExample::new("x", "", 0);
        let fx = FeatureExtractor::default();
        assert_eq!(fx.raw(&ex), [0.0; FEATURE_COUNT]);

        let mut liar = NewsExample::new("y", "Says taxes went up", 3);
        liar.credit_history = Some(CreditHistory::new([70, 71, 160, 163, 9]));
        let raw = fx.raw(&liar);
        assert_eq!(&raw[7..], &[70.0, 71.0, 160.0, 163.0, 9.0]);
    }

    #[test]
    fn missing_stats_is_an_error() {
        let ex = NewsExample::new("x", "text", 0);
        assert!(matches!(
            indirect_feature_vector(&ex, &FeatureExtractor::default(), None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zscore_of_training_split() {
        let rows: Vec<[f64; FEATURE_COUNT]> = (0..50)
            .map(|i| {
                let mut r = [0.0; FEATURE_COUNT];
                for (k, v) in r.iter_mut().enumerate() {
                    *v = ((i * (k + 3)) % 17) as f64 * (k as f64 + 0.5);
                }
                r[11] = 4.0; // constant slot
                r
            })
            .collect();
        let stats = NormalizationStats::fit(&rows).unwrap();
        let z: Vec<_> = rows.iter().map(|r| stats.apply(r)).collect();
        for k in 0..FEATURE_COUNT - 1 {
            let mean = z.iter().map(|r| r[k]).sum::<f64>() / z.len() as f64;
            let var = z.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(mean.abs() < 1e-9, "slot {k} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "slot {k} std {}", var.sqrt());
        }
        assert!(z.iter().all(|r| r[11] == 0.0));
    }
}

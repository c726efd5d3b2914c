//! Binary model checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"XCAP" | u32 version=1
//! u32 n | n bytes      canonical model config text (sorted `key = value` lines)
//! u8 has_features      1 → 12 f64 means | 12 f64 stds | 32-byte lexicon hash | 32-byte stopword hash
//! u8 has_vocab         1 → 32-byte vocab hash | u32 V | V × (u32 n | token bytes)
//! u32 P | P × (u32 n | name | u32 rank | rank × u32 dim | f32 values)
//! ```
//!
//! Parameters are stored as f32; training keeps them f32-representable, so a
//! save/load cycle reproduces predictions exactly.

use std::path::Path;

use crate::embeddings::Vocab;
use crate::error::{Error, Result};
use crate::features::{ContentHash, NormalizationStats, FEATURE_COUNT};
use crate::model::{FeatureState, Model, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"XCAP";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.at)))?;
        self.at += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn hash(&mut self) -> Result<ContentHash> {
        Ok(ContentHash(self.take(32)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8"))
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    w.bytes(model.config.canonical_text().as_bytes());

    match &model.features {
        Some(f) => {
            w.u8(1);
            f.stats.mean.iter().for_each(|&v| w.f64(v));
            f.stats.std.iter().for_each(|&v| w.f64(v));
            w.0.extend_from_slice(&f.lexicon.0);
            w.0.extend_from_slice(&f.stopwords.0);
        }
        None => w.u8(0),
    }
    match &model.vocab {
        Some(v) => {
            w.u8(1);
            w.0.extend_from_slice(&v.hash().0);
            w.u32(v.len());
            v.tokens().iter().for_each(|t| w.bytes(t.as_bytes()));
        }
        None => w.u8(0),
    }
    w.u32(model.params.len());
    for (_, name, t) in model.params.iter() {
        w.bytes(name.as_bytes());
        w.u32(t.rank());
        t.shape().iter().for_each(|&d| w.u32(d));
        for &v in t.data() {
            w.0.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.0
}

pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader { buf, at: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "missing XCAP header"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let text = r.string()?;
    let mut config = ModelConfig::default();
    for (k, v, _) in crate::config::parse_pairs(&text)? {
        config.set(&k, &v)?;
    }

    let features = match r.u8()? {
        0 => None,
        1 => {
            let mut mean = [0.0; FEATURE_COUNT];
            let mut std = [0.0; FEATURE_COUNT];
            for m in &mut mean {
                *m = r.f64()?;
            }
            for s in &mut std {
                *s = r.f64()?;
            }
            Some(FeatureState {
                stats: NormalizationStats { mean, std },
                lexicon: r.hash()?,
                stopwords: r.hash()?,
            })
        }
        f => return Err(Error::format(path, format!("bad feature flag {f}"))),
    };
    let vocab = match r.u8()? {
        0 => None,
        1 => {
            let expected = r.hash()?;
            let n = r.u32()?;
            let tokens = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
            let vocab = Vocab::new(tokens);
            if vocab.len() != n || vocab.hash() != expected {
                return Err(Error::HashMismatch {
                    what: "vocabulary",
                    expected: expected.to_hex(),
                    found: vocab.hash().to_hex(),
                });
            }
            Some(vocab)
        }
        f => return Err(Error::format(path, format!("bad vocabulary flag {f}"))),
    };

    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let tensor = Tensor::new(&shape, data).map_err(|e| Error::format(path, format!("tensor {name}: {e}")))?;
        params.add(name, tensor);
    }
    if r.at != buf.len() {
        return Err(Error::format(path, format!("{} trailing bytes", buf.len() - r.at)));
    }
    if !params.all_finite() {
        return Err(Error::format(path, "non-finite parameter values"));
    }
    Model::from_parts(config, params, vocab, features)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf, path)
}

//! Token embeddings: trainable static tables and frozen precomputed
//! per-example sequences.
//!
//! # File formats (all little-endian)
//!
//! Static table, two files:
//! - vocabulary: UTF-8, one token per line, line number = row index;
//! - matrix: `b"XEMB"`, `u32` version (1), `u32` V, `u32` D, then `V·D`
//!   `f32` values row-major.
//!
//! Precomputed store (`XSEQ`):
//!
//! ```text
//! b"XSEQ" | u32 version=1 | u32 D | u32 N
//! N × ( u32 id_len | id (UTF-8) | u32 L | L·D f32 )
//! index: u32 N | N × ( u32 id_len | id | u64 record_offset )
//! u64 index_offset                      (last 8 bytes of the file)
//! ```
//!
//! `record_offset` points at the record's `id_len` field. A store without a
//! valid footer is rejected.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::ContentHash;
use crate::tensor::Tensor;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

const XEMB_MAGIC: &[u8; 4] = b"XEMB";
const XSEQ_MAGIC: &[u8; 4] = b"XSEQ";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pad: usize,
    unk: usize,
}

impl Vocab {
    /// Builds a vocabulary from `tokens`; `<pad>` and `<unk>` are appended
    /// when absent.
    pub fn new(tokens: Vec<String>) -> Self {
        let mut vocab = Vocab {
            tokens: Vec::with_capacity(tokens.len() + 2),
            index: HashMap::with_capacity(tokens.len() + 2),
            pad: 0,
            unk: 0,
        };
        for t in tokens {
            vocab.push(t);
        }
        vocab.pad = vocab.ensure(PAD_TOKEN);
        vocab.unk = vocab.ensure(UNK_TOKEN);
        vocab
    }

    /// Vocabulary of tokens seen at least `min_count` times, most frequent
    /// first (ties by token), preceded by `<pad>` and `<unk>`.
    pub fn from_corpus<'a, I>(docs: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for t in doc {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
        Vocab::new(tokens)
    }

    fn push(&mut self, token: String) -> usize {
        let id = self.tokens.len();
        // duplicates keep the first row
        self.index.entry(token.clone()).or_insert(id);
        self.tokens.push(token);
        id
    }

    fn ensure(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) => i,
            None => self.push(token.to_string()),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    pub fn hash(&self) -> ContentHash {
        ContentHash::of(self.tokens.join("\n").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Vocab::new(text.lines().map(str::to_string).collect()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    /// `V×D`; the pad row is zero.
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Uniform `±scale` rows; pad and unk rows start at zero.
    pub fn random<R: Rng + ?Sized>(vocab: Vocab, dim: usize, scale: f64, trainable: bool, rng: &mut R) -> Self {
        let mut matrix = Tensor::uniform(&[vocab.len(), dim], -scale, scale, rng);
        for v in matrix.data_mut() {
            *v = *v as f32 as f64;
        }
        let mut table = EmbeddingTable {
            vocab,
            matrix,
            trainable,
        };
        table.zero_row(table.vocab.pad);
        table.zero_row(table.vocab.unk);
        table
    }

    fn zero_row(&mut self, row: usize) {
        let d = self.dim();
        self.matrix.data_mut()[row * d..(row + 1) * d].fill(0.0);
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        self.matrix.row(index)
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.vocab.lookup(token))
    }
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

/// Loads a vocabulary file and an `XEMB` matrix. Vocab files lacking
/// `<pad>`/`<unk>` get zero rows appended for them.
pub fn load_static_embeddings(vocab_path: &Path, matrix_path: &Path, trainable: bool) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
    let file_tokens: Vec<String> = text.lines().map(str::to_string).collect();
    let bytes = std::fs::read(matrix_path).map_err(|e| Error::io(matrix_path, e))?;
    if bytes.len() < 16 || &bytes[..4] != XEMB_MAGIC {
        return Err(Error::format(matrix_path, "missing XEMB header"));
    }
    let version = read_u32(&bytes, 4);
    if version != FORMAT_VERSION {
        return Err(Error::format(matrix_path, format!("unsupported XEMB version {version}")));
    }
    let (v, d) = (read_u32(&bytes, 8) as usize, read_u32(&bytes, 12) as usize);
    if v == 0 || d == 0 {
        return Err(Error::format(matrix_path, format!("header declares V={v}, D={d}")));
    }
    let expected = 16 + v * d * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            matrix_path,
            format!(
                "header declares V={v}, D={d} ({} values) but file holds {} values",
                v * d,
                (bytes.len() - 16) / 4
            ),
        ));
    }
    if file_tokens.len() != v {
        return Err(Error::format(
            vocab_path,
            format!("vocabulary has {} tokens but matrix header declares V={v}", file_tokens.len()),
        ));
    }
    let values: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let vocab = Vocab::new(file_tokens);
    let mut data = values;
    data.resize(vocab.len() * d, 0.0);
    let mut table = EmbeddingTable {
        matrix: Tensor::new(&[vocab.len(), d], data)?,
        vocab,
        trainable,
    };
    table.zero_row(table.vocab.pad);
    Ok(table)
}

/// Writes `table` as a vocabulary file plus an `XEMB` matrix.
pub fn write_static_embeddings(table: &EmbeddingTable, vocab_path: &Path, matrix_path: &Path) -> Result<()> {
    let mut vocab = table.vocab.tokens().join("\n");
    vocab.push('\n');
    std::fs::write(vocab_path, vocab).map_err(|e| Error::io(vocab_path, e))?;
    let (v, d) = (table.matrix.shape()[0], table.dim());
    let mut out = Vec::with_capacity(16 + v * d * 4);
    out.extend_from_slice(XEMB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &x in table.matrix.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    std::fs::write(matrix_path, out).map_err(|e| Error::io(matrix_path, e))
}

/// Embedded example: `L×D` with rows at and beyond `true_length` zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSequence {
    pub matrix: Tensor,
    pub true_length: usize,
    pub example_id: String,
    /// Table row for each of the first `true_length` positions; empty for
    /// precomputed sequences.
    pub rows: Vec<usize>,
}

impl EmbeddedSequence {
    pub fn len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.true_length == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    /// Pads or truncates a precomputed `L×D` matrix to `max_len` rows.
    pub fn from_matrix(id: impl Into<String>, data: &[f32], len: usize, dim: usize, max_len: usize) -> Self {
        let max_len = max_len.max(1);
        let keep = len.min(max_len);
        let mut values = vec![0.0; max_len * dim];
        for (dst, src) in values.iter_mut().zip(&data[..keep * dim]) {
            *dst = *src as f64;
        }
        EmbeddedSequence {
            matrix: Tensor::from_parts(vec![max_len, dim], values),
            true_length: keep,
            example_id: id.into(),
            rows: Vec::new(),
        }
    }
}

/// Token row indices for the first `max_len` tokens.
pub fn token_rows(tokens: &[String], vocab: &Vocab, max_len: usize) -> Vec<usize> {
    tokens.iter().take(max_len.max(1)).map(|t| vocab.lookup(t)).collect()
}

/// Looks up token rows and zero-pads to `max_len` (values below 1 act as 1).
pub fn embed_rows(rows: &[usize], table: &Tensor, max_len: usize, id: &str) -> EmbeddedSequence {
    let max_len = max_len.max(1);
    let d = table.shape()[1];
    let rows = &rows[..rows.len().min(max_len)];
    let mut values = vec![0.0; max_len * d];
    for (dst, &r) in values.chunks_mut(d).zip(rows) {
        dst.copy_from_slice(table.row(r));
    }
    EmbeddedSequence {
        matrix: Tensor::from_parts(vec![max_len, d], values),
        true_length: rows.len(),
        example_id: id.to_string(),
        rows: rows.to_vec(),
    }
}

pub fn embed_sequence(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> EmbeddedSequence {
    let rows = token_rows(tokens, &table.vocab, max_len);
    embed_rows(&rows, &table.matrix, max_len, "")
}

/// Read-only handle on an `XSEQ` store.
#[derive(Debug)]
pub struct PrecomputedStore {
    path: PathBuf,
    dim: usize,
    index: HashMap<String, u64>,
    ids: Vec<String>,
    file: Mutex<File>,
}

impl PrecomputedStore {
    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let io = |e| Error::io(path, e);
        let size = file.metadata().map_err(io)?.len();
        if size < 24 {
            return Err(Error::format(path, "file too short for an XSEQ store"));
        }
        let mut header = [0u8; 16];
        file.read_exact(&mut header).map_err(io)?;
        if &header[..4] != XSEQ_MAGIC {
            return Err(Error::format(path, "missing XSEQ header"));
        }
        let version = read_u32(&header, 4);
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported XSEQ version {version}")));
        }
        let dim = read_u32(&header, 8) as usize;
        let count = read_u32(&header, 12) as usize;
        if dim == 0 {
            return Err(Error::format(path, "header declares D=0"));
        }

        file.seek(SeekFrom::End(-8)).map_err(io)?;
        let mut footer = [0u8; 8];
        file.read_exact(&mut footer).map_err(io)?;
        let index_offset = u64::from_le_bytes(footer);
        if index_offset < 16 || index_offset + 4 > size - 8 {
            return Err(Error::format(path, "missing or corrupt footer (store truncated?)"));
        }
        let mut index_bytes = vec![0u8; (size - 8 - index_offset) as usize];
        file.seek(SeekFrom::Start(index_offset)).map_err(io)?;
        file.read_exact(&mut index_bytes).map_err(io)?;

        let corrupt = || Error::format(path, "corrupt index");
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = index_bytes.get(at..at + n).ok_or_else(corrupt)?;
            at += n;
            Ok(s)
        };
        let n_index = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n_index != count {
            return Err(Error::format(
                path,
                format!("header declares {count} records but index lists {n_index}"),
            ));
        }
        let mut index = HashMap::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| corrupt())?;
            let offset = u64::from_le_bytes(take(8)?.try_into().unwrap());
            if offset >= index_offset {
                return Err(corrupt());
            }
            index.insert(id.clone(), offset);
            ids.push(id);
        }
        Ok(PrecomputedStore {
            path: path.to_path_buf(),
            dim,
            index,
            ids,
            file: Mutex::new(file),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Raw `(values, L)` of one record.
    pub fn read_raw(&self, id: &str) -> Result<(Vec<f32>, usize)> {
        let offset = *self.index.get(id).ok_or_else(|| Error::Lookup(id.to_string()))?;
        let mut file = self.file.lock().expect("store lock poisoned");
        let io = |e| Error::io(&self.path, e);
        file.seek(SeekFrom::Start(offset)).map_err(io)?;
        let mut word = [0u8; 4];
        file.read_exact(&mut word).map_err(io)?;
        let id_len = u32::from_le_bytes(word) as usize;
        let mut stored_id = vec![0u8; id_len];
        file.read_exact(&mut stored_id).map_err(io)?;
        if stored_id != id.as_bytes() {
            return Err(Error::format(&self.path, format!("index entry for {id:?} points at another record")));
        }
        file.read_exact(&mut word).map_err(io)?;
        let len = u32::from_le_bytes(word) as usize;
        if len == 0 {
            return Err(Error::format(&self.path, format!("record {id:?} has L=0")));
        }
        let mut raw = vec![0u8; len * self.dim * 4];
        file.read_exact(&mut raw).map_err(io)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((values, len))
    }

    /// Stored `L×D` matrix of one example.
    pub fn load(&self, id: &str) -> Result<EmbeddedSequence> {
        let (values, len) = self.read_raw(id)?;
        let matrix = Tensor::new(&[len, self.dim], values.into_iter().map(f64::from).collect())?;
        Ok(EmbeddedSequence {
            matrix,
            true_length: len,
            example_id: id.to_string(),
            rows: Vec::new(),
        })
    }
}

pub fn load_precomputed(store_path: &Path, example_id: &str) -> Result<EmbeddedSequence> {
    PrecomputedStore::open(store_path)?.load(example_id)
}

/// Streaming `XSEQ` writer; the store is only readable after [`finish`](Self::finish).
pub struct XseqWriter {
    out: BufWriter<File>,
    path: PathBuf,
    dim: usize,
    offset: u64,
    index: Vec<(String, u64)>,
}

impl XseqWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut header = Vec::with_capacity(16);
        header.extend_from_slice(XSEQ_MAGIC);
        header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        header.extend_from_slice(&(dim as u32).to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(path, e))?;
        Ok(XseqWriter {
            out,
            path: path.to_path_buf(),
            dim,
            offset: 16,
            index: Vec::new(),
        })
    }

    /// Appends one `L×D` record (`values.len() == L·D`).
    pub fn append(&mut self, id: &str, values: &[f32]) -> Result<()> {
        if values.is_empty() || !values.len().is_multiple_of(self.dim) {
            return Err(Error::dim(
                "xseq append",
                format!("{} values is not a positive multiple of D={}", values.len(), self.dim),
            ));
        }
        let len = values.len() / self.dim;
        let io = |e| Error::io(&self.path, e);
        self.index.push((id.to_string(), self.offset));
        self.out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
        self.out.write_all(id.as_bytes()).map_err(io)?;
        self.out.write_all(&(len as u32).to_le_bytes()).map_err(io)?;
        for v in values {
            self.out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        self.offset += 8 + id.len() as u64 + 4 * values.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        let io = |e| Error::io(&self.path, e);
        let index_offset = self.offset;
        self.out.write_all(&(self.index.len() as u32).to_le_bytes()).map_err(io)?;
        for (id, off) in &self.index {
            self.out.write_all(&(id.len() as u32).to_le_bytes()).map_err(io)?;
            self.out.write_all(id.as_bytes()).map_err(io)?;
            self.out.write_all(&off.to_le_bytes()).map_err(io)?;
        }
        self.out.write_all(&index_offset.to_le_bytes()).map_err(io)?;
        let mut file = self.out.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        file.seek(SeekFrom::Start(12)).map_err(io)?;
        file.write_all(&(self.index.len() as u32).to_le_bytes()).map_err(io)?;
        file.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_table() -> EmbeddingTable {
        let vocab = Vocab::new(vec!["alpha".into(), "beta".into(), "gamma".into()]);
        let mut m = Tensor::zeros(&[vocab.len(), 4]);
        for (i, v) in m.data_mut().iter_mut().enumerate().take(12) {
            *v = (i as f32 * 0.25 - 1.0) as f64;
        }
        EmbeddingTable {
            vocab,
            matrix: m,
            trainable: true,
        }
    }

    #[test]
    fn static_round_trip_and_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let (vp, mp) = (dir.path().join("vocab.txt"), dir.path().join("emb.xemb"));
        let table = fixture_table();
        write_static_embeddings(&table, &vp, &mp).unwrap();
        let loaded = load_static_embeddings(&vp, &mp, true).unwrap();
        for w in ["alpha", "beta", "gamma"] {
            assert_eq!(loaded.lookup(w), table.lookup(w));
        }
        assert_eq!(loaded.vocab.lookup("delta"), loaded.vocab.unk());
        assert_eq!(loaded.lookup("delta"), &[0.0; 4]);
    }

    #[test]
    fn vocab_without_specials_gets_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let (vp, mp) = (dir.path().join("v"), dir.path().join("m"));
        std::fs::write(&vp, "x\ny\n").unwrap();
        let mut bytes = b"XEMB".to_vec();
        for w in [1u32, 2, 3] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for i in 0..6 {
            bytes.extend_from_slice(&(i as f32 + 1.0).to_le_bytes());
        }
        std::fs::write(&mp, bytes).unwrap();
        let t = load_static_embeddings(&vp, &mp, false).unwrap();
        assert_eq!(t.vocab.len(), 4);
        assert_eq!(t.row(t.vocab.pad()), &[0.0; 3]);
        assert_eq!(t.lookup("y"), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn short_rows_are_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (vp, mp) = (dir.path().join("v"), dir.path().join("m"));
        std::fs::write(&vp, "a\nb\nc\n").unwrap();
        let mut bytes = b"XEMB".to_vec();
        for w in [1u32, 3, 100] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        bytes.extend(std::iter::repeat_n(0u8, 3 * 99 * 4));
        std::fs::write(&mp, bytes).unwrap();
        match load_static_embeddings(&vp, &mp, true) {
            Err(Error::Format { detail, .. }) => assert!(detail.contains("D=100") && detail.contains("297"), "{detail}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embed_sequence_padding_and_truncation() {
        let table = fixture_table();
        let empty = embed_sequence(&[], &table, 5);
        assert_eq!(empty.matrix.shape(), &[5, 4]);
        assert_eq!(empty.true_length, 0);
        assert!(empty.matrix.data().iter().all(|&v| v == 0.0));

        let toks: Vec<String> = ["alpha", "beta", "gamma"].iter().map(|s| s.to_string()).collect();
        let seq = embed_sequence(&toks, &table, 5);
        assert_eq!(seq.matrix.row(1), table.lookup("beta"));
        assert!(seq.matrix.data()[12..].iter().all(|&v| v == 0.0));

        let long: Vec<String> = (0..80).map(|i| format!("w{i}")).collect();
        let seq = embed_sequence(&long, &table, 64);
        assert_eq!((seq.true_length, seq.matrix.shape()[0], seq.rows.len()), (64, 64, 64));
    }

    #[test]
    fn xseq_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.xseq");
        let mut w = XseqWriter::create(&path, 3).unwrap();
        let a: Vec<f32> = vec![0.1, -2.5, 3.25, 1e-7, 7.0, f32::MIN_POSITIVE];
        w.append("ex-a", &a).unwrap();
        w.append("ex-b", &[9.0, 8.0, 7.0]).unwrap();
        w.finish().unwrap();

        let store = PrecomputedStore::open(&path).unwrap();
        assert_eq!((store.dim(), store.len()), (3, 2));
        let (raw, len) = store.read_raw("ex-a").unwrap();
        assert_eq!(len, 2);
        assert_eq!(raw.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), a.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let seq = store.load("ex-b").unwrap();
        assert_eq!(seq.matrix.shape(), &[1, 3]);
        match store.load("missing") {
            Err(Error::Lookup(id)) => assert_eq!(id, "missing"),
            other => panic!("{other:?}"),
        }

        let bytes = std::fs::read(&path).unwrap();
        let truncated = dir.path().join("t.xseq");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(PrecomputedStore::open(&truncated), Err(Error::Format { .. })));
    }

    #[test]
    fn from_matrix_pads_and_truncates() {
        let data: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let s = EmbeddedSequence::from_matrix("x", &data, 3, 2, 5);
        assert_eq!(s.true_length, 3);
        assert_eq!(s.matrix.data()[..6], [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(s.matrix.data()[6..].iter().all(|&v| v == 0.0));
        let s = EmbeddedSequence::from_matrix("x", &data, 3, 2, 2);
        assert_eq!((s.true_length, s.len()), (2, 2));
    }
}

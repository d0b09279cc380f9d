//! Subword embeddings for package names.
//!
//! A word is represented by the mean of its hashed character n-gram vectors
//! (with `<` and `>` boundary markers) plus a whole-word vector when the word
//! was seen in training. Training is skip-gram with negative sampling over
//! delimiter-split name tokens; each concatenated name is also paired with
//! its own tokens so that the full-name vectors land near their parts.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EmbedError;
use crate::registry::{normalize, tokens, PackageRef};

const MAGIC: &[u8; 7] = b"PKGVEC1";
const FORMAT_VERSION: u32 = 1;
const TRAILER: &[u8; 4] = b"END\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamePart {
    Full,
    Namespace,
    Identifier,
}

impl NamePart {
    pub fn as_str(self) -> &'static str {
        match self {
            NamePart::Full => "full",
            NamePart::Namespace => "namespace",
            NamePart::Identifier => "identifier",
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            NamePart::Full => 0,
            NamePart::Namespace => 1,
            NamePart::Identifier => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(NamePart::Full),
            1 => Some(NamePart::Namespace),
            2 => Some(NamePart::Identifier),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub dimension: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u32,
    pub epochs: usize,
    pub window: usize,
    pub negative: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Fraction of names held out to report a per-epoch validation loss.
    pub holdout_fraction: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            dimension: 100,
            min_n: 3,
            max_n: 6,
            buckets: 1 << 20,
            epochs: 5,
            window: 5,
            negative: 5,
            learning_rate: 0.05,
            seed: 42,
            holdout_fraction: 0.05,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::InvalidParams(m.to_string()));
        if self.dimension == 0 {
            return bad("dimension must be > 0");
        }
        if self.min_n == 0 || self.min_n > self.max_n {
            return bad("n-gram range must satisfy 1 <= min_n <= max_n");
        }
        if self.buckets == 0 {
            return bad("bucket count must be > 0");
        }
        if self.epochs == 0 || self.window == 0 || self.negative == 0 {
            return bad("epochs, window and negative must be > 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..0.5).contains(&self.holdout_fraction) {
            return bad("holdout fraction must be in [0, 0.5)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub vocabulary: usize,
    pub training_names: usize,
    pub holdout_names: usize,
    /// Mean held-out negative-sampling loss after each epoch; empty when
    /// nothing was held out.
    pub holdout_loss: Vec<f64>,
}

/// Unit-length embedding of a name or name component.
#[derive(Debug, Clone, PartialEq)]
pub struct NameEmbedding {
    vector: Vec<f32>,
}

impl NameEmbedding {
    /// Normalizes `v`; `None` for an empty or zero vector.
    pub fn from_vec(v: Vec<f32>) -> Option<Self> {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if v.is_empty() || !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        Some(NameEmbedding {
            vector: v.into_iter().map(|x| (f64::from(x) / norm) as f32).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }
}

pub fn cosine(a: &NameEmbedding, b: &NameEmbedding) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    Ok(dot(&a.vector, &b.vector).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Initial value for a row that training never touched. Uniform in
/// [-1/dim, 1/dim], keyed by (seed, row key).
fn init_row(seed: u64, key: u64, dim: usize, out: &mut [f32]) {
    let bound = 1.0 / dim as f64;
    let base = splitmix64(seed ^ splitmix64(key));
    for (i, slot) in out.iter_mut().enumerate() {
        let r = splitmix64(base.wrapping_add(i as u64));
        let unit = (r >> 11) as f64 / (1u64 << 53) as f64;
        *slot = ((unit * 2.0 - 1.0) * bound) as f32;
    }
}

const WORD_KEY_BASE: u64 = 1 << 40;

fn ngram_buckets(word: &str, min_n: usize, max_n: usize, buckets: u32) -> Vec<u32> {
    let marked: Vec<char> = std::iter::once('<')
        .chain(word.chars())
        .chain(std::iter::once('>'))
        .collect();
    let mut out = Vec::new();
    let mut buf = String::new();
    for n in min_n..=max_n {
        if n > marked.len() {
            break;
        }
        for w in marked.windows(n) {
            buf.clear();
            buf.extend(w);
            out.push(fnv1a(buf.as_bytes()) % buckets);
        }
    }
    if out.is_empty() {
        buf.clear();
        buf.extend(&marked);
        out.push(fnv1a(buf.as_bytes()) % buckets);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub dimension: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: u32,
    pub epochs: usize,
    pub window: usize,
    pub negative: usize,
    pub seed: u64,
}

/// Trained, immutable embedding model.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    meta: ModelMeta,
    words: HashMap<String, Vec<f32>>,
    subword_index: HashMap<u32, usize>,
    subword_data: Vec<f32>,
}

impl PartialEq for EmbeddingModel {
    fn eq(&self, other: &Self) -> bool {
        let d = self.meta.dimension;
        self.meta == other.meta
            && self.words == other.words
            && self.subword_index.len() == other.subword_index.len()
            && self.subword_index.iter().all(|(b, &r)| match other.subword_index.get(b) {
                Some(&o) => self.subword_data[r * d..(r + 1) * d] == other.subword_data[o * d..(o + 1) * d],
                None => false,
            })
    }
}

impl EmbeddingModel {
    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn dimension(&self) -> usize {
        self.meta.dimension
    }

    pub fn vocabulary_size(&self) -> usize {
        self.words.len()
    }

    pub fn trained_buckets(&self) -> usize {
        self.subword_index.len()
    }

    /// Train on raw or normalized names. Names are split on delimiters into
    /// tokens; the normalized concatenation is a word of its own.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        params: &TrainParams,
    ) -> Result<(EmbeddingModel, TrainReport), EmbedError> {
        params.validate()?;
        let names: Vec<&str> = corpus
            .iter()
            .map(AsRef::as_ref)
            .filter(|s| !normalize(s).is_empty())
            .collect();
        if names.is_empty() {
            return Err(EmbedError::EmptyCorpus);
        }
        Trainer::new(&names, params).run()
    }

    /// Train on parsed packages. Golang host domains are left out, as in
    /// the search key.
    pub fn train_packages(
        packages: &[PackageRef],
        params: &TrainParams,
    ) -> Result<(EmbeddingModel, TrainReport), EmbedError> {
        let names: Vec<String> = packages.iter().map(training_text).collect();
        Self::train(&names, params)
    }

    fn subword(&self, bucket: u32, out: &mut [f32]) {
        match self.subword_index.get(&bucket) {
            Some(&row) => {
                let d = self.meta.dimension;
                out.copy_from_slice(&self.subword_data[row * d..(row + 1) * d]);
            }
            None => init_row(self.meta.seed, u64::from(bucket), self.meta.dimension, out),
        }
    }

    fn raw_vector(&self, word: &str) -> Vec<f32> {
        let d = self.meta.dimension;
        let mut acc = vec![0f32; d];
        let mut row = vec![0f32; d];
        let mut count = 0usize;
        for b in ngram_buckets(word, self.meta.min_n, self.meta.max_n, self.meta.buckets) {
            self.subword(b, &mut row);
            acc.iter_mut().zip(&row).for_each(|(a, r)| *a += r);
            count += 1;
        }
        if let Some(v) = self.words.get(word) {
            acc.iter_mut().zip(v).for_each(|(a, r)| *a += r);
            count += 1;
        }
        let inv = 1.0 / count as f32;
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    }

    /// Embedding of an arbitrary string after name normalization. Never
    /// fails: unseen strings are covered by their n-grams.
    pub fn embed_str(&self, s: &str) -> NameEmbedding {
        let word = normalize(s);
        NameEmbedding::from_vec(self.raw_vector(&word)).unwrap_or_else(|| {
            let mut v = vec![0f32; self.meta.dimension];
            v[0] = 1.0;
            NameEmbedding { vector: v }
        })
    }

    /// Embedding of one part of a package name. The full name uses the
    /// package's search key, which leaves out Golang host domains.
    pub fn embed(&self, package: &PackageRef, part: NamePart) -> Result<NameEmbedding, EmbedError> {
        let text = match part {
            NamePart::Full => package.search_key(),
            NamePart::Namespace => package
                .namespace_key()
                .ok_or(EmbedError::MissingComponent("namespace"))?,
            NamePart::Identifier => {
                if !package.is_hierarchical() {
                    return Err(EmbedError::MissingComponent("identifier"));
                }
                package.identifier_key()
            }
        };
        Ok(self.embed_str(&text))
    }

    /// Final vectors of every vocabulary word, sorted by word.
    pub fn export_dump(&self) -> VectorDump {
        let mut entries: Vec<(String, Vec<f32>)> = self
            .words
            .keys()
            .map(|w| (w.clone(), self.embed_str(w).vector))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        VectorDump {
            dimension: self.meta.dimension,
            entries,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        let tmp = tmp_path(path);
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = &self.meta;
        w.write_all(MAGIC)?;
        put_u32(w, FORMAT_VERSION)?;
        for v in [m.dimension, m.min_n, m.max_n] {
            put_u32(w, v as u32)?;
        }
        put_u32(w, m.buckets)?;
        for v in [m.epochs, m.window, m.negative] {
            put_u32(w, v as u32)?;
        }
        put_u64(w, m.seed)?;

        let mut words: Vec<(&String, &Vec<f32>)> = self.words.iter().collect();
        words.sort_by(|a, b| a.0.cmp(b.0));
        put_u64(w, words.len() as u64)?;
        for (word, v) in words {
            put_u32(w, word.len() as u32)?;
            w.write_all(word.as_bytes())?;
            put_f32s(w, v)?;
        }

        let mut rows: Vec<(u32, usize)> = self.subword_index.iter().map(|(&b, &r)| (b, r)).collect();
        rows.sort_unstable();
        put_u64(w, rows.len() as u64)?;
        let d = m.dimension;
        for (bucket, row) in rows {
            put_u32(w, bucket)?;
            put_f32s(w, &self.subword_data[row * d..(row + 1) * d])?;
        }
        w.write_all(TRAILER)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingModel, EmbedError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    fn read_from<R: Read>(r: &mut R) -> Result<EmbeddingModel, EmbedError> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(EmbedError::FormatVersionMismatch("bad magic header".into()));
        }
        let version = get_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(EmbedError::FormatVersionMismatch(format!(
                "unsupported model version {version}"
            )));
        }
        let dimension = get_u32(r)? as usize;
        let min_n = get_u32(r)? as usize;
        let max_n = get_u32(r)? as usize;
        let buckets = get_u32(r)?;
        let epochs = get_u32(r)? as usize;
        let window = get_u32(r)? as usize;
        let negative = get_u32(r)? as usize;
        let seed = get_u64(r)?;
        if dimension == 0 || buckets == 0 || min_n == 0 || min_n > max_n {
            return Err(EmbedError::FormatVersionMismatch("invalid header values".into()));
        }
        let meta = ModelMeta {
            dimension,
            min_n,
            max_n,
            buckets,
            epochs,
            window,
            negative,
            seed,
        };

        let word_count = get_u64(r)?;
        let mut words = HashMap::new();
        for _ in 0..word_count {
            let len = get_u32(r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let word = String::from_utf8(buf)
                .map_err(|_| EmbedError::FormatVersionMismatch("word is not UTF-8".into()))?;
            words.insert(word, get_f32s(r, dimension)?);
        }

        let row_count = get_u64(r)? as usize;
        let mut subword_index = HashMap::with_capacity(row_count);
        let mut subword_data = Vec::with_capacity(row_count.min(1 << 24) * dimension);
        for row in 0..row_count {
            let bucket = get_u32(r)?;
            if bucket >= buckets {
                return Err(EmbedError::FormatVersionMismatch("bucket out of range".into()));
            }
            subword_index.insert(bucket, row);
            subword_data.extend(get_f32s(r, dimension)?);
        }
        let mut trailer = [0u8; 4];
        r.read_exact(&mut trailer)?;
        if &trailer != TRAILER {
            return Err(EmbedError::FormatVersionMismatch("missing trailer".into()));
        }
        Ok(EmbeddingModel {
            meta,
            words,
            subword_index,
            subword_data,
        })
    }
}

pub(crate) fn tmp_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn put_f32s<W: Write>(w: &mut W, v: &[f32]) -> io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn get_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn get_f32s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Plain-text vectors: a "count dim" header, then "token v1 ... vd" lines.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorDump {
    pub dimension: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

impl VectorDump {
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {}", self.entries.len(), self.dimension)?;
        for (token, v) in &self.entries {
            write!(w, "{token}")?;
            for x in v {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<VectorDump, EmbedError> {
        let bad = |m: String| EmbedError::FormatVersionMismatch(m);
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| bad("empty vector dump".into()))??;
        let mut it = header.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<usize>().ok());
        let (Some(count), Some(dimension)) = (parse(it.next()), parse(it.next())) else {
            return Err(bad(format!("bad header {header:?}")));
        };
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let v: Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
            let v = v.map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            if v.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    left: dimension,
                    right: v.len(),
                });
            }
            entries.push((token, v));
        }
        if entries.len() != count {
            return Err(bad(format!("header says {count} vectors, found {}", entries.len())));
        }
        Ok(VectorDump { dimension, entries })
    }
}

struct Trainer<'a> {
    params: &'a TrainParams,
    rng: ChaCha8Rng,
    /// word id -> input rows (n-gram rows then the word row)
    components: Vec<Vec<usize>>,
    vocab: Vec<String>,
    input: Vec<f32>,
    output: Vec<f32>,
    bucket_rows: HashMap<u32, usize>,
    cumulative: Vec<f64>,
    sentences: Vec<Vec<usize>>,
    holdout: Vec<(Vec<u32>, Option<usize>, usize)>,
    holdout_names: usize,
}

impl<'a> Trainer<'a> {
    fn new(names: &[&str], params: &'a TrainParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.shuffle(&mut rng);
        let held = if names.len() >= 40 {
            ((names.len() as f64 * params.holdout_fraction) as usize).min(1000)
        } else {
            0
        };
        let (held_idx, train_idx) = order.split_at(held);
        let mut train_idx = train_idx.to_vec();
        train_idx.sort_unstable();

        let mut vocab: Vec<String> = Vec::new();
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut counts: Vec<u64> = Vec::new();
        let mut sentences = Vec::with_capacity(train_idx.len());
        for &i in &train_idx {
            let sentence: Vec<usize> = sentence_words(names[i])
                .into_iter()
                .map(|w| {
                    let id = *ids.entry(w.clone()).or_insert_with(|| {
                        vocab.push(w);
                        counts.push(0);
                        vocab.len() - 1
                    });
                    counts[id] += 1;
                    id
                })
                .collect();
            sentences.push(sentence);
        }

        let d = params.dimension;
        let mut input = vec![0f32; vocab.len() * d];
        for (i, w) in vocab.iter().enumerate() {
            init_row(params.seed, WORD_KEY_BASE + u64::from(fnv1a(w.as_bytes())), d, &mut input[i * d..(i + 1) * d]);
        }
        let mut bucket_rows: HashMap<u32, usize> = HashMap::new();
        let mut components = Vec::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            let mut rows = Vec::new();
            for b in ngram_buckets(w, params.min_n, params.max_n, params.buckets) {
                let row = *bucket_rows.entry(b).or_insert_with(|| {
                    let row = input.len() / d;
                    input.resize(input.len() + d, 0.0);
                    init_row(params.seed, u64::from(b), d, &mut input[row * d..]);
                    row
                });
                rows.push(row);
            }
            rows.push(i);
            components.push(rows);
        }

        let mut cumulative = Vec::with_capacity(counts.len());
        let mut acc = 0.0;
        for &c in &counts {
            acc += (c as f64).powf(0.75);
            cumulative.push(acc);
        }

        // Held-out pairs: (center n-gram buckets, center word id if known, context id).
        let mut holdout = Vec::new();
        for &i in held_idx {
            let words = sentence_words(names[i]);
            for (center, context) in sentence_pairs(words.len(), params.window) {
                if let Some(&ctx) = ids.get(&words[context]) {
                    let buckets = ngram_buckets(&words[center], params.min_n, params.max_n, params.buckets);
                    holdout.push((buckets, ids.get(&words[center]).copied(), ctx));
                }
            }
        }

        Trainer {
            params,
            rng,
            components,
            output: vec![0f32; vocab.len() * d],
            vocab,
            bucket_rows,
            cumulative,
            sentences,
            holdout,
            holdout_names: held,
            input,
        }
    }

    fn negative(&mut self, avoid: usize) -> usize {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        for _ in 0..8 {
            let x = self.rng.gen::<f64>() * total;
            let id = self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1);
            if id != avoid {
                return id;
            }
        }
        avoid
    }

    fn step(&mut self, center: usize, context: usize, lr: f32, h: &mut [f32], grad: &mut [f32]) {
        let d = self.params.dimension;
        h.iter_mut().for_each(|x| *x = 0.0);
        grad.iter_mut().for_each(|x| *x = 0.0);
        let rows = &self.components[center];
        for &row in rows {
            h.iter_mut()
                .zip(&self.input[row * d..(row + 1) * d])
                .for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / rows.len() as f32;
        h.iter_mut().for_each(|x| *x *= inv);

        for k in 0..=self.params.negative {
            let (target, label) = if k == 0 {
                (context, 1.0)
            } else {
                let n = self.negative(context);
                if n == context {
                    continue;
                }
                (n, 0.0)
            };
            let out = &mut self.output[target * d..(target + 1) * d];
            let score = sigmoid(out.iter().zip(h.iter()).map(|(a, b)| a * b).sum());
            let alpha = lr * (label - score);
            for j in 0..d {
                grad[j] += alpha * out[j];
                out[j] += alpha * h[j];
            }
        }
        // h is the mean of the rows, so each row gets 1/n of the gradient.
        grad.iter_mut().for_each(|g| *g *= inv);
        for &row in &self.components[center] {
            self.input[row * d..(row + 1) * d]
                .iter_mut()
                .zip(grad.iter())
                .for_each(|(a, g)| *a += g);
        }
    }

    fn holdout_loss(&self) -> Option<f64> {
        if self.holdout.is_empty() {
            return None;
        }
        let d = self.params.dimension;
        // Fixed negatives so epochs are comparable.
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed ^ 0x5eed);
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let mut h = vec![0f32; d];
        let mut row = vec![0f32; d];
        let mut loss = 0.0;
        for (buckets, word, context) in &self.holdout {
            h.iter_mut().for_each(|x| *x = 0.0);
            for &b in buckets {
                match self.bucket_rows.get(&b) {
                    Some(&r) => row.copy_from_slice(&self.input[r * d..(r + 1) * d]),
                    None => init_row(self.params.seed, u64::from(b), d, &mut row),
                }
                h.iter_mut().zip(&row).for_each(|(a, x)| *a += x);
            }
            let mut count = buckets.len();
            if let Some(w) = word {
                h.iter_mut().zip(&self.input[w * d..(w + 1) * d]).for_each(|(a, x)| *a += x);
                count += 1;
            }
            let inv = 1.0 / count as f32;
            h.iter_mut().for_each(|x| *x *= inv);
            let score = |t: usize| -> f64 {
                f64::from(self.output[t * d..(t + 1) * d].iter().zip(&h).map(|(a, b)| a * b).sum::<f32>())
            };
            loss -= log_sigmoid(score(*context));
            for _ in 0..self.params.negative {
                let x = rng.gen::<f64>() * total;
                let n = self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1);
                loss -= log_sigmoid(-score(n));
            }
        }
        Some(loss / self.holdout.len() as f64)
    }

    fn run(mut self) -> Result<(EmbeddingModel, TrainReport), EmbedError> {
        let d = self.params.dimension;
        let mut report = TrainReport {
            vocabulary: self.vocab.len(),
            training_names: self.sentences.len(),
            holdout_names: self.holdout_names,
            holdout_loss: Vec::new(),
        };
        let total_steps = (self.params.epochs * self.sentences.len()).max(1) as f32;
        let mut processed = 0usize;
        let mut h = vec![0f32; d];
        let mut grad = vec![0f32; d];
        let mut order: Vec<usize> = (0..self.sentences.len()).collect();
        for epoch in 0..self.params.epochs {
            order.shuffle(&mut self.rng);
            for &s in &order {
                let lr = self.params.learning_rate * (1.0 - processed as f32 / total_steps).max(1e-4);
                processed += 1;
                let len = self.sentences[s].len();
                let window = self.rng.gen_range(1..=self.params.window);
                for (center, context) in sentence_pairs(len, window) {
                    let (c, x) = (self.sentences[s][center], self.sentences[s][context]);
                    self.step(c, x, lr, &mut h, &mut grad);
                }
            }
            if let Some(loss) = self.holdout_loss() {
                log::info!("epoch {}: held-out loss {loss:.4}", epoch + 1);
                report.holdout_loss.push(loss);
            }
        }

        let mut words = HashMap::with_capacity(self.vocab.len());
        for (i, w) in self.vocab.iter().enumerate() {
            words.insert(w.clone(), self.input[i * d..(i + 1) * d].to_vec());
        }
        let word_rows = self.vocab.len();
        let subword_index = self
            .bucket_rows
            .iter()
            .map(|(&b, &r)| (b, r - word_rows))
            .collect();
        let subword_data = self.input.split_off(word_rows * d);
        let model = EmbeddingModel {
            meta: ModelMeta {
                dimension: d,
                min_n: self.params.min_n,
                max_n: self.params.max_n,
                buckets: self.params.buckets,
                epochs: self.params.epochs,
                window: self.params.window,
                negative: self.params.negative,
                seed: self.params.seed,
            },
            words,
            subword_index,
            subword_data,
        };
        Ok((model, report))
    }
}

/// Training text of a package: the raw name without a Golang host domain.
pub fn training_text(package: &PackageRef) -> String {
    match (&package.domain, &package.namespace) {
        (Some(_), Some(ns)) => format!("{ns}/{}", package.identifier),
        (Some(_), None) => package.identifier.clone(),
        _ => package.raw.clone(),
    }
}

/// Words of one training name: the normalized concatenation first, then its
/// tokens when there is more than one.
fn sentence_words(name: &str) -> Vec<String> {
    let full = normalize(name);
    let toks: Vec<String> = tokens(name).into_iter().filter(|t| !t.is_empty()).collect();
    let mut words = vec![full];
    if toks.len() > 1 {
        words.extend(toks);
    }
    words
}

/// (center, context) index pairs: tokens within `window` of each other, and
/// the full name (index 0) paired both ways with every token.
fn sentence_pairs(len: usize, window: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 1..len {
        pairs.push((0, i));
        pairs.push((i, 0));
        let lo = i.saturating_sub(window).max(1);
        let hi = (i + window).min(len - 1);
        for j in lo..=hi {
            if j != i {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn sigmoid(x: f32) -> f32 {
    if x > 20.0 {
        1.0
    } else if x < -20.0 {
        0.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

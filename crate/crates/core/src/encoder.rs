//! Linear dual encoder over hashed unigram+bigram counts.
//!
//! `Φ(text) = Wᵀ · f(text)` where `f` is a sparse bag of hashed n-gram
//! counts and `W` is a `buckets × dim` projection shared by the message and
//! reply sides. Pairs are scored by the raw dot product of their embeddings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textmetrics::tokenize;

/// Texts are truncated to their last `MAX_TOKENS` tokens before hashing.
pub const MAX_TOKENS: usize = 64;
pub const DEFAULT_BUCKETS: usize = 1 << 18;
pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_HASH_SEED: u64 = 0x5349_4d53_525f_4831;

const MODEL_MAGIC: &[u8; 4] = b"SMSR";
const MODEL_VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded 64-bit hash: FNV-1a over the bytes starting from
/// `offset_basis ^ seed`, followed by the splitmix64 finalizer.
///
/// This function is part of the model file contract; changing it
/// invalidates every saved model and embedding cache.
pub fn hash64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    mix64(h)
}

/// Sparse hashed feature counts, sorted by bucket with no duplicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Features {
    entries: Vec<(usize, f32)>,
}

impl Features {
    pub fn from_entries(mut entries: Vec<(usize, f32)>) -> Self {
        entries.sort_by_key(|&(b, _)| b);
        let mut merged: Vec<(usize, f32)> = Vec::with_capacity(entries.len());
        for (b, w) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == b => *acc += w,
                _ => merged.push((b, w)),
            }
        }
        Features { entries: merged }
    }

    pub fn entries(&self) -> &[(usize, f32)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, bucket: usize) -> f32 {
        self.entries
            .binary_search_by_key(&bucket, |&(b, _)| b)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }
}

/// Hashed bag of unigrams and bigrams over the last [`MAX_TOKENS`] tokens.
/// A bigram `a b` is hashed as the string `a_b`; tokens never contain `_`.
pub fn featurize(text: &str, buckets: usize, hash_seed: u64) -> Features {
    assert!(buckets >= 2, "bucket count must be at least 2");
    let tokens = tokenize(text).into_inner();
    let tokens = &tokens[tokens.len().saturating_sub(MAX_TOKENS)..];
    let bucket = |key: &str| (hash64(key.as_bytes(), hash_seed) % buckets as u64) as usize;
    let mut entries = Vec::with_capacity(tokens.len() * 2);
    for (i, tok) in tokens.iter().enumerate() {
        entries.push((bucket(tok), 1.0));
        if i + 1 < tokens.len() {
            entries.push((bucket(&format!("{}_{}", tok, tokens[i + 1])), 1.0));
        }
    }
    Features::from_entries(entries)
}

/// A dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// f64-accumulated dot product.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Projection weights shared by both encoder towers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    buckets: usize,
    dim: usize,
    hash_seed: u64,
    weights: Vec<f32>,
}

impl EncoderModel {
    pub fn zeros(buckets: usize, dim: usize, hash_seed: u64) -> Result<Self> {
        Self::from_weights(buckets, dim, hash_seed, vec![0.0; buckets * dim])
    }

    /// Entries drawn i.i.d. from `N(0, scale²)`.
    pub fn random(buckets: usize, dim: usize, hash_seed: u64, seed: u64, scale: f32) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidConfig(format!("init scale {scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let weights = (0..buckets * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::from_weights(buckets, dim, hash_seed, weights)
    }

    pub fn from_weights(buckets: usize, dim: usize, hash_seed: u64, weights: Vec<f32>) -> Result<Self> {
        if buckets < 2 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "buckets={buckets} dim={dim}; need buckets >= 2 and dim >= 1"
            )));
        }
        if weights.len() != buckets * dim {
            return Err(Error::DimensionMismatch {
                expected: buckets * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(EncoderModel {
            buckets,
            dim,
            hash_seed,
            weights,
        })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn row(&self, bucket: usize) -> &[f32] {
        &self.weights[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn featurize(&self, text: &str) -> Features {
        featurize(text, self.buckets, self.hash_seed)
    }

    pub fn encode_features(&self, features: &Features) -> Result<Embedding> {
        let mut out = vec![0.0f32; self.dim];
        for &(b, w) in features.entries() {
            if b >= self.buckets {
                return Err(Error::DimensionMismatch {
                    expected: self.buckets,
                    got: b + 1,
                });
            }
            for (o, &x) in out.iter_mut().zip(self.row(b)) {
                *o += w * x;
            }
        }
        Ok(Embedding(out))
    }

    pub fn encode(&self, text: &str) -> Embedding {
        self.encode_features(&self.featurize(text))
            .expect("features hashed by this model are always in range")
    }

    /// `g(x, y) = Φ(x) · Φ(y)`.
    pub fn score(&self, message: &str, reply: &str) -> f64 {
        self.encode(message).dot(&self.encode(reply))
    }

    /// 64-bit digest of the header and weights; identifies the model an
    /// embedding cache was built with.
    pub fn fingerprint(&self) -> u64 {
        let mut h = mix64(self.buckets as u64 ^ ((self.dim as u64) << 40) ^ self.hash_seed);
        for w in &self.weights {
            h = mix64(h ^ w.to_bits() as u64).wrapping_add(h.rotate_left(17));
        }
        h
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;
        w.write_u64::<LittleEndian>(self.buckets as u64)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u64::<LittleEndian>(self.hash_seed)?;
        let mut buf = Vec::with_capacity(self.dim * 4);
        for row in self.weights.chunks(self.dim) {
            buf.clear();
            for x in row {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format(path, "not a model file (bad magic)"));
        }
        let io = |e| Error::io(path, e);
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != MODEL_VERSION {
            return Err(Error::format(path, format!("unsupported model version {version}")));
        }
        let buckets = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let hash_seed = r.read_u64::<LittleEndian>().map_err(io)?;
        let n = buckets
            .checked_mul(dim)
            .ok_or_else(|| Error::format(path, "header overflows"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != n * 4 {
            return Err(Error::format(
                path,
                format!("expected {} weight bytes, found {}", n * 4, bytes.len()),
            ));
        }
        let weights = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_weights(buckets, dim, hash_seed, weights).map_err(|e| match e {
            Error::NonFinite => Error::format(path, "non-finite weights"),
            other => other,
        })
    }
}

const CACHE_MAGIC: &[u8; 4] = b"SEMB";
const CACHE_VERSION: u32 = 1;

/// Path of the UTF-8 sidecar holding one text per line for an embedding
/// cache at `path`.
pub fn cache_sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("txt")
}

/// Write `texts.len()` rows of `dim` floats plus the text sidecar. Texts must
/// not contain line breaks.
pub fn save_embedding_cache(path: impl AsRef<Path>, texts: &[String], matrix: &[f32], dim: usize) -> Result<()> {
    let path = path.as_ref();
    if matrix.len() != texts.len() * dim {
        return Err(Error::DimensionMismatch {
            expected: texts.len() * dim,
            got: matrix.len(),
        });
    }
    if texts.iter().any(|t| t.contains(['\n', '\r'])) {
        return Err(Error::InvalidConfig("cached texts must be single-line".into()));
    }
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CACHE_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(texts.len() as u64).map_err(io)?;
    w.write_u32::<LittleEndian>(dim as u32).map_err(io)?;
    for x in matrix {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let side = cache_sidecar_path(path);
    let mut body = String::with_capacity(texts.iter().map(|t| t.len() + 1).sum());
    for t in texts {
        body.push_str(t);
        body.push('\n');
    }
    std::fs::write(&side, body).map_err(|e| Error::io(&side, e))
}

/// Read an embedding cache and its sidecar: `(texts, matrix, dim)`.
pub fn load_embedding_cache(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<f32>, usize)> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::format(path, "not an embedding cache (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != CACHE_VERSION {
        return Err(Error::format(path, format!("unsupported cache version {version}")));
    }
    let rows = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != rows * dim * 4 {
        return Err(Error::format(
            path,
            format!("expected {} row bytes, found {}", rows * dim * 4, bytes.len()),
        ));
    }
    let matrix: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let side = cache_sidecar_path(path);
    let body = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let texts: Vec<String> = body.lines().map(str::to_owned).collect();
    if texts.len() != rows {
        return Err(Error::format(
            &side,
            format!("{} lines for {rows} embedding rows", texts.len()),
        ));
    }
    Ok((texts, matrix, dim))
}

/// Gradient of the loss w.r.t. the projection, stored by touched row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dim: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl Gradient {
    fn new(dim: usize) -> Self {
        Gradient {
            dim,
            rows: BTreeMap::new(),
        }
    }

    fn row_mut(&mut self, bucket: usize) -> &mut Vec<f64> {
        let dim = self.dim;
        self.rows.entry(bucket).or_insert_with(|| vec![0.0; dim])
    }

    /// `∂loss/∂W[bucket][k]`; zero for rows the batch never touched.
    pub fn get(&self, bucket: usize, k: usize) -> f64 {
        self.rows.get(&bucket).map(|r| r[k]).unwrap_or(0.0)
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&b, r)| (b, r.as_slice()))
    }

    /// Dense `buckets × dim` row-major copy.
    pub fn to_dense(&self, buckets: usize) -> Vec<f64> {
        let mut out = vec![0.0; buckets * self.dim];
        for (&b, r) in &self.rows {
            out[b * self.dim..(b + 1) * self.dim].copy_from_slice(r);
        }
        out
    }
}

fn embed_f64(model: &EncoderModel, f: &Features) -> Vec<f64> {
    let mut out = vec![0.0f64; model.dim];
    for &(b, w) in f.entries() {
        for (o, &x) in out.iter_mut().zip(model.row(b)) {
            *o += w as f64 * x as f64;
        }
    }
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric in-batch contrastive loss and its exact gradient.
///
/// With `S[i][j] = g(x_i, y_j)` over the batch,
///
/// ```text
/// p_i  = exp(S_ii) / (Σ_j exp(S_ij) + Σ_j exp(S_ji) − exp(S_ii))
/// loss = −(1/n) Σ_i ln p_i
/// ```
///
/// Differentiating, with `D_i` the denominator above:
///
/// ```text
/// ∂loss/∂S_ab = (1/n) · exp(S_ab) · (1/D_a + 1/D_b)     a ≠ b
/// ∂loss/∂S_aa = (1/n) · (exp(S_aa)/D_a − 1)
/// ```
///
/// and the chain rule through `S = (F_x W)(F_y W)ᵀ` gives
/// `∂loss/∂W = F_xᵀ (G Y) + F_yᵀ (Gᵀ X)`.
pub fn symmetric_loss_features(model: &EncoderModel, batch: &[(Features, Features)]) -> Result<(f64, Gradient)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let xs: Vec<Vec<f64>> = batch.iter().map(|(x, _)| embed_f64(model, x)).collect();
    let ys: Vec<Vec<f64>> = batch.iter().map(|(_, y)| embed_f64(model, y)).collect();
    let s: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| ys.iter().map(|y| x.iter().zip(y).map(|(a, b)| a * b).sum()).collect())
        .collect();
    if s.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }

    // ln D_i over row i and column i with the diagonal counted once.
    let log_denom: Vec<f64> = (0..n)
        .map(|i| {
            let s = &s;
            let row = (0..n).map(move |j| s[i][j]);
            let col = (0..n).filter(move |&j| j != i).map(move |j| s[j][i]);
            log_sum_exp(row.chain(col))
        })
        .collect();
    let loss = (0..n).map(|i| log_denom[i] - s[i][i]).sum::<f64>() / n as f64;

    let inv_n = 1.0 / n as f64;
    let mut g = vec![vec![0.0f64; n]; n];
    for a in 0..n {
        for b in 0..n {
            g[a][b] = if a == b {
                inv_n * ((s[a][a] - log_denom[a]).exp() - 1.0)
            } else {
                inv_n * ((s[a][b] - log_denom[a]).exp() + (s[a][b] - log_denom[b]).exp())
            };
        }
    }

    let dim = model.dim;
    let mut grad = Gradient::new(dim);
    for i in 0..n {
        // dS/dX_i = Σ_j G_ij Y_j ; dS/dY_i = Σ_j G_ji X_j
        let mut gx = vec![0.0f64; dim];
        let mut gy = vec![0.0f64; dim];
        for j in 0..n {
            for k in 0..dim {
                gx[k] += g[i][j] * ys[j][k];
                gy[k] += g[j][i] * xs[j][k];
            }
        }
        for &(bkt, w) in batch[i].0.entries() {
            let row = grad.row_mut(bkt);
            for k in 0..dim {
                row[k] += w as f64 * gx[k];
            }
        }
        for &(bkt, w) in batch[i].1.entries() {
            let row = grad.row_mut(bkt);
            for k in 0..dim {
                row[k] += w as f64 * gy[k];
            }
        }
    }
    Ok((loss, grad))
}

/// [`symmetric_loss_features`] on raw `(message, reply)` text pairs.
pub fn symmetric_loss<S: AsRef<str>>(model: &EncoderModel, batch: &[(S, S)]) -> Result<(f64, Gradient)> {
    let feats: Vec<(Features, Features)> = batch
        .iter()
        .map(|(x, y)| (model.featurize(x.as_ref()), model.featurize(y.as_ref())))
        .collect();
    symmetric_loss_features(model, &feats)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial SGD step, decayed linearly to zero over the run.
    pub learning_rate: f64,
    pub buckets: usize,
    pub dim: usize,
    pub hash_seed: u64,
    pub init_scale: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.05,
            buckets: DEFAULT_BUCKETS,
            dim: DEFAULT_DIM,
            hash_seed: DEFAULT_HASH_SEED,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EncoderModel,
    /// Mean batch loss over the training data before training and after
    /// each epoch (`epochs + 1` entries).
    pub epoch_losses: Vec<f64>,
}

pub fn train<S: AsRef<str>>(dataset: &[(S, S)], config: &TrainConfig) -> Result<EncoderModel> {
    Ok(train_with_history(dataset, config)?.model)
}

/// Mean symmetric loss over consecutive `batch_size` chunks of `feats`.
fn mean_batch_loss(model: &EncoderModel, feats: &[(Features, Features)], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in feats.chunks(batch_size) {
        total += symmetric_loss_features(model, chunk)?.0;
        count += 1;
    }
    Ok(total / count as f64)
}

pub fn train_with_history<S: AsRef<str>>(dataset: &[(S, S)], config: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return Err(Error::InvalidConfig(format!("learning_rate {}", config.learning_rate)));
    }
    let mut model = EncoderModel::random(
        config.buckets,
        config.dim,
        config.hash_seed,
        config.seed,
        config.init_scale,
    )?;
    let feats: Vec<(Features, Features)> = dataset
        .iter()
        .map(|(x, y)| (model.featurize(x.as_ref()), model.featurize(y.as_ref())))
        .collect();

    let mut epoch_losses = vec![mean_batch_loss(&model, &feats, config.batch_size)?];
    let steps_per_epoch = feats.len().div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
    let mut order: Vec<usize> = (0..feats.len()).collect();
    let mut step = 0usize;
    let mut batch: Vec<(Features, Features)> = Vec::with_capacity(config.batch_size);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| feats[i].clone()));
            let (_, grad) = symmetric_loss_features(&model, &batch)?;
            let lr = config.learning_rate * (1.0 - step as f64 / total_steps as f64);
            let dim = model.dim;
            for (b, g) in grad.rows() {
                let row = &mut model.weights[b * dim..(b + 1) * dim];
                for (w, &gk) in row.iter_mut().zip(g) {
                    *w -= (lr * gk) as f32;
                }
            }
            step += 1;
        }
        epoch_losses.push(mean_batch_loss(&model, &feats, config.batch_size)?);
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(TrainOutcome { model, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_random(seed: u64) -> EncoderModel {
        EncoderModel::random(64, 8, DEFAULT_HASH_SEED, seed, 0.3).unwrap()
    }

    #[test]
    fn featurize_basics() {
        assert!(featurize("", 8, 1).is_empty());
        assert_eq!(featurize("Hi there", 1024, 7), featurize("Hi there", 1024, 7));
        let f = featurize("a b", 1 << 20, DEFAULT_HASH_SEED);
        let total: f32 = f.entries().iter().map(|e| e.1).sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn featurize_truncates_to_last_tokens() {
        let long: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let tail = long[100 - MAX_TOKENS..].join(" ");
        assert_eq!(featurize(&long.join(" "), 4096, 3), featurize(&tail, 4096, 3));
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let m = EncoderModel::zeros(32, 4, 0).unwrap();
        assert!(m.encode("anything at all").0.iter().all(|&x| x == 0.0));
        assert_eq!(m.score("x", "y"), 0.0);
    }

    #[test]
    fn encode_is_additive() {
        let m = small_random(1);
        let a = Features::from_entries(vec![(1, 1.0), (5, 2.0)]);
        let b = Features::from_entries(vec![(9, 1.0), (30, 3.0)]);
        let ab = Features::from_entries(vec![(1, 1.0), (5, 2.0), (9, 1.0), (30, 3.0)]);
        let ea = m.encode_features(&a).unwrap();
        let eb = m.encode_features(&b).unwrap();
        let eab = m.encode_features(&ab).unwrap();
        for k in 0..m.dim() {
            assert!((ea.0[k] + eb.0[k] - eab.0[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn encode_rejects_foreign_features() {
        let m = small_random(1);
        let f = featurize("hello world", 1 << 16, DEFAULT_HASH_SEED);
        assert!(matches!(m.encode_features(&f), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn score_matches_embedding_dot() {
        let m = small_random(2);
        let s = m.score("how are you", "fine thanks");
        let d = m.encode("how are you").dot(&m.encode("fine thanks"));
        assert_eq!(s, d);
    }

    #[test]
    fn batch_of_one_has_zero_loss() {
        let m = small_random(3);
        let (loss, grad) = symmetric_loss(&m, &[("hello there", "hi")]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.rows().all(|(_, r)| r.iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn equal_scores_give_ln3() {
        let m = EncoderModel::zeros(16, 4, 0).unwrap();
        let (loss, _) = symmetric_loss(&m, &[("a", "b"), ("c", "d")]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = small_random(1);
        let batch: [(&str, &str); 0] = [];
        assert!(symmetric_loss(&m, &batch).is_err());
    }

    #[test]
    fn loss_is_positive_and_bounded() {
        let m = small_random(4);
        let batch = [("a b", "c d"), ("e f", "g"), ("h", "i j k")];
        let (loss, _) = symmetric_loss(&m, &batch).unwrap();
        assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let m = small_random(5);
        m.save(&path).unwrap();
        let back = EncoderModel::load(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.fingerprint(), back.fingerprint());
        assert_eq!(m.score("a b c", "d e").to_bits(), back.score("a b c", "d e").to_bits());
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"SMSR");
        assert_eq!(bytes.len(), 4 + 4 + 8 + 4 + 8 + 64 * 8 * 4);
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(EncoderModel::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            buckets: 128,
            dim: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let data = [("hi", "hello"), ("bye", "see you")];
        let m = train(&data, &cfg).unwrap();
        let init = EncoderModel::random(128, 8, cfg.hash_seed, 11, cfg.init_scale).unwrap();
        assert_eq!(m, init);
    }

    #[test]
    fn train_rejects_empty_dataset() {
        let data: [(&str, &str); 0] = [];
        assert!(matches!(train(&data, &TrainConfig::default()), Err(Error::Empty(_))));
    }
}

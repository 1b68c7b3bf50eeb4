//! Candidate pool and single-query top-N / top-M retrieval.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::encoder::{self, dot, Embedding, EncoderModel};
use crate::error::{Error, Result};
use crate::textmetrics::{tokenize, Bag, Tokens};

const MANIFEST_FILE: &str = "manifest.json";
const EMBEDDINGS_FILE: &str = "embeddings.semb";

#[derive(Debug, Clone)]
pub struct ReplyCandidate {
    pub id: usize,
    pub text: String,
    pub tokens: Tokens,
    /// Unigram bag of `tokens`, cached for similarity computation.
    pub bag: Bag,
}

impl ReplyCandidate {
    fn new(id: usize, text: String) -> Self {
        let tokens = tokenize(&text);
        let bag = Bag::from_tokens(&tokens);
        ReplyCandidate { id, text, tokens, bag }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoolManifest {
    pub rows: usize,
    pub dim: usize,
    /// Hex-encoded [`EncoderModel::fingerprint`].
    pub model_fingerprint: String,
    /// Seconds since the Unix epoch.
    pub built_at: u64,
}

/// Deduplicated reply candidates with their embeddings as an `R × d` matrix.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    candidates: Vec<ReplyCandidate>,
    matrix: Vec<f32>,
    dim: usize,
    model_fingerprint: u64,
    built_at: u64,
}

/// One retrieved candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: usize,
    pub score: f64,
}

/// Top-N candidates by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortlist {
    pub entries: Vec<Scored>,
}

impl Shortlist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    pub id: usize,
    pub score: f64,
    pub probability: f64,
}

/// Top-M candidates with world-model probabilities `softmax(score / τ)`
/// normalized over the M retained scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSet {
    pub entries: Vec<Simulated>,
    pub temperature: f64,
}

impl SimulationSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.probability).collect()
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.id)
    }
}

/// Temperature softmax, shifted by the maximum for stability.
pub fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Descending score, then ascending id.
fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    // partial_cmp so that -0.0 and 0.0 tie
    b.score
        .partial_cmp(&a.score)
        .unwrap_or_else(|| b.score.total_cmp(&a.score))
        .then(a.id.cmp(&b.id))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Line breaks are folded to spaces so every candidate fits one sidecar line.
fn single_line(text: &str) -> String {
    if text.contains(['\n', '\r']) {
        text.replace(['\n', '\r'], " ")
    } else {
        text.to_owned()
    }
}

impl CandidatePool {
    /// Embed every distinct reply once. Exact duplicates collapse to their
    /// first occurrence.
    pub fn build<S: AsRef<str>>(replies: &[S], model: &EncoderModel) -> Result<Self> {
        if replies.is_empty() {
            return Err(Error::Empty("reply list"));
        }
        let mut seen = HashSet::new();
        let mut candidates = Vec::new();
        for r in replies {
            let text = single_line(r.as_ref());
            if seen.insert(text.clone()) {
                candidates.push(ReplyCandidate::new(candidates.len(), text));
            }
        }
        let dim = model.dim();
        let mut matrix = Vec::with_capacity(candidates.len() * dim);
        for c in &candidates {
            matrix.extend_from_slice(model.encode(&c.text).as_slice());
        }
        Ok(CandidatePool {
            candidates,
            matrix,
            dim,
            model_fingerprint: model.fingerprint(),
            built_at: now_secs(),
        })
    }

    /// Pool over precomputed embeddings (e.g. from an external encoder).
    /// Texts are taken as-is; duplicates are not collapsed.
    pub fn from_embeddings(texts: Vec<String>, matrix: Vec<f32>, dim: usize, model_fingerprint: u64) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::Empty("reply list"));
        }
        if dim == 0 || matrix.len() != texts.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: texts.len() * dim,
                got: matrix.len(),
            });
        }
        let candidates = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| ReplyCandidate::new(i, t))
            .collect();
        Ok(CandidatePool {
            candidates,
            matrix,
            dim,
            model_fingerprint,
            built_at: now_secs(),
        })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn candidates(&self) -> &[ReplyCandidate] {
        &self.candidates
    }

    pub fn candidate(&self, id: usize) -> &ReplyCandidate {
        &self.candidates[id]
    }

    pub fn text(&self, id: usize) -> &str {
        &self.candidates[id].text
    }

    pub fn embedding(&self, id: usize) -> &[f32] {
        &self.matrix[id * self.dim..(id + 1) * self.dim]
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn model_fingerprint(&self) -> u64 {
        self.model_fingerprint
    }

    pub fn manifest(&self) -> PoolManifest {
        PoolManifest {
            rows: self.len(),
            dim: self.dim,
            model_fingerprint: format!("{:016x}", self.model_fingerprint),
            built_at: self.built_at,
        }
    }

    /// Fails unless the pool was embedded by `model`.
    pub fn check_model(&self, model: &EncoderModel) -> Result<()> {
        if model.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: model.dim(),
            });
        }
        if model.fingerprint() != self.model_fingerprint {
            return Err(Error::InvalidConfig(format!(
                "pool was built with model {:016x}, got {:016x}",
                self.model_fingerprint,
                model.fingerprint()
            )));
        }
        Ok(())
    }

    /// `g(message, y)` for every candidate.
    pub fn scores(&self, query: &Embedding) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| dot(row, query.as_slice()))
            .collect())
    }

    /// Top-`k` candidates by descending score, ties to the lower id.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<Scored>> {
        if k > self.len() {
            return Err(Error::ExceedsPool {
                what: "k",
                value: k,
                pool: self.len(),
            });
        }
        let mut all: Vec<Scored> = self
            .scores(query)?
            .into_iter()
            .enumerate()
            .map(|(id, score)| Scored { id, score })
            .collect();
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        Ok(all)
    }

    /// Shortlist (top `n`) and simulation set (top `m`, softmax at
    /// `temperature`) from one pass over the pool.
    pub fn retrieve_embedding(
        &self,
        query: &Embedding,
        n: usize,
        m: usize,
        temperature: f64,
    ) -> Result<(Shortlist, SimulationSet)> {
        for (what, value) in [("n", n), ("m", m)] {
            if value > self.len() {
                return Err(Error::ExceedsPool {
                    what,
                    value,
                    pool: self.len(),
                });
            }
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {temperature}"
            )));
        }
        let ranked = self.top_k(query, n.max(m))?;
        let shortlist = Shortlist {
            entries: ranked[..n].to_vec(),
        };
        let sim_scores: Vec<f64> = ranked[..m].iter().map(|s| s.score).collect();
        let probs = softmax_with_temperature(&sim_scores, temperature);
        let simulation = SimulationSet {
            entries: ranked[..m]
                .iter()
                .zip(probs)
                .map(|(s, p)| Simulated {
                    id: s.id,
                    score: s.score,
                    probability: p,
                })
                .collect(),
            temperature,
        };
        Ok((shortlist, simulation))
    }

    /// Encode `message` once and retrieve both sets from that single query.
    pub fn retrieve(
        &self,
        model: &EncoderModel,
        message: &str,
        n: usize,
        m: usize,
        temperature: f64,
    ) -> Result<(Shortlist, SimulationSet)> {
        let q = model.encode(message);
        self.retrieve_embedding(&q, n, m, temperature)
    }

    /// Write `dir/embeddings.semb` (+ `.txt` sidecar) and `dir/manifest.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let texts: Vec<String> = self.candidates.iter().map(|c| c.text.clone()).collect();
        encoder::save_embedding_cache(dir.join(EMBEDDINGS_FILE), &texts, &self.matrix, self.dim)?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: PoolManifest = serde_json::from_str(&raw)?;
        let (texts, matrix, dim) = encoder::load_embedding_cache(dir.join(EMBEDDINGS_FILE))?;
        if manifest.rows != texts.len() || manifest.dim != dim {
            return Err(Error::format(
                &manifest_path,
                format!(
                    "manifest says {}x{}, cache holds {}x{}",
                    manifest.rows,
                    manifest.dim,
                    texts.len(),
                    dim
                ),
            ));
        }
        let fingerprint = u64::from_str_radix(&manifest.model_fingerprint, 16)
            .map_err(|e| Error::format(&manifest_path, format!("model_fingerprint: {e}")))?;
        let mut pool = Self::from_embeddings(texts, matrix, dim, fingerprint)?;
        pool.built_at = manifest.built_at;
        Ok(pool)
    }
}

//! End-to-end suggestion: retrieve → similarity matrix → select.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, HashTopicLabeler, TopicLabeler, DEFAULT_MMR_LAMBDA};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::pool::{CandidatePool, Shortlist, SimulationSet};
use crate::simulation::{self, SearchParams, SearchStrategy, SimilarityMatrix, DEFAULT_SAMPLES};
use crate::textmetrics::Bag;

/// A reply-set selection method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum System {
    /// Top-K by retrieval score.
    Matching,
    /// Greedy maximal marginal relevance over the shortlist.
    Mmr,
    /// Top-K with at most one reply per topic label.
    Topic,
    /// Simulation-based tuple search.
    SimSr(SearchStrategy),
    /// Top-K by individual expected similarity (no tuple interaction).
    SimSrIndividual,
}

impl System {
    /// Registry names accepted by the CLI and service.
    pub const REGISTRY: [&'static str; 5] = ["matching", "mmr", "topic", "simsr", "simsr-individual"];

    pub fn name(&self) -> String {
        match self {
            System::Matching => "matching".into(),
            System::Mmr => "mmr".into(),
            System::Topic => "topic".into(),
            System::SimSr(SearchStrategy::Ablative) => "simsr".into(),
            System::SimSr(s) => format!("simsr-{s}"),
            System::SimSrIndividual => "simsr-individual".into(),
        }
    }

    pub fn uses_simulation(&self) -> bool {
        matches!(self, System::SimSr(_) | System::SimSrIndividual)
    }
}

impl Default for System {
    fn default() -> Self {
        System::SimSr(SearchStrategy::Ablative)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Accepts registry names, bare search strategy names (`exhaustive`,
/// `greedy`, ...) and `simsr-<strategy>`.
impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "matching" | "topk" => Ok(System::Matching),
            "mmr" => Ok(System::Mmr),
            "topic" => Ok(System::Topic),
            "simsr" => Ok(System::SimSr(SearchStrategy::Ablative)),
            "simsr-individual" | "individual" => Ok(System::SimSrIndividual),
            other => {
                let strategy = other.strip_prefix("simsr-").unwrap_or(other);
                strategy
                    .parse::<SearchStrategy>()
                    .map(System::SimSr)
                    .map_err(|_| Error::InvalidConfig(format!("unknown system or strategy {s:?}")))
            }
        }
    }
}

impl Serialize for System {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for System {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuggestConfig {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub temperature: f64,
    pub system: System,
    /// Tuples drawn by sample-and-rank.
    pub samples: usize,
    pub seed: u64,
    pub mmr_lambda: f64,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        SuggestConfig {
            k: 3,
            n: 15,
            m: 25,
            temperature: 10.0,
            system: System::default(),
            samples: DEFAULT_SAMPLES,
            seed: 0,
            mmr_lambda: DEFAULT_MMR_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortlistEntry {
    pub id: usize,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedEntry {
    pub id: usize,
    pub text: String,
    pub score: f64,
    pub probability: f64,
}

/// Wall-clock milliseconds per stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieve_ms: f64,
    pub similarity_ms: f64,
    pub search_ms: f64,
    pub total_ms: f64,
}

/// Selected replies plus the intermediates that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub replies: Vec<String>,
    /// Pool ids of `replies`.
    pub reply_ids: Vec<usize>,
    /// Shortlist rows of `replies`.
    pub shortlist_rows: Vec<usize>,
    /// Simulated value of the set; present for simulation-based systems.
    pub expected_score: Option<f64>,
    pub tuples_evaluated: u64,
    pub system: System,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub temperature: f64,
    pub shortlist: Vec<ShortlistEntry>,
    pub simulation: Vec<SimulatedEntry>,
    pub timings: StageTimings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// A model and the pool embedded with it. Immutable; share across threads.
pub struct Engine {
    model: EncoderModel,
    pool: CandidatePool,
    labeler: Box<dyn TopicLabeler + Send + Sync>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("pool_size", &self.pool.len())
            .field("dim", &self.model.dim())
            .finish()
    }
}

impl Engine {
    /// Fails if the pool was not built with `model`.
    pub fn new(model: EncoderModel, pool: CandidatePool) -> Result<Self> {
        pool.check_model(&model)?;
        Ok(Self::new_unchecked(model, pool))
    }

    /// Skips the fingerprint check; use for pools over external embeddings.
    /// Dimensions must still agree.
    pub fn new_unchecked(model: EncoderModel, pool: CandidatePool) -> Self {
        Engine {
            model,
            pool,
            labeler: Box::new(HashTopicLabeler),
        }
    }

    pub fn with_labeler(mut self, labeler: impl TopicLabeler + Send + Sync + 'static) -> Self {
        self.labeler = Box::new(labeler);
        self
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }

    pub fn pool(&self) -> &CandidatePool {
        &self.pool
    }

    /// Clamp `n` and `m` to the pool and validate the rest.
    pub fn effective_config(&self, config: &SuggestConfig) -> Result<SuggestConfig> {
        let r = self.pool.len();
        if config.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if config.k > r {
            return Err(Error::KExceedsPool { k: config.k, pool: r });
        }
        if config.n == 0 || config.m == 0 {
            return Err(Error::InvalidConfig("n and m must be >= 1".into()));
        }
        if !(config.temperature.is_finite() && config.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                config.temperature
            )));
        }
        if config.system == System::SimSr(SearchStrategy::SampleRank) && config.samples == 0 {
            return Err(Error::InvalidConfig("samples must be >= 1".into()));
        }
        let mut eff = *config;
        eff.n = config.n.min(r);
        eff.m = config.m.min(r);
        if eff.k > eff.n {
            return Err(Error::KExceedsShortlist { k: eff.k, n: eff.n });
        }
        Ok(eff)
    }

    /// Retrieve and compute the similarity matrix without selecting.
    pub fn simulate(
        &self,
        message: &str,
        config: &SuggestConfig,
    ) -> Result<(Shortlist, SimulationSet, SimilarityMatrix)> {
        let cfg = self.effective_config(config)?;
        let q = self.model.encode(message);
        let (short, sim) = self.pool.retrieve_embedding(&q, cfg.n, cfg.m, cfg.temperature)?;
        let c = self.similarity(&short, &sim);
        Ok((short, sim, c))
    }

    fn similarity(&self, short: &Shortlist, sim: &SimulationSet) -> SimilarityMatrix {
        let rows: Vec<&Bag> = short.ids().map(|id| &self.pool.candidate(id).bag).collect();
        let cols: Vec<&Bag> = sim.ids().map(|id| &self.pool.candidate(id).bag).collect();
        SimilarityMatrix::from_bags(&rows, &cols)
    }

    pub fn suggest(&self, message: &str, config: &SuggestConfig) -> Result<Suggestion> {
        let start = Instant::now();
        let cfg = self.effective_config(config)?;
        let q = self.model.encode(message);
        let (short, sim) = self.pool.retrieve_embedding(&q, cfg.n, cfg.m, cfg.temperature)?;
        let retrieve_ms = ms(start);

        let t = Instant::now();
        let c = cfg.system.uses_simulation().then(|| self.similarity(&short, &sim));
        let similarity_ms = ms(t);

        let t = Instant::now();
        let probs = sim.probabilities();
        let (rows, expected_score, tuples_evaluated) = match cfg.system {
            System::SimSr(strategy) => {
                let params = SearchParams {
                    k: cfg.k,
                    samples: cfg.samples,
                    seed: cfg.seed,
                };
                let set = simulation::search(strategy, c.as_ref().expect("computed above"), &probs, &params)?;
                (set.indices, Some(set.expected_score), set.tuples_evaluated)
            }
            System::SimSrIndividual => {
                let c = c.as_ref().expect("computed above");
                let rows = baselines::individual_sim_select(c, &probs, cfg.k)?;
                let v = simulation::expected_score(c, &probs, &rows)?;
                (rows, Some(v), cfg.n as u64)
            }
            System::Matching => (baselines::topk_select(short.len(), cfg.k)?, None, 0),
            System::Mmr => {
                let bags: Vec<&Bag> = short.ids().map(|id| &self.pool.candidate(id).bag).collect();
                let rows = baselines::mmr_select(&short.scores(), &bags, cfg.k, cfg.mmr_lambda)?;
                (rows, None, 0)
            }
            System::Topic => {
                let labels: Vec<String> = short
                    .ids()
                    .map(|id| self.labeler.label(&self.pool.candidate(id).tokens))
                    .collect();
                (baselines::topic_select(&labels, cfg.k)?, None, 0)
            }
        };
        let search_ms = ms(t);

        let reply_ids: Vec<usize> = rows.iter().map(|&r| short.entries[r].id).collect();
        Ok(Suggestion {
            replies: reply_ids.iter().map(|&id| self.pool.text(id).to_owned()).collect(),
            reply_ids,
            shortlist_rows: rows,
            expected_score,
            tuples_evaluated,
            system: cfg.system,
            k: cfg.k,
            n: cfg.n,
            m: cfg.m,
            temperature: cfg.temperature,
            shortlist: short
                .entries
                .iter()
                .map(|e| ShortlistEntry {
                    id: e.id,
                    text: self.pool.text(e.id).to_owned(),
                    score: e.score,
                })
                .collect(),
            simulation: sim
                .entries
                .iter()
                .map(|e| SimulatedEntry {
                    id: e.id,
                    text: self.pool.text(e.id).to_owned(),
                    score: e.score,
                    probability: e.probability,
                })
                .collect(),
            timings: StageTimings {
                retrieve_ms,
                similarity_ms,
                search_ms,
                total_ms: ms(start),
            },
        })
    }
}

//! Smart reply set selection by model-based simulation.
//!
//! A dual encoder retrieves a shortlist of candidate replies for a message
//! and, from the same query, a set of simulated user replies weighted by a
//! temperature softmax. Reply sets drawn from the shortlist are valued by
//! the expected best-member similarity to the simulated replies, and a
//! search strategy picks the set to show.
//!
//! ```
//! use simsr_core::{CandidatePool, EncoderModel, Engine, SuggestConfig};
//!
//! let model = EncoderModel::random(1024, 16, 7, 0, 0.3).unwrap();
//! let replies = ["yes please", "no thanks", "maybe later", "sure thing"];
//! let pool = CandidatePool::build(&replies, &model).unwrap();
//! let engine = Engine::new(model, pool).unwrap();
//! let out = engine.suggest("want some tea?", &SuggestConfig::default()).unwrap();
//! assert_eq!(out.replies.len(), 3);
//! ```

pub mod baselines;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod evalharness;
pub mod pool;
pub mod simulation;
pub mod textmetrics;

pub use encoder::{Embedding, EncoderModel, TrainConfig};
pub use engine::{Engine, SuggestConfig, Suggestion, System};
pub use error::{Error, Result};
pub use pool::{CandidatePool, Shortlist, SimulationSet};
pub use simulation::{ReplySet, SearchParams, SearchStrategy, SimilarityMatrix};
pub use textmetrics::{tokenize, Tokens};

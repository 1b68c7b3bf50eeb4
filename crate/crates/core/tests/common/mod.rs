#![allow(dead_code)]

pub mod oracle;

use simsr_core::encoder::{train_with_history, TrainConfig};
use simsr_core::evalharness::{evaluate, make_synthetic, EvalReport, SyntheticConfig, SyntheticCorpus};
use simsr_core::{CandidatePool, Engine, SuggestConfig, System};

/// Smaller than the production defaults so a run trains in well under a
/// second.
pub fn small_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        buckets: 1 << 16,
        dim: 64,
        seed,
        ..TrainConfig::default()
    }
}

pub fn pairs(corpus: &SyntheticCorpus) -> Vec<(String, String)> {
    corpus
        .train
        .iter()
        .map(|p| (p.message.clone(), p.reply.clone()))
        .collect()
}

pub fn synthetic_engine(seed: u64, bimodal_fraction: f64) -> (Engine, SyntheticCorpus, Vec<f64>) {
    let corpus = make_synthetic(&SyntheticConfig {
        seed,
        bimodal_fraction,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let outcome = train_with_history(&pairs(&corpus), &small_train_config(seed)).unwrap();
    let pool = CandidatePool::build(&corpus.replies(), &outcome.model).unwrap();
    let engine = Engine::new(outcome.model, pool).unwrap();
    (engine, corpus, outcome.epoch_losses)
}

pub fn synthetic_report(seed: u64, bimodal_fraction: f64, temperature: f64, systems: &[&str]) -> EvalReport {
    let (engine, corpus, _) = synthetic_engine(seed, bimodal_fraction);
    let systems: Vec<System> = systems.iter().map(|s| s.parse().unwrap()).collect();
    let config = SuggestConfig {
        temperature,
        ..SuggestConfig::default()
    };
    evaluate(&engine, &systems, &corpus.test, &config)
}

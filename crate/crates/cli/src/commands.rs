use std::fmt::Write as _;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use simsr_core::encoder::{train_with_history, TrainConfig, DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_HASH_SEED};
use simsr_core::evalharness::{
    compose_message, evaluate, load_dataset, make_synthetic, percentile, write_dataset, SyntheticConfig,
};
use simsr_core::{CandidatePool, EncoderModel, Engine, SuggestConfig, System};

use crate::service::{self, apply_overrides, AppState, Overrides};

#[derive(Debug, Parser)]
#[command(name = "simsr", version, about = "Smart reply set selection by simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the dual encoder on message/reply JSON lines.
    Train(TrainArgs),
    /// Embed the replies of a dataset into a candidate pool directory.
    Index(IndexArgs),
    /// Suggest replies for one message and print them as JSON.
    Suggest(SuggestArgs),
    /// Score systems on a held-out dataset.
    Eval(EvalArgs),
    /// Time suggest calls for every system on a large pool.
    Bench(BenchArgs),
    /// Run the HTTP suggestion service.
    Serve(ServeArgs),
    /// Write a seeded synthetic corpus (train.jsonl, test.jsonl).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long, default_value_t = DEFAULT_BUCKETS)]
    pub buckets: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Pool directory written by `index`.
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

impl EngineArgs {
    fn load(&self) -> anyhow::Result<Engine> {
        let model = EncoderModel::load(&self.model)?;
        let pool = CandidatePool::load(&self.pool)?;
        Ok(Engine::new(model, pool)?)
    }
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Samples drawn by sample_rank.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SelectionArgs {
    fn overrides(&self, strategy: Option<String>) -> Overrides {
        Overrides {
            k: self.k,
            n: self.n,
            m: self.m,
            tau: self.tau,
            strategy,
            seed: self.seed,
            samples: self.samples,
        }
    }
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub message: String,
    /// Persona line; repeat for several.
    #[arg(long)]
    pub persona: Vec<String>,
    /// System or search strategy, e.g. simsr, exhaustive, matching.
    #[arg(long, default_value = "ablative")]
    pub strategy: String,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Include wall-clock stage timings (makes output run-dependent).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
    Csv,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "matching,mmr,topic,simsr,simsr-individual"
    )]
    pub systems: Vec<String>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Pool directory; a random pool is generated when omitted.
    #[arg(long, requires = "model")]
    pub pool: Option<PathBuf>,
    #[arg(long, requires = "pool")]
    pub model: Option<PathBuf>,
    /// Size of the generated pool.
    #[arg(long, default_value_t = 10_000)]
    pub pool_size: usize,
    /// Dataset whose messages are used as queries.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "matching,mmr,topic,simsr,simsr-individual,simsr-exhaustive,simsr-greedy,simsr-sample_rank"
    )]
    pub systems: Vec<String>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long, env = "SIMSR_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Allowed CORS origin; repeat for several, `*` for any.
    #[arg(long)]
    pub cors_origin: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.6)]
    pub bimodal_fraction: f64,
    #[arg(long, default_value_t = 30)]
    pub intents: usize,
    #[arg(long, default_value_t = 90)]
    pub messages: usize,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Index(a) => index(a, out),
        Command::Suggest(a) => suggest(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => bench(a, out),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a, out),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = load_dataset(&a.data)?;
    let pairs: Vec<(String, String)> = data.into_iter().map(|p| (p.message, p.reply)).collect();
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        buckets: a.buckets,
        dim: a.dim,
        hash_seed: DEFAULT_HASH_SEED,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train_with_history(&pairs, &config)?;
    outcome.model.save(&a.out)?;
    for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
        writeln!(out, "epoch {epoch}: loss {loss:.4}")?;
    }
    writeln!(out, "wrote {} ({} pairs)", a.out.display(), pairs.len())?;
    Ok(())
}

fn index(a: IndexArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = EncoderModel::load(&a.model)?;
    let replies: Vec<String> = load_dataset(&a.data)?.into_iter().map(|p| p.reply).collect();
    let pool = CandidatePool::build(&replies, &model)?;
    pool.save(&a.out)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&pool.manifest())?)?;
    Ok(())
}

fn resolve_config(
    engine: &Engine,
    selection: &SelectionArgs,
    strategy: Option<String>,
) -> anyhow::Result<SuggestConfig> {
    Ok(apply_overrides(
        &SuggestConfig::default(),
        &selection.overrides(strategy),
        engine.pool().len(),
    )?)
}

fn suggest(a: SuggestArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let engine = a.engine.load()?;
    let config = resolve_config(&engine, &a.selection, Some(a.strategy.clone()))?;
    let message = compose_message(&a.persona, &a.message);
    if message.trim().is_empty() {
        anyhow::bail!("message must not be empty");
    }
    let suggestion = engine.suggest(&message, &config)?;
    let mut value = serde_json::to_value(&suggestion)?;
    if !a.timings {
        value.as_object_mut().expect("object").remove("timings");
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

fn parse_systems(names: &[String]) -> anyhow::Result<Vec<System>> {
    names
        .iter()
        .map(|s| s.trim().parse::<System>().map_err(|e| anyhow::anyhow!("{e}")))
        .collect()
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let engine = a.engine.load()?;
    let systems = parse_systems(&a.systems)?;
    let config = resolve_config(&engine, &a.selection, None)?;
    let data = load_dataset(&a.data)?;
    let report = evaluate(&engine, &systems, &data, &config);
    let text = match a.format {
        Format::Json => report.to_json() + "\n",
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchRow {
    system: String,
    tuples_evaluated: f64,
    p50_ms: f64,
    p95_ms: f64,
    retrieve_share: f64,
    simulation_share: f64,
}

/// Random sentences over a fixed pseudo-word vocabulary.
fn random_sentences(count: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (0..rng.random_range(3..=10))
                .map(|_| format!("w{:x}", rng.random_range(0..3000)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let engine = match (&a.pool, &a.model) {
        (Some(pool), Some(model)) => EngineArgs {
            pool: pool.clone(),
            model: model.clone(),
        }
        .load()?,
        _ => {
            let model = EncoderModel::random(DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_HASH_SEED, 0, 0.1)?;
            let pool = CandidatePool::build(&random_sentences(a.pool_size, 1), &model)?;
            Engine::new(model, pool)?
        }
    };
    let queries: Vec<String> = match &a.data {
        Some(path) => load_dataset(path)?
            .into_iter()
            .map(|p| p.message)
            .take(a.queries)
            .collect(),
        None => random_sentences(a.queries, 2),
    };
    anyhow::ensure!(!queries.is_empty(), "no queries");
    let systems = parse_systems(&a.systems)?;
    let base = resolve_config(&engine, &a.selection, None)?;

    let mut rows = Vec::new();
    for system in systems {
        let config = SuggestConfig { system, ..base };
        // warm-up
        engine.suggest(&queries[0], &config)?;
        let mut wall = Vec::with_capacity(queries.len());
        let (mut tuples, mut retrieve, mut simulation, mut total) = (0.0, 0.0, 0.0, 0.0);
        for q in &queries {
            let start = Instant::now();
            let s = engine.suggest(q, &config)?;
            wall.push(start.elapsed().as_secs_f64() * 1e3);
            tuples += s.tuples_evaluated as f64;
            retrieve += s.timings.retrieve_ms;
            simulation += s.timings.similarity_ms + s.timings.search_ms;
            total += s.timings.total_ms;
        }
        rows.push(BenchRow {
            system: system.name(),
            tuples_evaluated: tuples / queries.len() as f64,
            p50_ms: percentile(&wall, 50.0),
            p95_ms: percentile(&wall, 95.0),
            retrieve_share: retrieve / total,
            simulation_share: simulation / total,
        });
    }

    match a.format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?,
        Format::Csv => {
            writeln!(
                out,
                "system,tuples_evaluated,p50_ms,p95_ms,retrieve_share,simulation_share"
            )?;
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.system, r.tuples_evaluated, r.p50_ms, r.p95_ms, r.retrieve_share, r.simulation_share
                )?;
            }
        }
        Format::Table => {
            let mut text = String::new();
            writeln!(
                text,
                "pool={} queries={} K={} N={} M={}",
                engine.pool().len(),
                queries.len(),
                base.k,
                base.n,
                base.m
            )?;
            writeln!(
                text,
                "{:<18} {:>9} {:>9} {:>9} {:>10} {:>10}",
                "System", "# Tuples", "p50 ms", "p95 ms", "retrieve", "simulate"
            )?;
            for r in &rows {
                writeln!(
                    text,
                    "{:<18} {:>9.1} {:>9.3} {:>9.3} {:>9.1}% {:>9.1}%",
                    r.system,
                    r.tuples_evaluated,
                    r.p50_ms,
                    r.p95_ms,
                    r.retrieve_share * 100.0,
                    r.simulation_share * 100.0
                )?;
            }
            out.write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let engine = a.engine.load()?;
    let cors = if a.cors_origin.is_empty() {
        None
    } else {
        Some(service::cors_layer(&a.cors_origin)?)
    };
    let app = service::router(Arc::new(AppState::new(engine)), cors);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(service::serve(app, SocketAddr::new(a.host, a.port)))
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let corpus = make_synthetic(&SyntheticConfig {
        seed: a.seed,
        bimodal_fraction: a.bimodal_fraction,
        intents: a.intents,
        messages: a.messages,
        ..SyntheticConfig::default()
    })?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let write = |name: &str, pairs| -> anyhow::Result<PathBuf> {
        let path: PathBuf = Path::new(&a.out).join(name);
        write_dataset(&path, pairs)?;
        Ok(path)
    };
    let train = write("train.jsonl", &corpus.train)?;
    let test = write("test.jsonl", &corpus.test)?;
    writeln!(
        out,
        "wrote {} ({} pairs) and {} ({} pairs)",
        train.display(),
        corpus.train.len(),
        test.display(),
        corpus.test.len()
    )?;
    Ok(())
}

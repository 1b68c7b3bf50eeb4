//! Dataset ingestion, offline evaluation, and a synthetic corpus whose
//! messages admit several distinct valid replies.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::MAX_TOKENS;
use crate::engine::{Engine, SuggestConfig, System};
use crate::error::{Error, Result};
use crate::textmetrics::{self, token_spans, tokenize, Tokens};

pub const PERSONA_SEPARATOR: &str = " | ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialoguePair {
    pub message: String,
    pub reply: String,
}

#[derive(Deserialize)]
struct RawPair {
    message: String,
    reply: String,
    #[serde(default)]
    persona: Vec<String>,
}

/// Keep the suffix of `text` starting at its `max_tokens`-th token from the
/// end. Text with at most `max_tokens` tokens is returned unchanged.
pub fn truncate_to_last_tokens(text: &str, max_tokens: usize) -> &str {
    let spans = token_spans(text);
    if spans.len() <= max_tokens {
        return text;
    }
    if max_tokens == 0 {
        return "";
    }
    &text[spans[spans.len() - max_tokens].0..]
}

/// Persona lines joined with `" | "` ahead of the message, cut to the last
/// 64 tokens. This is the encoder input for a persona-conditioned turn.
pub fn compose_message<S: AsRef<str>>(persona: &[S], message: &str) -> String {
    let mut out = persona
        .iter()
        .map(|p| p.as_ref())
        .collect::<Vec<_>>()
        .join(PERSONA_SEPARATOR);
    if !out.is_empty() {
        out.push_str(PERSONA_SEPARATOR);
    }
    out.push_str(message);
    truncate_to_last_tokens(&out, MAX_TOKENS).to_owned()
}

/// Read `{"message", "reply", "persona"?}` JSON lines. Persona lines are
/// joined with `" | "` and prepended to the message, which is then cut to
/// its last 64 tokens. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<DialoguePair>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawPair = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let message = compose_message(&raw.persona, &raw.message);
        if tokenize(&message).is_empty() || tokenize(&raw.reply).is_empty() {
            return Err(malformed("message and reply must contain at least one word".into()));
        }
        out.push(DialoguePair {
            message,
            reply: raw.reply,
        });
    }
    if out.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            line: 0,
            message: "dataset is empty".into(),
        });
    }
    Ok(out)
}

pub fn write_dataset(path: impl AsRef<Path>, pairs: &[DialoguePair]) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aggregates for one system over a dataset. Metric means are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: String,
    /// Mean over items of `max_k weighted_rouge(y_k, reference)`.
    pub rouge: f64,
    /// Mean Self-ROUGE of the predicted sets; absent when k < 2.
    pub self_rouge: Option<f64>,
    /// Mean over items of `max_k term_f1(y_k, reference)`.
    pub term_f1: f64,
    pub tuples_evaluated: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub samples: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub temperature: f64,
    pub dataset_size: usize,
    pub systems: Vec<SystemReport>,
}

impl EvalReport {
    pub fn system(&self, name: &str) -> Option<&SystemReport> {
        self.systems.iter().find(|s| s.system == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table; metric columns are scaled by 100.
    pub fn to_table(&self) -> String {
        let header = [
            "System",
            "ROUGE",
            "Self-ROUGE",
            "Term-F1",
            "# Tuples",
            "p50 ms",
            "p95 ms",
            "Samples",
            "Failed",
        ];
        let rows: Vec<[String; 9]> = self
            .systems
            .iter()
            .map(|s| {
                [
                    s.system.clone(),
                    format!("{:.2}", s.rouge * 100.0),
                    s.self_rouge.map_or("-".into(), |v| format!("{:.2}", v * 100.0)),
                    format!("{:.2}", s.term_f1 * 100.0),
                    format!("{:.1}", s.tuples_evaluated),
                    format!("{:.3}", s.latency_p50_ms),
                    format!("{:.3}", s.latency_p95_ms),
                    s.samples.to_string(),
                    s.failures.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "K={} N={} M={} tau={} items={} (metrics x100)",
            self.k, self.n, self.m, self.temperature, self.dataset_size
        );
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i == 0 {
                        format!("{:<w$}", c, w = widths[i])
                    } else {
                        format!("{:>w$}", c, w = widths[i])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{}", line(&head));
        let _ = writeln!(
            out,
            "{}",
            "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
        );
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "system,rouge,self_rouge,term_f1,tuples_evaluated,latency_p50_ms,latency_p95_ms,samples,failures\n",
        );
        for s in &self.systems {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s.system,
                s.rouge,
                s.self_rouge.map_or(String::new(), |v| v.to_string()),
                s.term_f1,
                s.tuples_evaluated,
                s.latency_p50_ms,
                s.latency_p95_ms,
                s.samples,
                s.failures
            );
        }
        out
    }
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[f64], pct: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

/// Score one predicted set against its reference: `(max weighted ROUGE,
/// max term F1, Self-ROUGE)`.
pub fn score_predictions(predictions: &[Tokens], reference: &Tokens) -> (f64, f64, Option<f64>) {
    let rouge = predictions
        .iter()
        .map(|p| textmetrics::weighted_rouge(p, reference))
        .fold(0.0, f64::max);
    let f1 = predictions
        .iter()
        .map(|p| textmetrics::term_f1(p, reference))
        .fold(0.0, f64::max);
    (rouge, f1, textmetrics::self_rouge(predictions).ok())
}

/// Run every system over the dataset. Items a system fails on are counted
/// and excluded from its means. Latency is wall clock around `suggest`.
pub fn evaluate(engine: &Engine, systems: &[System], dataset: &[DialoguePair], config: &SuggestConfig) -> EvalReport {
    let effective = engine.effective_config(config).unwrap_or(*config);
    let references: Vec<Tokens> = dataset.iter().map(|p| tokenize(&p.reply)).collect();
    let reports = systems
        .iter()
        .map(|&system| {
            let cfg = SuggestConfig { system, ..*config };
            let mut rouge = Vec::with_capacity(dataset.len());
            let mut f1 = Vec::with_capacity(dataset.len());
            let mut selfr = Vec::with_capacity(dataset.len());
            let mut tuples = Vec::with_capacity(dataset.len());
            let mut latency = Vec::with_capacity(dataset.len());
            let mut failures = 0;
            for (pair, reference) in dataset.iter().zip(&references) {
                let start = std::time::Instant::now();
                let result = engine.suggest(&pair.message, &cfg);
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                match result {
                    Ok(s) => {
                        latency.push(elapsed);
                        let preds: Vec<Tokens> = s.replies.iter().map(|r| tokenize(r)).collect();
                        let (r, f, sr) = score_predictions(&preds, reference);
                        rouge.push(r);
                        f1.push(f);
                        if let Some(v) = sr {
                            selfr.push(v);
                        }
                        tuples.push(s.tuples_evaluated as f64);
                    }
                    Err(_) => failures += 1,
                }
            }
            SystemReport {
                system: system.name(),
                rouge: mean(&mut rouge),
                self_rouge: (!selfr.is_empty()).then(|| mean(&mut selfr)),
                term_f1: mean(&mut f1),
                tuples_evaluated: mean(&mut tuples),
                latency_p50_ms: percentile(&latency, 50.0),
                latency_p95_ms: percentile(&latency, 95.0),
                samples: rouge.len(),
                failures,
            }
        })
        .collect();
    EvalReport {
        k: effective.k,
        n: effective.n,
        m: effective.m,
        temperature: effective.temperature,
        dataset_size: dataset.len(),
        systems: reports,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Distinct reply intents, each with its own vocabulary.
    pub intents: usize,
    pub paraphrases_per_intent: usize,
    /// Distinct message types.
    pub messages: usize,
    /// Share of message types that admit two intents.
    pub bimodal_fraction: f64,
    /// Probability of the primary intent for a bimodal message.
    pub primary_share: f64,
    pub train_per_message: usize,
    pub test_per_message: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            intents: 30,
            paraphrases_per_intent: 4,
            messages: 90,
            bimodal_fraction: 0.6,
            primary_share: 0.6,
            train_per_message: 20,
            test_per_message: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<DialoguePair>,
    pub test: Vec<DialoguePair>,
    /// Every reply surface form, grouped by intent.
    pub intents: Vec<Vec<String>>,
    /// Valid intents of each message type with their probabilities.
    pub message_intents: Vec<Vec<(usize, f64)>>,
}

impl SyntheticCorpus {
    pub fn replies(&self) -> Vec<String> {
        self.intents.iter().flatten().cloned().collect()
    }
}

struct WordMint {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl WordMint {
    const ONSETS: &'static [&'static str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "pl", "gr",
    ];
    const VOWELS: &'static [&'static str] = &["a", "e", "i", "o", "u", "ai", "ou"];

    /// A fresh pseudo-word never returned before.
    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(Self::ONSETS.choose(&mut self.rng).expect("non-empty"));
                w.push_str(Self::VOWELS.choose(&mut self.rng).expect("non-empty"));
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

/// Seeded corpus of message types whose replies come from one or two
/// intents with disjoint vocabularies. Each intent is a three-word core
/// phrase; its paraphrases append one paraphrase-specific word.
pub fn make_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let c = config;
    if c.intents < 2 {
        return Err(Error::InvalidConfig("need at least 2 intents".into()));
    }
    if c.paraphrases_per_intent == 0 || c.messages == 0 || c.train_per_message == 0 {
        return Err(Error::InvalidConfig(
            "paraphrases_per_intent, messages and train_per_message must be >= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&c.bimodal_fraction) || !(0.5..1.0).contains(&c.primary_share) {
        return Err(Error::InvalidConfig(
            "bimodal_fraction must lie in [0, 1] and primary_share in [0.5, 1)".into(),
        ));
    }
    let mut mint = WordMint {
        rng: ChaCha8Rng::seed_from_u64(c.seed ^ 0x7379_6e74_6800_0000),
        seen: HashSet::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let intents: Vec<Vec<String>> = (0..c.intents)
        .map(|_| {
            let core = mint.words(3).join(" ");
            (0..c.paraphrases_per_intent)
                .map(|_| format!("{core} {}", mint.word()))
                .collect()
        })
        .collect();
    let fillers = mint.words(12);
    let message_words: Vec<Vec<String>> = (0..c.messages).map(|_| mint.words(4)).collect();

    let bimodal = (c.bimodal_fraction * c.messages as f64).round() as usize;
    let mut bimodal_flags: Vec<bool> = (0..c.messages).map(|t| t < bimodal).collect();
    rand::seq::SliceRandom::shuffle(bimodal_flags.as_mut_slice(), &mut rng);

    let message_intents: Vec<Vec<(usize, f64)>> = (0..c.messages)
        .map(|t| {
            let primary = t % c.intents;
            if bimodal_flags[t] {
                let mut secondary = rng.random_range(0..c.intents - 1);
                if secondary >= primary {
                    secondary += 1;
                }
                vec![(primary, c.primary_share), (secondary, 1.0 - c.primary_share)]
            } else {
                vec![(primary, 1.0)]
            }
        })
        .collect();

    // round-robin paraphrase choice per intent so every surface form shows up
    let mut next_paraphrase: Vec<usize> = (0..c.intents)
        .map(|_| rng.random_range(0..c.paraphrases_per_intent))
        .collect();
    let mut draw = |rng: &mut ChaCha8Rng, t: usize, round_robin: bool| -> DialoguePair {
        let options = &message_intents[t];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut intent = options[options.len() - 1].0;
        for &(i, p) in options {
            acc += p;
            if u < acc {
                intent = i;
                break;
            }
        }
        let para = if round_robin {
            let j = next_paraphrase[intent];
            next_paraphrase[intent] = (j + 1) % c.paraphrases_per_intent;
            j
        } else {
            rng.random_range(0..c.paraphrases_per_intent)
        };
        let filler = fillers.choose(rng).expect("non-empty");
        let mut words = message_words[t].clone();
        words.insert(rng.random_range(0..=words.len()), filler.clone());
        DialoguePair {
            message: words.join(" "),
            reply: intents[intent][para].clone(),
        }
    };

    let mut train = Vec::with_capacity(c.messages * c.train_per_message);
    for t in 0..c.messages {
        for _ in 0..c.train_per_message {
            train.push(draw(&mut rng, t, true));
        }
    }
    let mut test = Vec::with_capacity(c.messages * c.test_per_message);
    for t in 0..c.messages {
        for _ in 0..c.test_per_message {
            test.push(draw(&mut rng, t, false));
        }
    }
    rand::seq::SliceRandom::shuffle(train.as_mut_slice(), &mut rng);
    Ok(SyntheticCorpus {
        train,
        test,
        intents,
        message_intents,
    })
}

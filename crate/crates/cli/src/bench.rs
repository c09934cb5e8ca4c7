//! Single-threaded scoring benchmark: parse, extract and score each raw
//! record, timing every record individually.

use std::hint::black_box;
use std::time::{Duration, Instant};

use botstream_core::datasets::synthetic::random_user_records;
use botstream_core::features::extract_features;
use botstream_core::forest::{Forest, ForestConfig, TrainingMeta};
use botstream_core::user_model::parse_record;
use botstream_core::BigramModel;
use serde::Serialize;

use crate::error::CliError;

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub records: usize,
    pub rejected: usize,
    pub total_seconds: f64,
    pub records_per_sec: f64,
    pub records_per_day: f64,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

/// Nearest-rank percentile of sorted durations.
fn percentile(sorted: &[Duration], p: f64) -> Duration {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn micros(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Times `rounds` passes over `lines`. Latency statistics cover every
/// successfully scored record of every pass.
pub fn run_bench(
    lines: &[String],
    forest: &Forest,
    bigrams: &BigramModel,
    rounds: usize,
) -> Result<BenchReport, CliError> {
    let mut latencies = Vec::with_capacity(lines.len() * rounds.max(1));
    let mut rejected = 0;
    let start = Instant::now();
    for _ in 0..rounds.max(1) {
        for line in lines {
            let t = Instant::now();
            let result = parse_record(line, None)
                .map(|p| forest.score(&extract_features(&p.record, bigrams)));
            let elapsed = t.elapsed();
            match black_box(result) {
                Ok(_) => latencies.push(elapsed),
                Err(_) => rejected += 1,
            }
        }
    }
    let total = start.elapsed();
    if latencies.is_empty() {
        return Err(CliError::Data("benchmark input has no scoreable records".into()));
    }
    latencies.sort_unstable();
    let n = latencies.len();
    let mean = latencies.iter().sum::<Duration>() / n as u32;
    let records_per_sec = n as f64 / total.as_secs_f64();
    Ok(BenchReport {
        records: n,
        rejected,
        total_seconds: total.as_secs_f64(),
        records_per_sec,
        records_per_day: records_per_sec * SECONDS_PER_DAY,
        mean_us: micros(mean),
        p50_us: micros(percentile(&latencies, 50.0)),
        p95_us: micros(percentile(&latencies, 95.0)),
        p99_us: micros(percentile(&latencies, 99.0)),
        max_us: micros(latencies[n - 1]),
    })
}

/// Generated benchmark inputs: `n` raw NDJSON records, plus a bigram model
/// and forest built from `n_train` other generated accounts.
pub struct Fixture {
    pub lines: Vec<String>,
    pub bigrams: BigramModel,
    pub forest: Forest,
}

pub fn fixture(n: usize, n_train: usize, n_trees: usize, seed: u64) -> Result<Fixture, CliError> {
    let train = random_user_records(n_train, seed.wrapping_add(1));
    let bigrams = BigramModel::build(
        train.iter().map(|(r, _)| r.screen_name.as_str()),
        botstream_core::screen_name::DEFAULT_SMOOTHING,
    )
    .map_err(|e| CliError::command("bench fixture", e))?;
    let features: Vec<_> = train.iter().map(|(r, _)| extract_features(r, &bigrams)).collect();
    let labels: Vec<_> = train.iter().map(|(_, l)| *l).collect();
    let config = ForestConfig {
        n_trees,
        ..ForestConfig::with_seed(seed)
    };
    let meta = TrainingMeta {
        datasets: vec!["bench-fixture".into()],
        n_bots: labels.iter().filter(|l| l.is_bot()).count(),
        n_humans: labels.iter().filter(|l| !l.is_bot()).count(),
    };
    let forest = Forest::train(&features, &labels, &config, meta)
        .map_err(|e| CliError::command("bench fixture", e))?;
    let lines = random_user_records(n, seed.wrapping_add(2))
        .into_iter()
        .map(|(r, _)| r.to_json_line())
        .collect();
    Ok(Fixture {
        lines,
        bigrams,
        forest,
    })
}

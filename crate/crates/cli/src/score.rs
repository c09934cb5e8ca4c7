//! Streaming scoring. Input is consumed in fixed-size chunks, each chunk is
//! parsed and scored (in parallel when the pool has several threads), and
//! results are written in input order before the next chunk is read, so
//! memory stays bounded regardless of input length.

use std::io::{BufRead, Write};

use botstream_core::features::{FeatureCsvReader, FeatureRow};
use botstream_core::forest::label_at;
use botstream_core::user_model::parse_record;
use botstream_core::{extract_features, BigramModel, Forest, Label};
use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;

pub const DEFAULT_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Ndjson,
    Csv,
}

impl Format {
    /// CSV for `.csv` paths, NDJSON otherwise (including stdin).
    pub fn from_path(path: Option<&std::path::Path>) -> Format {
        match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Ndjson,
        }
    }
}

/// Immutable scoring context shared by all workers.
pub struct Scorer<'a> {
    pub forest: &'a Forest,
    /// Needed for raw NDJSON records only.
    pub bigrams: Option<&'a BigramModel>,
    pub threshold: Option<f64>,
    pub default_probe: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRecord {
    pub user_id: String,
    pub bot_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub record: usize,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScoreSummary {
    pub scored: usize,
    pub rejected: usize,
}

impl Scorer<'_> {
    fn finish(&self, user_id: String, features: &botstream_core::FeatureVector) -> ScoredRecord {
        let bot_score = self.forest.score(features);
        ScoredRecord {
            user_id,
            bot_score,
            label: self.threshold.map(|t| label_at(bot_score, t)),
        }
    }

    /// Parses, extracts and scores one NDJSON line.
    pub fn score_line(&self, line: &str) -> Result<ScoredRecord, String> {
        let bigrams = self
            .bigrams
            .ok_or_else(|| "raw records need a bigram model".to_owned())?;
        let parsed = parse_record(line, self.default_probe).map_err(|e| e.to_string())?;
        let features = extract_features(&parsed.record, bigrams);
        Ok(self.finish(parsed.record.user_id, &features))
    }

    pub fn score_row(&self, row: FeatureRow) -> ScoredRecord {
        self.finish(row.user_id, &row.features)
    }
}

/// Writes scored records in the chosen format.
pub struct RecordWriter<W: Write> {
    format: Format,
    csv: Option<csv::Writer<W>>,
    raw: Option<W>,
    with_label: bool,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(writer: W, format: Format, with_label: bool) -> Result<Self, CliError> {
        Ok(match format {
            Format::Ndjson => RecordWriter {
                format,
                csv: None,
                raw: Some(writer),
                with_label,
            },
            Format::Csv => {
                let mut w = csv::Writer::from_writer(writer);
                let mut header = vec!["user_id", "bot_score"];
                if with_label {
                    header.push("label");
                }
                w.write_record(&header).map_err(|e| CliError::command("write", e))?;
                RecordWriter {
                    format,
                    csv: Some(w),
                    raw: None,
                    with_label,
                }
            }
        })
    }

    pub fn write(&mut self, rec: &ScoredRecord) -> Result<(), CliError> {
        match self.format {
            Format::Ndjson => {
                let w = self.raw.as_mut().expect("ndjson writer");
                serde_json::to_writer(&mut *w, rec).map_err(|e| CliError::command("write", e))?;
                w.write_all(b"\n").map_err(|e| CliError::io("<output>", e))
            }
            Format::Csv => {
                let w = self.csv.as_mut().expect("csv writer");
                let score = rec.bot_score.to_string();
                let result = match (self.with_label, rec.label) {
                    (true, Some(l)) => w.write_record([rec.user_id.as_str(), &score, l.as_str()]),
                    (true, None) => w.write_record([rec.user_id.as_str(), &score, ""]),
                    (false, _) => w.write_record([rec.user_id.as_str(), &score]),
                };
                result.map_err(|e| CliError::command("write", e))
            }
        }
    }

    pub fn into_inner(self) -> Result<W, CliError> {
        match self.format {
            Format::Ndjson => Ok(self.raw.expect("ndjson writer")),
            Format::Csv => self
                .csv
                .expect("csv writer")
                .into_inner()
                .map_err(|e| CliError::command("write", e.error())),
        }
    }
}

fn write_rejection<S: Write>(sink: &mut S, r: &Rejection) -> Result<(), CliError> {
    log::warn!("record {}: {}", r.record, r.error);
    serde_json::to_writer(&mut *sink, r).map_err(|e| CliError::command("write", e))?;
    sink.write_all(b"\n").map_err(|e| CliError::io("<rejections>", e))
}

fn score_chunk<T: Send, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<Result<ScoredRecord, Rejection>>
where
    F: Fn(T) -> Result<ScoredRecord, Rejection> + Sync + Send,
{
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

/// Scores every record of `input` and writes results in input order.
/// Rejected records go to `rejects` as NDJSON `{record, error}` lines.
#[allow(clippy::too_many_arguments)]
pub fn score_stream<R: BufRead, W: Write, S: Write>(
    scorer: &Scorer<'_>,
    mut input: R,
    input_format: Format,
    output: &mut RecordWriter<W>,
    rejects: &mut S,
    chunk: usize,
    parallel: bool,
) -> Result<ScoreSummary, CliError> {
    let chunk = chunk.max(1);
    let mut summary = ScoreSummary::default();
    let mut emit = |results: Vec<Result<ScoredRecord, Rejection>>,
                    summary: &mut ScoreSummary|
     -> Result<(), CliError> {
        for r in results {
            match r {
                Ok(rec) => {
                    output.write(&rec)?;
                    summary.scored += 1;
                }
                Err(rej) => {
                    write_rejection(rejects, &rej)?;
                    summary.rejected += 1;
                }
            }
        }
        Ok(())
    };

    match input_format {
        Format::Ndjson => {
            let mut ordinal = 0usize;
            let mut lines: Vec<(usize, String)> = Vec::with_capacity(chunk);
            loop {
                lines.clear();
                let mut eof = false;
                while lines.len() < chunk {
                    let mut line = String::new();
                    match input.read_line(&mut line) {
                        Ok(0) => {
                            eof = true;
                            break;
                        }
                        Ok(_) => {
                            ordinal += 1;
                            if !line.trim().is_empty() {
                                lines.push((ordinal, line));
                            }
                        }
                        Err(e) => return Err(CliError::io("<input>", e)),
                    }
                }
                let batch = std::mem::take(&mut lines);
                let results = score_chunk(batch, parallel, |(n, line)| {
                    scorer
                        .score_line(&line)
                        .map_err(|error| Rejection { record: n, error })
                });
                emit(results, &mut summary)?;
                if eof {
                    break;
                }
            }
        }
        Format::Csv => {
            let reader =
                FeatureCsvReader::new(input).map_err(|e| CliError::Config(format!("input: {e}")))?;
            let mut rows = reader.enumerate().peekable();
            while rows.peek().is_some() {
                let batch: Vec<_> = rows.by_ref().take(chunk).collect();
                let results = score_chunk(batch, parallel, |(i, row)| match row {
                    Ok(row) => Ok(scorer.score_row(row)),
                    Err(e) => Err(Rejection {
                        record: i + 1,
                        error: e.to_string(),
                    }),
                });
                emit(results, &mut summary)?;
            }
        }
    }
    Ok(summary)
}

//! Training-data selection over dataset combinations.
//!
//! Every subset of the candidate datasets that contains both classes is a
//! candidate. Each candidate's forest is scored on a fixed set of tests
//! (AUC on each holdout, cross-validated AUC, rank correlation with reference
//! scores) and the candidate with the smallest product of per-test ranks wins.

use std::cmp::Ordering;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{LabeledDataset, ReferenceSet, Registry, Role};
use crate::forest::{Forest, ForestConfig};
use crate::metrics::{average_ranks, spearman, MetricError};
use crate::validation::{
    auc_on, cross_val_auc, train_forest_named, ValidationError, DEFAULT_CV_FOLDS,
};

/// Candidate ids use a 64-bit inclusion mask.
pub const MAX_CANDIDATE_DATASETS: usize = 63;

pub const CV_TEST: &str = "cv";
pub const REFERENCE_TEST: &str = "reference";

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no candidate datasets")]
    NoDatasets,
    #[error("{0} candidate datasets exceed the limit of {MAX_CANDIDATE_DATASETS}")]
    TooManyDatasets(usize),
    #[error("no admissible candidate: the datasets never contain both classes")]
    NoCandidates,
    #[error("no holdout datasets configured")]
    NoHoldouts,
    #[error("no reference score set configured")]
    NoReference,
    #[error("candidate {candidate} has no value for test `{test}`")]
    MissingScore { candidate: String, test: String },
    #[error("candidate {candidate} has {found} test values, expected {expected}")]
    WrongArity {
        candidate: String,
        found: usize,
        expected: usize,
    },
    #[error("tie-break test index {0} is out of range")]
    BadTieBreak(usize),
    #[error("candidate {candidate}: {source}")]
    Validation {
        candidate: String,
        source: ValidationError,
    },
    #[error("candidate {candidate}: reference correlation: {source}")]
    Reference {
        candidate: String,
        source: MetricError,
    },
}

/// A dataset offered for training, with its class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateDataset {
    pub name: String,
    pub n_bots: usize,
    pub n_humans: usize,
}

impl CandidateDataset {
    pub fn of(ds: &LabeledDataset) -> Self {
        CandidateDataset {
            name: ds.name().to_owned(),
            n_bots: ds.n_bots(),
            n_humans: ds.n_humans(),
        }
    }
}

/// A dataset combination. Bit `i` of `mask` selects the `i`-th candidate
/// dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub mask: u64,
    pub datasets: Vec<String>,
}

pub fn candidate_id(mask: u64) -> String {
    format!("M{mask}")
}

/// All non-empty subsets whose union has at least one bot and one human,
/// in increasing mask order.
pub fn enumerate_candidates(
    datasets: &[CandidateDataset],
) -> Result<Vec<Candidate>, SelectionError> {
    if datasets.is_empty() {
        return Err(SelectionError::NoDatasets);
    }
    if datasets.len() > MAX_CANDIDATE_DATASETS {
        return Err(SelectionError::TooManyDatasets(datasets.len()));
    }
    let bot_mask: u64 = mask_where(datasets, |d| d.n_bots > 0);
    let human_mask: u64 = mask_where(datasets, |d| d.n_humans > 0);
    let candidates: Vec<Candidate> = (1..(1u64 << datasets.len()))
        .filter(|m| m & bot_mask != 0 && m & human_mask != 0)
        .map(|mask| Candidate {
            id: candidate_id(mask),
            mask,
            datasets: datasets
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, d)| d.name.clone())
                .collect(),
        })
        .collect();
    if candidates.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    Ok(candidates)
}

fn mask_where(datasets: &[CandidateDataset], pred: impl Fn(&CandidateDataset) -> bool) -> u64 {
    datasets
        .iter()
        .enumerate()
        .filter(|(_, d)| pred(d))
        .fold(0, |m, (i, _)| m | 1 << i)
}

/// Test values for one candidate, aligned with [`ScoreTable::tests`].
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScores {
    pub candidate: Candidate,
    pub scores: Vec<Option<f64>>,
}

/// Inputs to rank-product selection. `tie_break` indexes the test whose
/// higher value wins a tie in rank product.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub tests: Vec<String>,
    pub tie_break: usize,
    pub rows: Vec<CandidateScores>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub candidate: Candidate,
    pub scores: Vec<f64>,
    pub ranks: Vec<f64>,
    pub rank_product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub tests: Vec<String>,
    /// In the order given to [`rank_product_select`].
    pub rows: Vec<ReportRow>,
    /// Row indices from best to worst.
    pub order: Vec<usize>,
}

impl SelectionReport {
    pub fn winner(&self) -> &ReportRow {
        &self.rows[self.order[0]]
    }

    /// The next `n` candidates after the winner.
    pub fn runners_up(&self, n: usize) -> Vec<&ReportRow> {
        self.order.iter().skip(1).take(n).map(|&i| &self.rows[i]).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["candidate_id".to_owned(), "dataset_mask".to_owned()];
        header.extend(self.tests.iter().cloned());
        header.extend(self.tests.iter().map(|t| format!("rank_{t}")));
        header.push("rank_product".to_owned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.candidate.id.clone(), format!("{:b}", row.candidate.mask)];
            rec.extend(row.scores.iter().map(f64::to_string));
            rec.extend(row.ranks.iter().map(f64::to_string));
            rec.push(row.rank_product.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Ranks candidates best-first within each test (higher is better, ties get
/// the average rank) and orders them by rank product. Equal products go to
/// the higher tie-break score, then to the lower mask.
pub fn rank_product_select(table: &ScoreTable) -> Result<SelectionReport, SelectionError> {
    let n_tests = table.tests.len();
    if table.rows.is_empty() {
        return Err(SelectionError::NoCandidates);
    }
    if table.tie_break >= n_tests {
        return Err(SelectionError::BadTieBreak(table.tie_break));
    }
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        if row.scores.len() != n_tests {
            return Err(SelectionError::WrongArity {
                candidate: row.candidate.id.clone(),
                found: row.scores.len(),
                expected: n_tests,
            });
        }
        let mut values = Vec::with_capacity(n_tests);
        for (t, s) in row.scores.iter().enumerate() {
            match s {
                Some(v) if v.is_finite() => values.push(*v),
                _ => {
                    return Err(SelectionError::MissingScore {
                        candidate: row.candidate.id.clone(),
                        test: table.tests[t].clone(),
                    })
                }
            }
        }
        scores.push(values);
    }

    let n = scores.len();
    let mut ranks = vec![vec![0.0; n_tests]; n];
    for t in 0..n_tests {
        let negated: Vec<f64> = scores.iter().map(|s| -s[t]).collect();
        for (i, r) in average_ranks(&negated).into_iter().enumerate() {
            ranks[i][t] = r;
        }
    }
    // Average ranks are multiples of 1/2, so doubling makes the products
    // exact integers.
    let exact: Vec<u128> = ranks
        .iter()
        .map(|rs| rs.iter().map(|r| (2.0 * r) as u128).product())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        exact[a]
            .cmp(&exact[b])
            .then_with(|| {
                scores[b][table.tie_break]
                    .partial_cmp(&scores[a][table.tie_break])
                    .unwrap_or(Ordering::Equal)
            })
            .then(table.rows[a].candidate.mask.cmp(&table.rows[b].candidate.mask))
    });

    let rows = table
        .rows
        .iter()
        .zip(scores)
        .zip(ranks)
        .map(|((row, scores), ranks)| ReportRow {
            candidate: row.candidate.clone(),
            rank_product: ranks.iter().product(),
            scores,
            ranks,
        })
        .collect();
    Ok(SelectionReport {
        tests: table.tests.clone(),
        rows,
        order,
    })
}

/// What every candidate is tested against.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationSetup<'a> {
    pub holdouts: &'a [&'a LabeledDataset],
    pub reference: &'a ReferenceSet,
    pub forest: &'a ForestConfig,
    pub cv_folds: usize,
}

impl EvaluationSetup<'_> {
    /// Holdout names, then [`CV_TEST`], then [`REFERENCE_TEST`].
    pub fn test_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.holdouts.iter().map(|d| d.name().to_owned()).collect();
        names.push(CV_TEST.to_owned());
        names.push(REFERENCE_TEST.to_owned());
        names
    }

    pub fn cv_index(&self) -> usize {
        self.holdouts.len()
    }
}

fn training_union(candidate: &Candidate, training: &[&LabeledDataset]) -> LabeledDataset {
    LabeledDataset::union(
        candidate.id.clone(),
        training
            .iter()
            .filter(|d| candidate.datasets.iter().any(|n| n == d.name()))
            .copied(),
    )
}

/// Trains the candidate's forest on the union of its datasets.
pub fn train_candidate(
    candidate: &Candidate,
    training: &[&LabeledDataset],
    config: &ForestConfig,
) -> Result<Forest, SelectionError> {
    let union = training_union(candidate, training);
    train_forest_named(&union, config, candidate.datasets.clone()).map_err(|source| {
        SelectionError::Validation {
            candidate: candidate.id.clone(),
            source,
        }
    })
}

/// Test values in [`EvaluationSetup::test_names`] order. The candidate's
/// forest is dropped before cross-validation starts.
pub fn evaluate_candidate(
    candidate: &Candidate,
    training: &[&LabeledDataset],
    setup: &EvaluationSetup<'_>,
) -> Result<Vec<f64>, SelectionError> {
    let wrap = |source| SelectionError::Validation {
        candidate: candidate.id.clone(),
        source,
    };
    let union = training_union(candidate, training);
    let mut results = Vec::with_capacity(setup.holdouts.len() + 2);
    let reference_rho = {
        let forest = train_forest_named(&union, setup.forest, candidate.datasets.clone())
            .map_err(wrap)?;
        for holdout in setup.holdouts {
            results.push(auc_on(&forest, holdout).map_err(wrap)?);
        }
        let ours: Vec<f64> = setup.reference.features.iter().map(|x| forest.score(x)).collect();
        spearman(&ours, &setup.reference.scores).map_err(|source| SelectionError::Reference {
            candidate: candidate.id.clone(),
            source,
        })?
    };
    results.push(cross_val_auc(&union, setup.cv_folds, setup.forest).map_err(wrap)?);
    results.push(reference_rho);
    Ok(results)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub forest: ForestConfig,
    pub cv_folds: usize,
    /// Upper bound on candidate forests held in memory at once.
    pub max_resident: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            forest: ForestConfig::default(),
            cv_folds: DEFAULT_CV_FOLDS,
            max_resident: rayon::current_num_threads().max(1),
        }
    }
}

pub struct SelectionOutcome {
    pub report: SelectionReport,
    /// The winner retrained with the shared configuration.
    pub winner_forest: Forest,
}

/// Runs the whole selection over a registry: candidates come from the
/// `candidate-training` datasets in manifest order, tests from the
/// `holdout` datasets and the reference set.
pub fn run_selection(
    registry: &Registry,
    config: &SelectionConfig,
) -> Result<SelectionOutcome, SelectionError> {
    let training = registry.with_role(Role::CandidateTraining);
    let holdouts = registry.with_role(Role::Holdout);
    if holdouts.is_empty() {
        return Err(SelectionError::NoHoldouts);
    }
    let reference = registry.reference().ok_or(SelectionError::NoReference)?;
    let setup = EvaluationSetup {
        holdouts: &holdouts,
        reference,
        forest: &config.forest,
        cv_folds: config.cv_folds,
    };
    let candidates = enumerate_candidates(
        &training.iter().map(|d| CandidateDataset::of(d)).collect::<Vec<_>>(),
    )?;
    log::info!(
        "evaluating {} candidates over {} datasets",
        candidates.len(),
        training.len()
    );

    let mut rows = Vec::with_capacity(candidates.len());
    for chunk in candidates.chunks(config.max_resident.max(1)) {
        let evaluated = chunk
            .par_iter()
            .map(|c| evaluate_candidate(c, &training, &setup))
            .collect::<Result<Vec<_>, _>>()?;
        for (c, scores) in chunk.iter().zip(evaluated) {
            log::debug!("{}: {:?}", c.id, scores);
            rows.push(CandidateScores {
                candidate: c.clone(),
                scores: scores.into_iter().map(Some).collect(),
            });
        }
    }
    let report = rank_product_select(&ScoreTable {
        tests: setup.test_names(),
        tie_break: setup.cv_index(),
        rows,
    })?;
    let winner_forest = train_candidate(&report.winner().candidate, &training, &config.forest)?;
    Ok(SelectionOutcome {
        report,
        winner_forest,
    })
}

/// Points at the selected model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerManifest {
    pub winner: Candidate,
    pub model: PathBuf,
    pub rank_product: f64,
    pub scores: Vec<(String, f64)>,
    pub runners_up: Vec<String>,
}

impl WinnerManifest {
    pub fn new(report: &SelectionReport, model: PathBuf) -> Self {
        let w = report.winner();
        WinnerManifest {
            winner: w.candidate.clone(),
            model,
            rank_product: w.rank_product,
            scores: report.tests.iter().cloned().zip(w.scores.iter().copied()).collect(),
            runners_up: report.runners_up(2).iter().map(|r| r.candidate.id.clone()).collect(),
        }
    }
}

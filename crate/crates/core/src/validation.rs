//! Train/score helpers shared by the analysis and selection harnesses.

use thiserror::Error;

use crate::datasets::LabeledDataset;
use crate::derive_seed;
use crate::forest::{Forest, ForestConfig, ForestError, TrainingMeta};
use crate::metrics::{auc, stratified_kfold, MetricError, ScoredSample};

pub const DEFAULT_CV_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("dataset `{dataset}`: {source}")]
    Forest {
        dataset: String,
        source: ForestError,
    },
    #[error("dataset `{dataset}`: {source}")]
    Metric {
        dataset: String,
        source: MetricError,
    },
}

pub fn train_forest(ds: &LabeledDataset, config: &ForestConfig) -> Result<Forest, ValidationError> {
    train_forest_named(ds, config, vec![ds.name().to_owned()])
}

pub fn train_forest_named(
    ds: &LabeledDataset,
    config: &ForestConfig,
    sources: Vec<String>,
) -> Result<Forest, ValidationError> {
    let meta = TrainingMeta {
        datasets: sources,
        n_bots: ds.n_bots(),
        n_humans: ds.n_humans(),
    };
    Forest::train(&ds.features(), &ds.labels(), config, meta).map_err(|source| {
        ValidationError::Forest {
            dataset: ds.name().to_owned(),
            source,
        }
    })
}

pub fn score_dataset(forest: &Forest, ds: &LabeledDataset) -> Vec<ScoredSample> {
    ds.samples()
        .iter()
        .map(|s| ScoredSample::new(forest.score(&s.features), s.label))
        .collect()
}

pub fn auc_on(forest: &Forest, ds: &LabeledDataset) -> Result<f64, ValidationError> {
    auc(&score_dataset(forest, ds)).map_err(|source| ValidationError::Metric {
        dataset: ds.name().to_owned(),
        source,
    })
}

/// Out-of-fold scores from stratified k-fold cross-validation, returned in
/// dataset order. Fold `f` trains with seed `derive_seed(config.seed, f)`.
pub fn cross_val_scores(
    ds: &LabeledDataset,
    k: usize,
    config: &ForestConfig,
) -> Result<Vec<ScoredSample>, ValidationError> {
    let metric_err = |source| ValidationError::Metric {
        dataset: ds.name().to_owned(),
        source,
    };
    let folds = stratified_kfold(&ds.labels(), k, config.seed).map_err(metric_err)?;
    let mut scores = vec![None; ds.len()];
    for (f, fold) in folds.iter().enumerate() {
        let train = ds.subset(ds.name(), &fold.train);
        let fold_config = ForestConfig {
            seed: derive_seed(config.seed, f as u64),
            ..*config
        };
        let forest = train_forest(&train, &fold_config)?;
        for &i in &fold.test {
            let s = &ds.samples()[i];
            scores[i] = Some(ScoredSample::new(forest.score(&s.features), s.label));
        }
    }
    Ok(scores
        .into_iter()
        .map(|s| s.expect("folds cover every sample"))
        .collect())
}

/// AUC of the pooled out-of-fold scores.
pub fn cross_val_auc(
    ds: &LabeledDataset,
    k: usize,
    config: &ForestConfig,
) -> Result<f64, ValidationError> {
    let scores = cross_val_scores(ds, k, config)?;
    auc(&scores).map_err(|source| ValidationError::Metric {
        dataset: ds.name().to_owned(),
        source,
    })
}

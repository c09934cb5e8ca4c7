//! Labeled datasets: loading, balanced sampling, merging and a registry.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{extract_features, FeatureCsvError, FeatureCsvReader, FeatureVector};
use crate::screen_name::BigramModel;
use crate::user_model::{Label, RecordStream};

mod registry;
pub mod synthetic;

pub use registry::{
    standard_merge_rules, FeatureOverride, MergeInput, MergeRule, Partition, ReferenceSet, Registry,
    RegistryEntry, RegistryManifest, Role,
};
pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset `{0}` has no samples")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: FeatureCsvError,
    },
    #[error("{path}: raw NDJSON records need a bigram model to extract features")]
    NeedBigrams { path: PathBuf },
    #[error("{path}: unrecognized dataset format (expected .csv, .ndjson, .jsonl or .json)")]
    UnknownFormat { path: PathBuf },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("dataset `{0}` is not in the registry")]
    UnknownDataset(String),
    #[error("dataset `{0}` is defined twice")]
    Duplicate(String),
    #[error("merge rule `{rule}`: {message}")]
    Rule { rule: String, message: String },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
}

/// One labeled account.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub user_id: String,
    pub features: FeatureVector,
    pub label: Label,
}

/// A named collection of labeled feature vectors with cached class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    samples: Vec<Sample>,
    n_bots: usize,
    n_humans: usize,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        let n_bots = samples.iter().filter(|s| s.label.is_bot()).count();
        let n_humans = samples.len() - n_bots;
        LabeledDataset {
            name: name.into(),
            samples,
            n_bots,
            n_humans,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_bots(&self) -> usize {
        self.n_bots
    }

    pub fn n_humans(&self) -> usize {
        self.n_humans
    }

    pub fn has_both_classes(&self) -> bool {
        self.n_bots > 0 && self.n_humans > 0
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.samples.iter().map(|s| s.features).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// The samples at `indices`, in the given order.
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> LabeledDataset {
        LabeledDataset::new(
            name,
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
        )
    }

    /// Concatenation of several datasets, in order.
    pub fn union<'a>(
        name: impl Into<String>,
        parts: impl IntoIterator<Item = &'a LabeledDataset>,
    ) -> LabeledDataset {
        LabeledDataset::new(
            name,
            parts
                .into_iter()
                .flat_map(|d| d.samples.iter().cloned())
                .collect(),
        )
    }

    /// Same dataset with every label flipped.
    pub fn with_flipped_labels(&self, name: impl Into<String>) -> LabeledDataset {
        LabeledDataset::new(
            name,
            self.samples
                .iter()
                .map(|s| Sample {
                    label: s.label.flipped(),
                    ..s.clone()
                })
                .collect(),
        )
    }
}

/// Uniform sample without replacement of up to `n_per_class` accounts per
/// class; classes smaller than that are taken whole. The result keeps the
/// dataset's original order.
pub fn sample_balanced(ds: &LabeledDataset, n_per_class: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(2 * n_per_class);
    for class in [Label::Bot, Label::Human] {
        let members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.samples[i].label == class)
            .collect();
        if members.len() <= n_per_class {
            chosen.extend(members);
        } else {
            chosen.extend(
                rand::seq::index::sample(&mut rng, members.len(), n_per_class)
                    .into_iter()
                    .map(|j| members[j]),
            );
        }
    }
    chosen.sort_unstable();
    ds.subset(ds.name.clone(), &chosen)
}

/// Options for reading raw NDJSON records into a dataset.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions<'a> {
    pub bigrams: Option<&'a BigramModel>,
    pub default_probe: Option<DateTime<Utc>>,
}

/// A loaded dataset together with the records that were rejected.
#[derive(Debug)]
pub struct LoadReport {
    pub dataset: LabeledDataset,
    pub rejected: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    FeatureCsv,
    Ndjson,
}

impl FileFormat {
    pub fn detect(path: &Path) -> Option<FileFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(FileFormat::FeatureCsv),
            "ndjson" | "jsonl" | "json" => Some(FileFormat::Ndjson),
            _ => None,
        }
    }
}

/// Rows of either file format, before labels are enforced.
pub(crate) struct RawRow {
    pub user_id: String,
    pub features: FeatureVector,
    pub label: Option<Label>,
}

pub(crate) fn read_rows(
    path: &Path,
    opts: &LoadOptions<'_>,
) -> Result<(Vec<RawRow>, Vec<String>), DatasetError> {
    let format = FileFormat::detect(path).ok_or_else(|| DatasetError::UnknownFormat {
        path: path.to_owned(),
    })?;
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut rejected = Vec::new();
    match format {
        FileFormat::FeatureCsv => {
            let reader = FeatureCsvReader::new(BufReader::new(file)).map_err(|source| {
                DatasetError::Csv {
                    path: path.to_owned(),
                    source,
                }
            })?;
            for row in reader {
                match row {
                    Ok(r) => rows.push(RawRow {
                        user_id: r.user_id,
                        features: r.features,
                        label: r.label,
                    }),
                    Err(e) => rejected.push(e.to_string()),
                }
            }
        }
        FileFormat::Ndjson => {
            let bigrams = opts.bigrams.ok_or_else(|| DatasetError::NeedBigrams {
                path: path.to_owned(),
            })?;
            for item in RecordStream::new(BufReader::new(file), opts.default_probe) {
                match item {
                    Ok((_, parsed)) => rows.push(RawRow {
                        features: extract_features(&parsed.record, bigrams),
                        user_id: parsed.record.user_id,
                        label: parsed.label,
                    }),
                    Err(e) => rejected.push(e.to_string()),
                }
            }
        }
    }
    Ok((rows, rejected))
}

/// Loads a labeled dataset from a feature CSV or a labeled NDJSON file.
/// Rows without a label are rejected; a dataset with no accepted rows is an
/// error.
pub fn load_dataset(
    name: &str,
    path: &Path,
    opts: &LoadOptions<'_>,
) -> Result<LoadReport, DatasetError> {
    let (rows, mut rejected) = read_rows(path, opts)?;
    let mut samples = Vec::with_capacity(rows.len());
    for row in rows {
        match row.label {
            Some(label) => samples.push(Sample {
                user_id: row.user_id,
                features: row.features,
                label,
            }),
            None => rejected.push(format!("account {}: missing label", row.user_id)),
        }
    }
    if samples.is_empty() {
        return Err(DatasetError::Empty(name.to_owned()));
    }
    for r in &rejected {
        log::warn!("{name}: rejected {r}");
    }
    Ok(LoadReport {
        dataset: LabeledDataset::new(name, samples),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureCsvWriter, N_FEATURES};
    use std::io::Write;

    pub(crate) fn toy(name: &str, bots: usize, humans: usize) -> LabeledDataset {
        let samples = (0..bots + humans)
            .map(|i| Sample {
                user_id: format!("{name}-{i}"),
                features: FeatureVector([i as f64; N_FEATURES]),
                label: if i < bots { Label::Bot } else { Label::Human },
            })
            .collect();
        LabeledDataset::new(name, samples)
    }

    #[test]
    fn counts_follow_labels() {
        let ds = toy("a", 3, 5);
        assert_eq!((ds.n_bots(), ds.n_humans(), ds.len()), (3, 5, 8));
        let merged = LabeledDataset::union("ab", [&ds, &toy("b", 2, 0)]);
        assert_eq!((merged.n_bots(), merged.n_humans(), merged.len()), (5, 5, 10));
        let flipped = ds.with_flipped_labels("f");
        assert_eq!((flipped.n_bots(), flipped.n_humans()), (5, 3));
    }

    #[test]
    fn balanced_sampling() {
        let ds = toy("big", 10_000, 10_000);
        let s = sample_balanced(&ds, 500, 1);
        assert_eq!((s.n_bots(), s.n_humans()), (500, 500));
        assert_eq!(s, sample_balanced(&ds, 500, 1));
        assert_ne!(s, sample_balanced(&ds, 500, 2));

        let small = toy("small", 30, 800);
        let s = sample_balanced(&small, 500, 1);
        assert_eq!((s.n_bots(), s.n_humans()), (30, 500));
        let ids: std::collections::HashSet<_> = s.samples().iter().map(|x| &x.user_id).collect();
        assert_eq!(ids.len(), s.len());
    }

    #[test]
    fn load_csv_and_reject_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.csv");
        let mut w = FeatureCsvWriter::new(File::create(&path).unwrap(), true).unwrap();
        w.write("1", &FeatureVector([1.0; N_FEATURES]), Some(Label::Bot)).unwrap();
        w.write("2", &FeatureVector([2.0; N_FEATURES]), Some(Label::Human)).unwrap();
        w.write("3", &FeatureVector([3.0; N_FEATURES]), None).unwrap();
        w.into_inner().unwrap();
        let report = load_dataset("two", &path, &LoadOptions::default()).unwrap();
        assert_eq!((report.dataset.n_bots(), report.dataset.n_humans()), (1, 1));
        assert_eq!(report.rejected.len(), 1);

        let empty = dir.path().join("empty.csv");
        FeatureCsvWriter::new(File::create(&empty).unwrap(), true)
            .unwrap()
            .into_inner()
            .unwrap();
        assert!(matches!(
            load_dataset("empty", &empty, &LoadOptions::default()),
            Err(DatasetError::Empty(_))
        ));
    }

    #[test]
    fn load_ndjson_needs_bigrams() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.ndjson");
        let mut f = File::create(&path).unwrap();
        writeln!(
            f,
            r#"{{"id_str":"1","screen_name":"abc","statuses_count":1,"followers_count":1,"friends_count":1,"favourites_count":1,"listed_count":1,"created_at":"2018-01-01T00:00:00Z","probe_time":"2018-01-02T00:00:00Z","label":"human"}}"#
        )
        .unwrap();
        writeln!(f, "{{broken").unwrap();
        drop(f);
        assert!(matches!(
            load_dataset("raw", &path, &LoadOptions::default()),
            Err(DatasetError::NeedBigrams { .. })
        ));
        let bigrams = BigramModel::uniform();
        let opts = LoadOptions {
            bigrams: Some(&bigrams),
            default_probe: None,
        };
        let report = load_dataset("raw", &path, &opts).unwrap();
        assert_eq!(report.dataset.n_humans(), 1);
        assert_eq!(report.rejected.len(), 1);
    }
}

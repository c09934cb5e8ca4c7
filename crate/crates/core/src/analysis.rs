//! Dataset characterization and cross-dataset generalization.
//!
//! Characterization log-rescales the features, projects each dataset onto
//! its first two principal components for plotting, and measures how well a
//! k-nearest-neighbour vote recovers the labels (the homogeneity score),
//! repeated over many balanced subsamples.
//!
//! The cross-dataset matrix trains a forest on each dataset and tests it on
//! every other one.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::datasets::{sample_balanced, LabeledDataset};
use crate::derive_seed;
use crate::features::{Feature, FeatureVector, N_FEATURES};
use crate::forest::ForestConfig;
use crate::metrics::{spearman, spearman_p_value, MetricError};
use crate::user_model::Label;
use crate::validation::{auc_on, cross_val_auc, train_forest, ValidationError};

pub const DEFAULT_K: usize = 9;
pub const DEFAULT_PER_CLASS: usize = 500;
pub const DEFAULT_REPETITIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dataset `{name}` needs at least {needed} samples, has {found}")]
    TooFewSamples {
        name: String,
        needed: usize,
        found: usize,
    },
    #[error("dataset `{0}` has no non-constant feature")]
    AllConstant(String),
    #[error("k must be odd, got {0}")]
    EvenK(usize),
    #[error("k = {k} must be smaller than the sample count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("homogeneity needs at least one sample")]
    Empty,
    #[error("dataset `{0}` contains a single class")]
    SingleClass(String),
    #[error("the matrix needs at least two datasets")]
    TooFewDatasets,
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// `log10(1 + x)` on every non-binary feature; binary features pass through.
pub fn log_rescale(fv: &FeatureVector) -> [f64; N_FEATURES] {
    let mut out = fv.0;
    for f in Feature::ALL {
        if !f.is_binary() {
            out[f.index()] = (1.0 + fv.0[f.index()]).log10();
        }
    }
    out
}

/// Feature space for kNN distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceSpace {
    #[default]
    LogRescaled,
    Raw,
}

impl DistanceSpace {
    fn transform(self, fv: &FeatureVector) -> [f64; N_FEATURES] {
        match self {
            DistanceSpace::LogRescaled => log_rescale(fv),
            DistanceSpace::Raw => fv.0,
        }
    }
}

/// A dataset projected onto its top two principal components.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub coords: Vec<[f64; 2]>,
    pub labels: Vec<Label>,
    /// Eigenvalues of the standardized covariance matrix.
    pub eigenvalues: [f64; 2],
    pub explained_variance_ratio: [f64; 2],
    /// Loadings over the 20 canonical features (zero for dropped columns).
    pub components: [[f64; N_FEATURES]; 2],
}

/// Log-rescales, z-scores each column (constant columns dropped), and projects
/// onto the two leading eigenvectors of the covariance matrix. Each
/// eigenvector's largest-magnitude loading is made positive.
pub fn pca_2d(ds: &LabeledDataset) -> Result<PcaProjection, AnalysisError> {
    let n = ds.len();
    if n < 3 {
        return Err(AnalysisError::TooFewSamples {
            name: ds.name().to_owned(),
            needed: 3,
            found: n,
        });
    }
    let rows: Vec<[f64; N_FEATURES]> = ds.samples().iter().map(|s| log_rescale(&s.features)).collect();

    let mut kept = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for f in 0..N_FEATURES {
        let mean = rows.iter().map(|r| r[f]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        if var > 0.0 {
            kept.push(f);
            means.push(mean);
            stds.push(var.sqrt());
        }
    }
    if kept.is_empty() {
        return Err(AnalysisError::AllConstant(ds.name().to_owned()));
    }
    let m = kept.len();
    let z = DMatrix::from_fn(n, m, |i, c| (rows[i][kept[c]] - means[c]) / stds[c]);
    let cov = (z.transpose() * &z) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut eigenvalues = [0.0; 2];
    let mut components = [[0.0; N_FEATURES]; 2];
    let mut vectors: [Vec<f64>; 2] = [vec![0.0; m], vec![0.0; m]];
    for (slot, &col) in order.iter().take(2).enumerate() {
        let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues[slot] = eig.eigenvalues[col].max(0.0);
        for (c, &f) in kept.iter().enumerate() {
            components[slot][f] = v[c];
        }
        vectors[slot] = v;
    }
    let explained_variance_ratio = if total > 0.0 {
        [eigenvalues[0] / total, eigenvalues[1] / total]
    } else {
        [0.0, 0.0]
    };
    let coords = (0..n)
        .map(|i| {
            let row = z.row(i);
            let dot = |v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [dot(&vectors[0]), dot(&vectors[1])]
        })
        .collect();
    Ok(PcaProjection {
        coords,
        labels: ds.labels(),
        eigenvalues,
        explained_variance_ratio,
        components,
    })
}

/// Leave-one-out kNN vote: each point gets the majority label of its `k`
/// nearest other points. Distance ties are broken by sample ordinal.
pub fn knn_assign(
    ds: &LabeledDataset,
    k: usize,
    space: DistanceSpace,
) -> Result<Vec<Label>, AnalysisError> {
    if k.is_multiple_of(2) {
        return Err(AnalysisError::EvenK(k));
    }
    let n = ds.len();
    if k >= n {
        return Err(AnalysisError::KTooLarge { k, n });
    }
    let points: Vec<[f64; N_FEATURES]> =
        ds.samples().iter().map(|s| space.transform(&s.features)).collect();
    let labels = ds.labels();

    // Symmetric squared-distance matrix.
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let predicted = (0..n)
        .map(|i| {
            nearest.clear();
            let row = &dist[i * n..(i + 1) * n];
            for (j, &d) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                if nearest.len() == k {
                    let worst = nearest[k - 1];
                    // (d, j) sorts after the current worst: skip.
                    if d > worst.0 || (d == worst.0 && j > worst.1) {
                        continue;
                    }
                    nearest.pop();
                }
                let pos = nearest
                    .iter()
                    .position(|&(dd, jj)| d < dd || (d == dd && j < jj))
                    .unwrap_or(nearest.len());
                nearest.insert(pos, (d, j));
            }
            let bots = nearest.iter().filter(|&&(_, j)| labels[j].is_bot()).count();
            if 2 * bots > k {
                Label::Bot
            } else {
                Label::Human
            }
        })
        .collect();
    Ok(predicted)
}

fn entropy_bits(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Homogeneity `1 - H(C|K) / H(C)` of a clustering `predicted` with respect
/// to classes `truth` (entropies in bits). Defined as 1 when `H(C) = 0`.
pub fn homogeneity<C: Ord, K: Ord>(truth: &[C], predicted: &[K]) -> Result<f64, AnalysisError> {
    if truth.len() != predicted.len() {
        return Err(AnalysisError::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let total = truth.len() as f64;
    let mut class_counts: BTreeMap<&C, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(&K, &C), usize> = BTreeMap::new();
    let mut cluster_counts: BTreeMap<&K, usize> = BTreeMap::new();
    for (c, k) in truth.iter().zip(predicted) {
        *class_counts.entry(c).or_default() += 1;
        *joint.entry((k, c)).or_default() += 1;
        *cluster_counts.entry(k).or_default() += 1;
    }
    let h_c = entropy_bits(class_counts.values().copied(), total);
    if h_c == 0.0 {
        return Ok(1.0);
    }
    let h_c_given_k: f64 = joint
        .iter()
        .map(|((k, _), &n_ck)| {
            let n_k = cluster_counts[k] as f64;
            let n_ck = n_ck as f64;
            -(n_ck / total) * (n_ck / n_k).log2()
        })
        .sum();
    Ok((1.0 - h_c_given_k / h_c).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacterizeConfig {
    pub k: usize,
    pub n_per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub space: DistanceSpace,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            k: DEFAULT_K,
            n_per_class: DEFAULT_PER_CLASS,
            repetitions: DEFAULT_REPETITIONS,
            seed: 0,
            space: DistanceSpace::LogRescaled,
        }
    }
}

/// Distribution of homogeneity scores over repeated balanced subsamples.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneityResult {
    pub dataset: String,
    pub scores: Vec<f64>,
    pub k: usize,
    pub n_bots_sampled: usize,
    pub n_humans_sampled: usize,
}

impl HomogeneityResult {
    pub fn median(&self) -> f64 {
        let mut s = self.scores.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Repetition `r` samples with seed `derive_seed(config.seed, r)`.
pub fn characterize(
    ds: &LabeledDataset,
    config: &CharacterizeConfig,
) -> Result<HomogeneityResult, AnalysisError> {
    if !ds.has_both_classes() {
        return Err(AnalysisError::SingleClass(ds.name().to_owned()));
    }
    let n_bots = ds.n_bots().min(config.n_per_class);
    let n_humans = ds.n_humans().min(config.n_per_class);
    if config.k.is_multiple_of(2) {
        return Err(AnalysisError::EvenK(config.k));
    }
    if config.k >= n_bots + n_humans {
        return Err(AnalysisError::KTooLarge {
            k: config.k,
            n: n_bots + n_humans,
        });
    }
    let scores = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let sample = sample_balanced(ds, config.n_per_class, derive_seed(config.seed, rep as u64));
            let predicted = knn_assign(&sample, config.k, config.space)?;
            homogeneity(&sample.labels(), &predicted)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(HomogeneityResult {
        dataset: ds.name().to_owned(),
        scores,
        k: config.k,
        n_bots_sampled: n_bots,
        n_humans_sampled: n_humans,
    })
}

/// `auc[i][j]`: forest trained on dataset `i`, tested on dataset `j`. The
/// diagonal holds cross-validated AUC and is left out of both summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossDatasetMatrix {
    pub names: Vec<String>,
    pub auc: Vec<Vec<f64>>,
}

impl CrossDatasetMatrix {
    fn off_diagonal_mean(&self, pick: impl Fn(usize) -> f64) -> f64 {
        let n = self.names.len();
        (0..n).map(pick).sum::<f64>() / (n - 1) as f64
    }

    /// Per test dataset (column): mean AUC of models trained elsewhere.
    pub fn separability(&self) -> Vec<f64> {
        let n = self.names.len();
        (0..n)
            .map(|j| {
                self.off_diagonal_mean(|i| if i == j { 0.0 } else { self.auc[i][j] })
            })
            .collect()
    }

    /// Per training dataset (row): mean AUC on the other datasets.
    pub fn generalizability(&self) -> Vec<f64> {
        let n = self.names.len();
        (0..n)
            .map(|i| {
                self.off_diagonal_mean(|j| if i == j { 0.0 } else { self.auc[i][j] })
            })
            .collect()
    }

    /// Spearman correlation between separability and generalizability, with
    /// its two-sided p-value when defined.
    pub fn separability_generalizability_spearman(
        &self,
    ) -> Result<(f64, Option<f64>), MetricError> {
        let rho = spearman(&self.separability(), &self.generalizability())?;
        Ok((rho, spearman_p_value(rho, self.names.len())))
    }

    /// Dataset indices ordered by decreasing separability.
    pub fn order_by_separability(&self) -> Vec<usize> {
        let sep = self.separability();
        let mut order: Vec<usize> = (0..sep.len()).collect();
        order.sort_by(|&a, &b| sep[b].partial_cmp(&sep[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        order
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["train", "test", "auc"])?;
        for (i, row) in self.auc.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([self.names[i].as_str(), self.names[j].as_str(), &v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Row `i` trains with seed `derive_seed(config.seed, i)`; its diagonal cell
/// is the `cv_folds`-fold cross-validated AUC under the same seed.
pub fn cross_dataset_matrix(
    datasets: &[&LabeledDataset],
    config: &ForestConfig,
    cv_folds: usize,
) -> Result<CrossDatasetMatrix, AnalysisError> {
    if datasets.len() < 2 {
        return Err(AnalysisError::TooFewDatasets);
    }
    if let Some(ds) = datasets.iter().find(|d| !d.has_both_classes()) {
        return Err(AnalysisError::SingleClass(ds.name().to_owned()));
    }
    let auc = datasets
        .par_iter()
        .enumerate()
        .map(|(i, train)| -> Result<Vec<f64>, AnalysisError> {
            let row_config = ForestConfig {
                seed: derive_seed(config.seed, i as u64),
                ..*config
            };
            let forest = train_forest(train, &row_config)?;
            datasets
                .iter()
                .enumerate()
                .map(|(j, test)| {
                    if i == j {
                        Ok(cross_val_auc(train, cv_folds, &row_config)?)
                    } else {
                        Ok(auc_on(&forest, test)?)
                    }
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CrossDatasetMatrix {
        names: datasets.iter().map(|d| d.name().to_owned()).collect(),
        auc,
    })
}

pub fn write_pca_csv<W: Write>(
    writer: W,
    projections: &[(&str, &PcaProjection)],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "x", "y", "label"])?;
    for (dataset, pca) in projections {
        for (c, l) in pca.coords.iter().zip(&pca.labels) {
            w.write_record([dataset, c[0].to_string().as_str(), &c[1].to_string(), l.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_homogeneity_csv<W: Write>(
    writer: W,
    results: &[HomogeneityResult],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "rep", "score"])?;
    for r in results {
        for (rep, s) in r.scores.iter().enumerate() {
            w.write_record([r.dataset.as_str(), &rep.to_string(), &s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Sample;
    use Label::{Bot, Human};

    fn ds_from(points: &[(f64, f64, Label)]) -> LabeledDataset {
        LabeledDataset::new(
            "pts",
            points
                .iter()
                .enumerate()
                .map(|(i, &(a, b, l))| {
                    let mut v = [0.0; N_FEATURES];
                    v[0] = a;
                    v[1] = b;
                    Sample {
                        user_id: i.to_string(),
                        features: FeatureVector(v),
                        label: l,
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn log_rescale_examples() {
        let mut fv = FeatureVector([0.0; N_FEATURES]);
        fv.set(Feature::StatusesCount, 999.0);
        fv.set(Feature::Verified, 1.0);
        let r = log_rescale(&fv);
        assert_eq!(r[Feature::StatusesCount.index()], 3.0);
        assert_eq!(r[Feature::FollowersCount.index()], 0.0);
        assert_eq!(r[Feature::Verified.index()], 1.0);
    }

    #[test]
    fn homogeneity_examples() {
        assert_eq!(homogeneity(&[Bot, Bot, Human, Human], &[Bot, Bot, Human, Human]).unwrap(), 1.0);
        assert_eq!(homogeneity(&[Bot, Bot, Human, Human], &[0, 0, 0, 0]).unwrap(), 0.0);
        // H(C) = 1 bit; clusters {b,b,h} and {h}: H(C|K) = 3/4 * H(1/3).
        let h13 = -(1.0f64 / 3.0) * (1.0f64 / 3.0).log2() - (2.0f64 / 3.0) * (2.0f64 / 3.0).log2();
        let expected = 1.0 - 0.75 * h13;
        let got = homogeneity(&[Bot, Bot, Human, Human], &[Bot, Bot, Bot, Human]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.3113).abs() < 1e-4);
        // Single-class truth is perfectly homogeneous.
        assert_eq!(homogeneity(&[Bot, Bot], &[1, 2]).unwrap(), 1.0);
        assert!(matches!(homogeneity(&[Bot], &[1, 2]), Err(AnalysisError::LengthMismatch(1, 2))));
        assert!(matches!(homogeneity::<Label, u8>(&[], &[]), Err(AnalysisError::Empty)));
    }

    #[test]
    fn homogeneity_ignores_cluster_names() {
        let truth = [Bot, Human, Bot, Human, Human, Bot, Bot];
        let a = [0, 1, 0, 2, 1, 2, 0];
        let b = [5, 9, 5, 7, 9, 7, 5];
        assert_eq!(homogeneity(&truth, &a).unwrap(), homogeneity(&truth, &b).unwrap());
    }

    #[test]
    fn knn_on_separated_clusters() {
        let mut pts = Vec::new();
        for i in 0..20 {
            pts.push((i as f64 * 0.01, 0.0, Bot));
            pts.push((1000.0 + i as f64 * 0.01, 0.0, Human));
        }
        let ds = ds_from(&pts);
        let pred = knn_assign(&ds, 9, DistanceSpace::LogRescaled).unwrap();
        assert_eq!(pred, ds.labels());
        assert!(matches!(knn_assign(&ds, 4, DistanceSpace::Raw), Err(AnalysisError::EvenK(4))));
        assert!(matches!(
            knn_assign(&ds, 41, DistanceSpace::Raw),
            Err(AnalysisError::KTooLarge { .. })
        ));
    }

    #[test]
    fn knn_breaks_distance_ties_by_ordinal() {
        // Point 0 has equidistant neighbours; the lower ordinals win.
        let pts = [
            (0.0, 0.0, Human),
            (1.0, 0.0, Bot),
            (-1.0, 0.0, Bot),
            (0.0, 1.0, Human),
            (0.0, -1.0, Human),
            (50.0, 50.0, Human),
        ];
        let ds = ds_from(&pts);
        let pred = knn_assign(&ds, 3, DistanceSpace::Raw).unwrap();
        // Nearest three of point 0: ordinals 1, 2, 3 → two bots.
        assert_eq!(pred[0], Bot);
        assert_eq!(pred, knn_assign(&ds, 3, DistanceSpace::Raw).unwrap());
    }

    #[test]
    fn pca_on_rank_one_data() {
        // log10(1 + x) is linear in t for both columns.
        let pts: Vec<(f64, f64, Label)> = (0..30)
            .map(|t| {
                let t = t as f64 / 10.0;
                (10f64.powf(t) - 1.0, 10f64.powf(2.0 * t + 1.0) - 1.0, if t < 1.5 { Bot } else { Human })
            })
            .collect();
        let pca = pca_2d(&ds_from(&pts)).unwrap();
        assert!(pca.explained_variance_ratio[0] >= 0.999);
        let top = &pca.components[0];
        let pivot = (0..N_FEATURES).max_by(|&a, &b| top[a].abs().total_cmp(&top[b].abs())).unwrap();
        assert!(top[pivot] > 0.0);
    }

    #[test]
    fn pca_errors() {
        let two = ds_from(&[(1.0, 1.0, Bot), (2.0, 2.0, Human)]);
        assert!(matches!(pca_2d(&two), Err(AnalysisError::TooFewSamples { .. })));
        let flat = ds_from(&[(1.0, 1.0, Bot), (1.0, 1.0, Human), (1.0, 1.0, Bot)]);
        assert!(matches!(pca_2d(&flat), Err(AnalysisError::AllConstant(_))));
    }

    #[test]
    fn matrix_summaries_exclude_diagonal() {
        let m = CrossDatasetMatrix {
            names: vec!["a".into(), "b".into(), "c".into()],
            auc: vec![
                vec![0.99, 0.8, 0.6],
                vec![0.7, 0.98, 0.4],
                vec![0.9, 0.5, 0.97],
            ],
        };
        let sep = m.separability();
        let gen = m.generalizability();
        let expect_sep = [(0.7 + 0.9) / 2.0, (0.8 + 0.5) / 2.0, (0.6 + 0.4) / 2.0];
        let expect_gen = [(0.8 + 0.6) / 2.0, (0.7 + 0.4) / 2.0, (0.9 + 0.5) / 2.0];
        for i in 0..3 {
            assert!((sep[i] - expect_sep[i]).abs() < 1e-15);
            assert!((gen[i] - expect_gen[i]).abs() < 1e-15);
        }
        assert_eq!(m.order_by_separability(), vec![0, 1, 2]);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("train,test,auc\na,a,0.99\n"));
        assert_eq!(text.lines().count(), 10);
    }
}

//! Classification and correlation metrics.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::user_model::Label;

pub const DEFAULT_GRID_RESOLUTION: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUC needs at least one bot and one human (got {bots} bots, {humans} humans)")]
    SingleClass { bots: usize, humans: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("threshold grid resolution must lie in (0, 1], got {0}")]
    EmptyGrid(f64),
    #[error("no samples")]
    Empty,
    #[error("cannot split: class {label} has {count} samples, fewer than k = {k}")]
    ClassTooSmall { label: Label, count: usize, k: usize },
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation needs at least two observations")]
    TooFew,
    #[error("correlation is undefined for constant input")]
    Constant,
}

/// A classifier output paired with ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub score: f64,
    pub truth: Label,
}

impl ScoredSample {
    pub fn new(score: f64, truth: Label) -> Self {
        ScoredSample { score, truth }
    }
}

/// 1-based ranks with ties sharing the mean of the positions they occupy.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) hold equal values; ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// ROC AUC via the Mann-Whitney U statistic: the fraction of (bot, human)
/// pairs in which the bot scores higher, ties counting one half.
pub fn auc(samples: &[ScoredSample]) -> Result<f64, MetricError> {
    let bots = samples.iter().filter(|s| s.truth.is_bot()).count();
    let humans = samples.len() - bots;
    if bots == 0 || humans == 0 {
        return Err(MetricError::SingleClass { bots, humans });
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricError::NonFiniteScore(s.score));
    }
    let scores: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let ranks = average_ranks(&scores);
    let bot_rank_sum: f64 = ranks
        .iter()
        .zip(samples)
        .filter(|(_, s)| s.truth.is_bot())
        .map(|(r, _)| r)
        .sum();
    let (b, h) = (bots as f64, humans as f64);
    let u = bot_rank_sum - b * (b + 1.0) / 2.0;
    Ok(u / (b * h))
}

/// Precision, recall and F1 with bots as the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Predicts bot iff `score >= threshold`. Degenerate ratios are defined as 0.
pub fn precision_recall_f1(samples: &[ScoredSample], threshold: f64) -> PrecisionRecall {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for s in samples {
        match (s.score >= threshold, s.truth.is_bot()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrecisionRecall {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub metrics: PrecisionRecall,
}

/// Precision/recall/F1 over an ascending threshold grid on [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the F1 maximum (lowest threshold on ties).
    pub best: usize,
}

impl ThresholdSweep {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }

    pub fn best_threshold(&self) -> f64 {
        self.best_point().threshold
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "precision", "recall", "f1"])?;
        for p in &self.points {
            w.write_record([
                p.threshold.to_string(),
                p.metrics.precision.to_string(),
                p.metrics.recall.to_string(),
                p.metrics.f1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid `0, r, 2r, …, 1` for resolution `r` (rounded to a whole step count).
pub fn threshold_grid(resolution: f64) -> Result<Vec<f64>, MetricError> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(MetricError::EmptyGrid(resolution));
    }
    let steps = (1.0 / resolution).round().max(1.0) as usize;
    Ok((0..=steps).map(|i| i as f64 / steps as f64).collect())
}

pub fn threshold_sweep(
    samples: &[ScoredSample],
    resolution: f64,
) -> Result<ThresholdSweep, MetricError> {
    let bots = samples.iter().filter(|s| s.truth.is_bot()).count();
    let humans = samples.len() - bots;
    if bots == 0 || humans == 0 {
        return Err(MetricError::SingleClass { bots, humans });
    }
    let points: Vec<SweepPoint> = threshold_grid(resolution)?
        .into_iter()
        .map(|threshold| SweepPoint {
            threshold,
            metrics: precision_recall_f1(samples, threshold),
        })
        .collect();
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.metrics.f1 > points[best].metrics.f1 {
            best = i;
        }
    }
    Ok(ThresholdSweep { points, best })
}

/// One cross-validation split, as sorted indices into the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified k-fold partition: each class is shuffled with `seed` and dealt
/// round-robin into the folds, so per-fold class counts differ by at most one.
pub fn stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<Vec<Fold>, MetricError> {
    if k < 2 {
        return Err(MetricError::InvalidK(k));
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in [Label::Bot, Label::Human] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(MetricError::ClassTooSmall {
                label: class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for (pos, idx) in members.into_iter().enumerate() {
            fold_of[idx] = pos % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train) = (0..labels.len()).partition(|&i| fold_of[i] == f);
            Fold { train, test }
        })
        .collect())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFiniteScore(
            *x.iter().chain(y).find(|v| !v.is_finite()).unwrap(),
        ));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided p-value of a Spearman coefficient under the t approximation
/// with `n - 2` degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if rho.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Orders scores descending, for ranking "best first".
pub fn descending(a: &f64, b: &f64) -> Ordering {
    b.total_cmp(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Bot, Human};

    fn samples(scores: &[f64], labels: &[Label]) -> Vec<ScoredSample> {
        scores
            .iter()
            .zip(labels)
            .map(|(&s, &l)| ScoredSample::new(s, l))
            .collect()
    }

    fn brute_force_auc(s: &[ScoredSample]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for b in s.iter().filter(|s| s.truth.is_bot()) {
            for h in s.iter().filter(|s| !s.truth.is_bot()) {
                pairs += 1.0;
                total += match b.score.partial_cmp(&h.score).unwrap() {
                    Ordering::Greater => 1.0,
                    Ordering::Equal => 0.5,
                    Ordering::Less => 0.0,
                };
            }
        }
        total / pairs
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn auc_examples() {
        let perfect = samples(&[0.9, 0.8, 0.1, 0.2], &[Bot, Bot, Human, Human]);
        assert_eq!(auc(&perfect).unwrap(), 1.0);
        let mixed = samples(&[0.5, 0.5, 0.2], &[Bot, Human, Human]);
        assert_eq!(brute_force_auc(&mixed), 0.75);
        assert_eq!(auc(&mixed).unwrap(), 0.75);
        let flat = samples(&[0.3; 5], &[Bot, Human, Bot, Human, Human]);
        assert_eq!(auc(&flat).unwrap(), 0.5);
        assert_eq!(
            auc(&samples(&[0.1, 0.2], &[Bot, Bot])),
            Err(MetricError::SingleClass { bots: 2, humans: 0 })
        );
    }

    #[test]
    fn precision_recall_examples() {
        let s = samples(&[0.9, 0.8, 0.1, 0.2, 0.3], &[Bot, Bot, Human, Human, Human]);
        let perfect = precision_recall_f1(&s, 0.5);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let all_bot = precision_recall_f1(&s, 0.0);
        assert_eq!(all_bot.recall, 1.0);
        assert_eq!(all_bot.precision, 0.4);
        let none = precision_recall_f1(&s, 1.0);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sweep_matches_pointwise_and_breaks_ties_low() {
        let s = samples(&[0.9, 0.8, 0.1, 0.2, 0.3], &[Bot, Bot, Human, Human, Human]);
        let sweep = threshold_sweep(&s, 0.01).unwrap();
        assert_eq!(sweep.points.len(), 101);
        for p in &sweep.points {
            assert_eq!(p.metrics, precision_recall_f1(&s, p.threshold));
        }
        // F1 = 1 on the plateau (0.3, 0.8]; the lowest grid point there is 0.31.
        assert_eq!(sweep.best_threshold(), 0.31);
        assert_eq!(sweep.best_point().metrics.f1, 1.0);
        assert!(sweep.points.windows(2).all(|w| w[0].threshold < w[1].threshold));
        assert_eq!(threshold_sweep(&s, 0.0), Err(MetricError::EmptyGrid(0.0)));
    }

    #[test]
    fn kfold_exact_division() {
        let labels: Vec<Label> = (0..150).map(|i| if i < 100 { Bot } else { Human }).collect();
        let folds = stratified_kfold(&labels, 5, 7).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            let bots = f.test.iter().filter(|&&i| labels[i] == Bot).count();
            assert_eq!((bots, f.test.len() - bots), (20, 10));
            assert_eq!(f.train.len() + f.test.len(), 150);
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, stratified_kfold(&labels, 5, 7).unwrap());
        assert_ne!(folds, stratified_kfold(&labels, 5, 8).unwrap());
        assert!(matches!(
            stratified_kfold(&labels[..104], 5, 0),
            Err(MetricError::ClassTooSmall { label: Human, count: 4, k: 5 })
        ));
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // ranks (1,2,3) vs (3,1,2): d = (-2,1,1), 1 - 6*6/(3*8) = -0.5.
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::Constant));
        assert_eq!(spearman(&[1.0], &[1.0]), Err(MetricError::TooFew));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
    }

    #[test]
    fn p_value_sanity() {
        assert_eq!(spearman_p_value(1.0, 10), Some(0.0));
        let p = spearman_p_value(0.0, 10).unwrap();
        assert!((p - 1.0).abs() < 1e-12);
        let p = spearman_p_value(0.18, 11).unwrap();
        assert!(p > 0.5 && p < 0.7, "{p}");
    }

    fn labeled_scores() -> impl Strategy<Value = Vec<ScoredSample>> {
        prop::collection::vec((0u8..20, any::<bool>()), 2..200).prop_filter_map(
            "both classes",
            |v| {
                let s: Vec<ScoredSample> = v
                    .into_iter()
                    .map(|(q, b)| ScoredSample::new(q as f64 / 19.0, if b { Bot } else { Human }))
                    .collect();
                let bots = s.iter().filter(|x| x.truth.is_bot()).count();
                (bots > 0 && bots < s.len()).then_some(s)
            },
        )
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting(s in labeled_scores()) {
            prop_assert!((auc(&s).unwrap() - brute_force_auc(&s)).abs() < 1e-12);
        }

        #[test]
        fn auc_label_flip(s in labeled_scores()) {
            let flipped: Vec<_> = s.iter().map(|x| ScoredSample::new(x.score, x.truth.flipped())).collect();
            prop_assert!((auc(&flipped).unwrap() - (1.0 - auc(&s).unwrap())).abs() < 1e-12);
        }

        #[test]
        fn auc_monotone_invariant(s in labeled_scores()) {
            let t: Vec<_> = s.iter().map(|x| ScoredSample::new((3.0 * x.score).exp() - 7.0, x.truth)).collect();
            prop_assert_eq!(auc(&t).unwrap(), auc(&s).unwrap());
        }

        #[test]
        fn spearman_monotone_invariant(
            pairs in prop::collection::vec((-100i32..100, -100i32..100), 3..60)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            if let Ok(r) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| v.powi(3) + 1.0).collect();
                let ty: Vec<f64> = y.iter().map(|v| (v / 50.0).exp()).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

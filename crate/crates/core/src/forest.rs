//! Random forest of binary Gini decision trees.
//!
//! Each tree is grown on a bootstrap resample of the training data. At every
//! node a random subset of features (⌈√20⌉ = 5 by default) is searched for the
//! threshold that minimizes the weighted Gini impurity of the two children.
//! Candidate thresholds are midpoints between consecutive distinct values;
//! ties go to the lowest feature index, then the lowest threshold. Samples
//! with `x[feature] <= threshold` go left.
//!
//! The bot score of a sample is the mean over trees of the bot fraction of the
//! leaf it reaches.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES, FEATURE_ORDER_VERSION, N_FEATURES};
use crate::model_file::{self, VersionError};
use crate::user_model::Label;

const FORMAT: &str = "botstream-forest";
const VERSION: &str = "1.0";

pub const DEFAULT_N_TREES: usize = 100;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training data needs both classes (got {bots} bots, {humans} humans)")]
    SingleClass { bots: usize, humans: usize },
    #[error("sample {sample} has non-finite value in feature `{}`", FEATURE_NAMES[*feature])]
    NonFinite { sample: usize, feature: usize },
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("a forest needs at least one tree")]
    NoTrees,
    #[error("invalid hyperparameter: {0}")]
    InvalidParams(String),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Version(#[from] VersionError),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// ⌈√n_features⌉
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    fn resolve(self) -> usize {
        match self {
            MaxFeatures::Sqrt => (N_FEATURES as f64).sqrt().ceil() as usize,
            MaxFeatures::All => N_FEATURES,
            MaxFeatures::Fixed(n) => n.clamp(1, N_FEATURES),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    None,
    /// Weights each class by `n / (2 * n_class)`.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
    pub class_weight: ClassWeight,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Sqrt,
            class_weight: ClassWeight::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
    pub params: TreeParams,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: DEFAULT_N_TREES,
            seed: 0,
            params: TreeParams::default(),
        }
    }
}

impl ForestConfig {
    pub fn with_seed(seed: u64) -> Self {
        ForestConfig {
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted Gini decrease achieved by this split.
        impurity_decrease: f64,
    },
    Leaf {
        bot_fraction: f64,
        n_samples: usize,
    },
}

/// A tree as a flat node array; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &FeatureVector) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => idx = if x.0[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { bot_fraction, .. } => return *bot_fraction,
            }
        }
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.nodes.len()];
        let mut max = 0;
        for (i, node) in self.nodes.iter().enumerate() {
            max = max.max(depth[i]);
            if let Node::Split { left, right, .. } = node {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
            }
        }
        max
    }

    fn validate(&self) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= N_FEATURES {
                        return Err(format!("node {i}: feature index {feature} out of range"));
                    }
                    if threshold.is_nan() {
                        return Err(format!("node {i}: NaN threshold"));
                    }
                    // Children always follow their parent, which rules out cycles.
                    for child in [left, right] {
                        if *child <= i || *child >= self.nodes.len() {
                            return Err(format!("node {i}: bad child index {child}"));
                        }
                    }
                }
                Node::Leaf { bot_fraction, .. } => {
                    if !(0.0..=1.0).contains(bot_fraction) {
                        return Err(format!("node {i}: leaf fraction {bot_fraction}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Names and class counts of the data a forest was trained on.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub datasets: Vec<String>,
    pub n_bots: usize,
    pub n_humans: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    config: ForestConfig,
    meta: TrainingMeta,
}

/// Column-major copy of the training matrix.
struct Columns {
    cols: Vec<Vec<f64>>,
    labels: Vec<Label>,
}

impl Forest {
    pub fn train(
        features: &[FeatureVector],
        labels: &[Label],
        config: &ForestConfig,
        meta: TrainingMeta,
    ) -> Result<Forest, ForestError> {
        if features.len() != labels.len() {
            return Err(ForestError::LengthMismatch {
                features: features.len(),
                labels: labels.len(),
            });
        }
        if config.n_trees == 0 {
            return Err(ForestError::NoTrees);
        }
        if config.params.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams("min_samples_leaf must be ≥ 1".into()));
        }
        if config.params.max_depth == Some(0) {
            return Err(ForestError::InvalidParams("max_depth must be ≥ 1".into()));
        }
        let bots = labels.iter().filter(|l| l.is_bot()).count();
        let humans = labels.len() - bots;
        if bots == 0 || humans == 0 {
            return Err(ForestError::SingleClass { bots, humans });
        }
        for (sample, fv) in features.iter().enumerate() {
            if let Some(feature) = fv.0.iter().position(|v| !v.is_finite()) {
                return Err(ForestError::NonFinite { sample, feature });
            }
        }

        let data = Columns {
            cols: (0..N_FEATURES)
                .map(|f| features.iter().map(|fv| fv.0[f]).collect())
                .collect(),
            labels: labels.to_vec(),
        };
        let class_weights = match config.params.class_weight {
            ClassWeight::None => [1.0, 1.0],
            ClassWeight::Balanced => {
                let n = labels.len() as f64;
                [n / (2.0 * humans as f64), n / (2.0 * bots as f64)]
            }
        };

        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                TreeBuilder::new(&data, &config.params, class_weights, &mut rng).build(&mut rng)
            })
            .collect();

        Ok(Forest {
            trees,
            config: *config,
            meta,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Mean leaf bot fraction across trees, in [0, 1].
    pub fn score(&self, x: &FeatureVector) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (sum / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn tree_scores(&self, x: &FeatureVector) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }

    /// `Bot` iff the score reaches `threshold`.
    pub fn classify(&self, x: &FeatureVector, threshold: f64) -> Result<Label, ForestError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ForestError::InvalidThreshold(threshold));
        }
        Ok(label_at(self.score(x), threshold))
    }

    /// Mean decrease in Gini impurity per feature, normalized to sum to 1.
    /// Each tree's decreases are normalized first, as in the usual ensemble
    /// definition; trees without any split contribute nothing. A forest with
    /// no splits at all returns the zero vector.
    pub fn feature_importance(&self) -> [f64; N_FEATURES] {
        let mut total = [0.0; N_FEATURES];
        for tree in &self.trees {
            let mut per_tree = [0.0; N_FEATURES];
            for node in &tree.nodes {
                if let Node::Split {
                    feature,
                    impurity_decrease,
                    ..
                } = node
                {
                    per_tree[*feature] += impurity_decrease.max(0.0);
                }
            }
            let sum: f64 = per_tree.iter().sum();
            if sum > 0.0 {
                for (t, p) in total.iter_mut().zip(per_tree) {
                    *t += p / sum;
                }
            }
        }
        let sum: f64 = total.iter().sum();
        if sum > 0.0 {
            for t in &mut total {
                *t /= sum;
            }
        }
        total
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), ForestError> {
        let file = ForestFileRef {
            format: FORMAT,
            version: VERSION,
            feature_order_version: FEATURE_ORDER_VERSION,
            feature_order: &FEATURE_NAMES,
            n_trees: self.trees.len(),
            seed: self.config.seed,
            params: &self.config.params,
            training_meta: &self.meta,
            trees: &self.trees,
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Forest, ForestError> {
        let file: ForestFile = serde_json::from_reader(reader)?;
        model_file::check(FORMAT, VERSION, &file.format, &file.version)?;
        if file.feature_order_version != FEATURE_ORDER_VERSION
            || file.feature_order.len() != N_FEATURES
            || file.feature_order.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
        {
            return Err(ForestError::Malformed(
                "feature order differs from this build's canonical order".into(),
            ));
        }
        if file.trees.is_empty() {
            return Err(ForestError::NoTrees);
        }
        if file.trees.len() != file.n_trees {
            return Err(ForestError::Malformed(format!(
                "n_trees = {} but {} trees present",
                file.n_trees,
                file.trees.len()
            )));
        }
        for (i, tree) in file.trees.iter().enumerate() {
            tree.validate()
                .map_err(|e| ForestError::Malformed(format!("tree {i}: {e}")))?;
        }
        Ok(Forest {
            config: ForestConfig {
                n_trees: file.n_trees,
                seed: file.seed,
                params: file.params,
            },
            trees: file.trees,
            meta: file.training_meta,
        })
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

pub fn label_at(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Bot
    } else {
        Label::Human
    }
}

#[derive(Serialize)]
struct ForestFileRef<'a> {
    format: &'a str,
    version: &'a str,
    feature_order_version: u32,
    feature_order: &'a [&'a str],
    n_trees: usize,
    seed: u64,
    params: &'a TreeParams,
    training_meta: &'a TrainingMeta,
    trees: &'a [Tree],
}

#[derive(Deserialize)]
struct ForestFile {
    format: String,
    version: String,
    feature_order_version: u32,
    feature_order: Vec<String>,
    n_trees: usize,
    seed: u64,
    params: TreeParams,
    training_meta: TrainingMeta,
    trees: Vec<Tree>,
}

/// Sum of `w * gini` for a node with total weight `w` and bot weight `b`,
/// up to the constant factor 2.
fn weighted_gini(w: f64, b: f64) -> f64 {
    if w <= 0.0 {
        0.0
    } else {
        b * (w - b) / w
    }
}

#[derive(Clone, Copy)]
struct SplitCandidate {
    feature: usize,
    threshold: f64,
    /// Number of rows (in sorted order) going left.
    n_left_rows: usize,
    cost: f64,
}

struct TreeBuilder<'a> {
    data: &'a Columns,
    params: &'a TreeParams,
    mtry: usize,
    /// Distinct bootstrap rows, i.e. indices into `data`.
    rows: Vec<u32>,
    /// Bootstrap multiplicity of each entry of `rows`.
    draws: Vec<u32>,
    /// Class-weighted multiplicity of each entry of `rows`.
    weight: Vec<f64>,
    is_bot: Vec<bool>,
    /// Per feature: positions into `rows`, sorted by feature value. Every
    /// node owns the same `lo..hi` range in all of them.
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn new(
        data: &'a Columns,
        params: &'a TreeParams,
        class_weights: [f64; 2],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let n = data.labels.len();
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.random_range(0..n)] += 1;
        }
        let rows: Vec<u32> = (0..n as u32).filter(|&i| counts[i as usize] > 0).collect();
        let draws: Vec<u32> = rows.iter().map(|&i| counts[i as usize]).collect();
        let is_bot: Vec<bool> = rows.iter().map(|&i| data.labels[i as usize].is_bot()).collect();
        let weight = draws
            .iter()
            .zip(&is_bot)
            .map(|(&d, &b)| d as f64 * class_weights[b as usize])
            .collect();
        let sorted = (0..N_FEATURES)
            .map(|f| {
                let col = &data.cols[f];
                let mut order: Vec<u32> = (0..rows.len() as u32).collect();
                order.sort_by(|&a, &b| {
                    col[rows[a as usize] as usize]
                        .total_cmp(&col[rows[b as usize] as usize])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        let m = rows.len();
        TreeBuilder {
            data,
            params,
            mtry: params.max_features.resolve(),
            rows,
            draws,
            weight,
            is_bot,
            sorted,
            goes_left: vec![false; m],
            scratch: Vec::with_capacity(m),
            nodes: Vec::new(),
        }
    }

    fn value(&self, feature: usize, pos: u32) -> f64 {
        self.data.cols[feature][self.rows[pos as usize] as usize]
    }

    fn build(mut self, rng: &mut ChaCha8Rng) -> Tree {
        let mut stack = vec![(0usize, 0usize, self.rows.len(), 0usize)];
        self.nodes.push(Node::Leaf {
            bot_fraction: 0.0,
            n_samples: 0,
        });
        let mut feature_order: Vec<usize> = (0..N_FEATURES).collect();

        while let Some((id, lo, hi, depth)) = stack.pop() {
            let (mut w, mut b, mut n) = (0.0, 0.0, 0usize);
            for &pos in &self.sorted[0][lo..hi] {
                let p = pos as usize;
                w += self.weight[p];
                n += self.draws[p] as usize;
                if self.is_bot[p] {
                    b += self.weight[p];
                }
            }
            let leaf = Node::Leaf {
                bot_fraction: if w > 0.0 { (b / w).clamp(0.0, 1.0) } else { 0.0 },
                n_samples: n,
            };
            let pure = b <= 0.0 || b >= w;
            let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
            if pure || depth_capped || n < 2 * self.params.min_samples_leaf {
                self.nodes[id] = leaf;
                continue;
            }

            feature_order.shuffle(rng);
            let mut best: Option<SplitCandidate> = None;
            for chunk in feature_order.chunks(self.mtry) {
                let mut candidates = chunk.to_vec();
                candidates.sort_unstable();
                for f in candidates {
                    if let Some(c) = self.best_split(f, lo, hi, w, b, n) {
                        let better = match best {
                            None => true,
                            Some(cur) => {
                                c.cost < cur.cost
                                    || (c.cost == cur.cost
                                        && (c.feature, c.threshold) < (cur.feature, cur.threshold))
                            }
                        };
                        if better {
                            best = Some(c);
                        }
                    }
                }
                if best.is_some() {
                    break;
                }
            }

            let Some(split) = best else {
                self.nodes[id] = leaf;
                continue;
            };

            let mid = lo + split.n_left_rows;
            self.partition(split.feature, lo, mid, hi);
            let left = self.nodes.len();
            let right = left + 1;
            self.nodes.push(leaf.clone());
            self.nodes.push(leaf);
            self.nodes[id] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
                impurity_decrease: 2.0 * (weighted_gini(w, b) - split.cost),
            };
            stack.push((right, mid, hi, depth + 1));
            stack.push((left, lo, mid, depth + 1));
        }
        Tree { nodes: self.nodes }
    }

    /// Best threshold on one feature, or `None` if the feature is constant
    /// on the node or no split satisfies `min_samples_leaf`.
    fn best_split(
        &self,
        feature: usize,
        lo: usize,
        hi: usize,
        w: f64,
        b: f64,
        n: usize,
    ) -> Option<SplitCandidate> {
        let order = &self.sorted[feature][lo..hi];
        let min_leaf = self.params.min_samples_leaf;
        let (mut wl, mut bl, mut nl) = (0.0, 0.0, 0usize);
        let mut best: Option<SplitCandidate> = None;
        for i in 0..order.len() - 1 {
            let p = order[i] as usize;
            wl += self.weight[p];
            nl += self.draws[p] as usize;
            if self.is_bot[p] {
                bl += self.weight[p];
            }
            let here = self.value(feature, order[i]);
            let next = self.value(feature, order[i + 1]);
            if here == next || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let cost = weighted_gini(wl, bl) + weighted_gini(w - wl, b - bl);
            if best.is_none_or(|cur| cost < cur.cost) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(here, next),
                    n_left_rows: i + 1,
                    cost,
                });
            }
        }
        best
    }

    /// Stable partition of every feature's `lo..hi` range so that the rows of
    /// the left child occupy `lo..mid`.
    fn partition(&mut self, feature: usize, lo: usize, mid: usize, hi: usize) {
        for (i, &pos) in self.sorted[feature][lo..hi].iter().enumerate() {
            self.goes_left[pos as usize] = lo + i < mid;
        }
        for f in 0..N_FEATURES {
            if f == feature {
                continue;
            }
            let slice = &mut self.sorted[f][lo..hi];
            self.scratch.clear();
            let mut write = 0;
            for i in 0..slice.len() {
                let pos = slice[i];
                if self.goes_left[pos as usize] {
                    slice[write] = pos;
                    write += 1;
                } else {
                    self.scratch.push(pos);
                }
            }
            slice[write..].copy_from_slice(&self.scratch);
            debug_assert_eq!(lo + write, mid);
        }
    }
}

/// A threshold `t` with `lo <= t < hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let mid = if span.is_finite() { lo + span / 2.0 } else { lo / 2.0 + hi / 2.0 };
    if mid >= hi || !mid.is_finite() {
        lo
    } else {
        mid.max(lo)
    }
}

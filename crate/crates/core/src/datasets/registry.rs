use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_dataset, read_rows, DatasetError, LabeledDataset, LoadOptions, Sample};
use crate::features::{Feature, FeatureVector};
use crate::screen_name::BigramModel;
use crate::user_model::{parse_timestamp, Label};

/// What a registered dataset may be used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    CandidateTraining,
    Holdout,
    /// Unlabeled accounts with external reference scores.
    Reference,
    /// Loadable and analyzable, never trained on.
    Excluded,
}

impl Role {
    /// `cresci-stock` defaults to excluded; everything else to candidate
    /// training.
    pub fn default_for(name: &str) -> Role {
        if name == "cresci-stock" {
            Role::Excluded
        } else {
            Role::CandidateTraining
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub role: Option<Role>,
    /// Probe time for bare user objects without a `probe_time` field.
    #[serde(default)]
    pub probe_time: Option<String>,
    /// Reference-score CSV (`user_id,score`); reference datasets only.
    #[serde(default)]
    pub scores: Option<PathBuf>,
}

/// Selects part `index` of a seeded disjoint `of`-way split of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub index: usize,
    pub of: usize,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeInput {
    pub dataset: String,
    /// Fraction of the (partitioned) input to sample without replacement.
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default)]
    pub partition: Option<Partition>,
}

impl MergeInput {
    pub fn whole(dataset: &str) -> Self {
        MergeInput {
            dataset: dataset.to_owned(),
            fraction: 1.0,
            partition: None,
        }
    }
}

/// Forces one feature to a fixed value for matching samples of a merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureOverride {
    /// Restrict to samples from this input; all inputs when absent.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub label: Option<Label>,
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRule {
    pub output: String,
    #[serde(default)]
    pub role: Option<Role>,
    pub inputs: Vec<MergeInput>,
    #[serde(default)]
    pub overrides: Vec<FeatureOverride>,
    #[serde(default)]
    pub seed: u64,
}

/// The merges used for dataset characterization: two single-class pairs are
/// combined, and `verified` humans are split in half to balance the two
/// bot-only datasets, with their `verified` flag forced to 0.
pub fn standard_merge_rules() -> Vec<MergeRule> {
    let verified_off = || FeatureOverride {
        dataset: Some("verified".into()),
        label: Some(Label::Human),
        feature: Feature::Verified.name().into(),
        value: 0.0,
    };
    let verified_half = |index| MergeInput {
        dataset: "verified".into(),
        fraction: 1.0,
        partition: Some(Partition { index, of: 2 }),
    };
    vec![
        MergeRule {
            output: "pron-celebrity".into(),
            role: Some(Role::Excluded),
            inputs: vec![MergeInput::whole("pronbots"), MergeInput::whole("celebrity")],
            overrides: vec![],
            seed: 0,
        },
        MergeRule {
            output: "political-feedback".into(),
            role: Some(Role::Excluded),
            inputs: vec![
                MergeInput::whole("botometer-feedback"),
                MergeInput::whole("political-bots"),
            ],
            overrides: vec![],
            seed: 0,
        },
        MergeRule {
            output: "botwiki-verified".into(),
            role: Some(Role::Holdout),
            inputs: vec![MergeInput::whole("botwiki"), verified_half(0)],
            overrides: vec![verified_off()],
            seed: 0,
        },
        MergeRule {
            output: "vendor-verified".into(),
            role: Some(Role::Excluded),
            inputs: vec![MergeInput::whole("vendor-purchased"), verified_half(1)],
            overrides: vec![verified_off()],
            seed: 0,
        },
    ]
}

/// Declarative registry file (TOML). Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryManifest {
    /// Seed of the disjoint splits used by merge-rule partitions.
    #[serde(default)]
    pub split_seed: u64,
    /// Bigram model for datasets stored as raw NDJSON.
    #[serde(default)]
    pub bigrams: Option<PathBuf>,
    /// Append the standard characterization merges after `merges`.
    #[serde(default)]
    pub standard_merges: bool,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default)]
    pub merges: Vec<MergeRule>,
}

impl RegistryManifest {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn all_merges(&self) -> Vec<MergeRule> {
        let mut rules = self.merges.clone();
        if self.standard_merges {
            rules.extend(standard_merge_rules());
        }
        rules
    }
}

/// Unlabeled accounts paired with scores from an external reference classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub name: String,
    pub user_ids: Vec<String>,
    pub features: Vec<FeatureVector>,
    pub scores: Vec<f64>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.user_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.user_ids.is_empty()
    }

    /// Joins account features with a `user_id,score` CSV; accounts without a
    /// score are dropped.
    pub fn load(
        name: &str,
        features_path: &Path,
        scores_path: &Path,
        opts: &LoadOptions<'_>,
    ) -> Result<ReferenceSet, DatasetError> {
        let (rows, rejected) = read_rows(features_path, opts)?;
        for r in &rejected {
            log::warn!("{name}: rejected {r}");
        }
        let scores = read_scores(scores_path)?;
        let mut set = ReferenceSet {
            name: name.to_owned(),
            user_ids: Vec::new(),
            features: Vec::new(),
            scores: Vec::new(),
        };
        for row in rows {
            if let Some(&score) = scores.get(&row.user_id) {
                set.user_ids.push(row.user_id);
                set.features.push(row.features);
                set.scores.push(score);
            }
        }
        if set.is_empty() {
            return Err(DatasetError::Empty(name.to_owned()));
        }
        Ok(set)
    }
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>, DatasetError> {
    let manifest_err = |message: String| DatasetError::Manifest {
        path: path.to_owned(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| manifest_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| manifest_err(e.to_string()))?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "user_id")
        .ok_or_else(|| manifest_err("score file lacks a `user_id` column".into()))?;
    let score_col = headers
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| manifest_err("score file lacks a `score` column".into()))?;
    let mut scores = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| manifest_err(e.to_string()))?;
        let parsed = record
            .get(score_col)
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite());
        match (record.get(id_col), parsed) {
            (Some(id), Some(score)) => {
                scores.insert(id.to_owned(), score);
            }
            _ => log::warn!("{}: skipping malformed score row {}", path.display(), i + 2),
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub dataset: LabeledDataset,
    pub role: Role,
}

/// Name-unique collection of datasets in manifest order. Read-only once built;
/// merges produce a new registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    entries: IndexMap<String, RegistryEntry>,
    reference: Option<ReferenceSet>,
    split_seed: u64,
}

fn stable_hash(s: &str) -> u64 {
    // FNV-1a, stable across builds and platforms.
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl Registry {
    pub fn new(split_seed: u64) -> Self {
        Registry {
            split_seed,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, dataset: LabeledDataset, role: Role) -> Result<(), DatasetError> {
        let name = dataset.name().to_owned();
        if self.entries.contains_key(&name) {
            return Err(DatasetError::Duplicate(name));
        }
        self.entries.insert(name, RegistryEntry { dataset, role });
        Ok(())
    }

    pub fn set_reference(&mut self, reference: ReferenceSet) {
        self.reference = Some(reference);
    }

    pub fn reference(&self) -> Option<&ReferenceSet> {
        self.reference.as_ref()
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed
    }

    pub fn get(&self, name: &str) -> Result<&LabeledDataset, DatasetError> {
        self.entries
            .get(name)
            .map(|e| &e.dataset)
            .ok_or_else(|| DatasetError::UnknownDataset(name.to_owned()))
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.entries.get(name).map(|e| e.role)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn with_role(&self, role: Role) -> Vec<&LabeledDataset> {
        self.entries
            .values()
            .filter(|e| e.role == role)
            .map(|e| &e.dataset)
            .collect()
    }

    /// Loads every dataset listed in a manifest, then applies its merges.
    /// Returns the registry and the per-record rejections encountered.
    pub fn load(manifest_path: &Path) -> Result<(Registry, Vec<String>), DatasetError> {
        let text = fs::read_to_string(manifest_path).map_err(|source| DatasetError::Io {
            path: manifest_path.to_owned(),
            source,
        })?;
        let manifest =
            RegistryManifest::from_toml(&text).map_err(|message| DatasetError::Manifest {
                path: manifest_path.to_owned(),
                message,
            })?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Registry::from_manifest(&manifest, base)
    }

    pub fn from_manifest(
        manifest: &RegistryManifest,
        base: &Path,
    ) -> Result<(Registry, Vec<String>), DatasetError> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_owned() } else { base.join(p) };
        let manifest_err = |message: String| DatasetError::Manifest {
            path: base.to_owned(),
            message,
        };

        let bigrams = match &manifest.bigrams {
            Some(p) => {
                let path = resolve(p);
                let file = fs::File::open(&path).map_err(|source| DatasetError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(
                    BigramModel::read_json(std::io::BufReader::new(file))
                        .map_err(|e| manifest_err(format!("{}: {e}", path.display())))?,
                )
            }
            None => None,
        };

        let mut registry = Registry::new(manifest.split_seed);
        let mut rejected = Vec::new();
        for entry in &manifest.datasets {
            let default_probe = entry
                .probe_time
                .as_deref()
                .map(parse_timestamp)
                .transpose()
                .map_err(|e| manifest_err(format!("dataset `{}`: {e}", entry.name)))?;
            let opts = LoadOptions {
                bigrams: bigrams.as_ref(),
                default_probe,
            };
            let role = entry.role.unwrap_or_else(|| Role::default_for(&entry.name));
            let path = resolve(&entry.path);
            if role == Role::Reference {
                let scores = entry.scores.as_ref().ok_or_else(|| {
                    manifest_err(format!(
                        "reference dataset `{}` needs a `scores` file",
                        entry.name
                    ))
                })?;
                if registry.reference.is_some() {
                    return Err(manifest_err("only one reference dataset is supported".into()));
                }
                registry.reference =
                    Some(ReferenceSet::load(&entry.name, &path, &resolve(scores), &opts)?);
                continue;
            }
            let report = load_dataset(&entry.name, &path, &opts)?;
            rejected.extend(
                report
                    .rejected
                    .into_iter()
                    .map(|r| format!("{}: {r}", entry.name)),
            );
            registry.insert(report.dataset, role)?;
        }
        let merged = registry.apply_merge_rules(&manifest.all_merges())?;
        Ok((merged, rejected))
    }

    /// Indices of part `index` of the seeded `of`-way split of `name`. The
    /// split depends only on the registry seed and the dataset, so different
    /// parts of the same dataset are always disjoint.
    fn partition_indices(&self, name: &str, len: usize, part: Partition) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.split_seed);
        rng.set_stream(stable_hash(name));
        order.shuffle(&mut rng);
        let lo = part.index * len / part.of;
        let hi = (part.index + 1) * len / part.of;
        let mut chosen = order[lo..hi].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn build_merge(&self, rule: &MergeRule) -> Result<LabeledDataset, DatasetError> {
        let err = |message: String| DatasetError::Rule {
            rule: rule.output.clone(),
            message,
        };
        if rule.inputs.is_empty() {
            return Err(err("no inputs".into()));
        }
        let overrides = rule
            .overrides
            .iter()
            .map(|o| {
                Feature::from_name(&o.feature)
                    .map(|f| (o, f))
                    .ok_or_else(|| err(format!("unknown feature `{}`", o.feature)))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut samples: Vec<Sample> = Vec::new();
        for (pos, input) in rule.inputs.iter().enumerate() {
            let ds = self
                .get(&input.dataset)
                .map_err(|_| err(format!("input dataset `{}` is not loaded", input.dataset)))?;
            let mut indices: Vec<usize> = match input.partition {
                None => (0..ds.len()).collect(),
                Some(p) if p.of == 0 || p.index >= p.of => {
                    return Err(err(format!("invalid partition {}/{}", p.index, p.of)))
                }
                Some(p) => self.partition_indices(&input.dataset, ds.len(), p),
            };
            if !(input.fraction > 0.0 && input.fraction <= 1.0) {
                return Err(err(format!(
                    "fraction for `{}` must lie in (0, 1], got {}",
                    input.dataset, input.fraction
                )));
            }
            if input.fraction < 1.0 {
                let keep = (input.fraction * indices.len() as f64).round() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(rule.seed);
                rng.set_stream(pos as u64);
                let mut picked: Vec<usize> =
                    rand::seq::index::sample(&mut rng, indices.len(), keep)
                        .into_iter()
                        .map(|j| indices[j])
                        .collect();
                picked.sort_unstable();
                indices = picked;
            }
            for i in indices {
                let mut sample = ds.samples()[i].clone();
                for (o, feature) in &overrides {
                    let dataset_ok = o.dataset.as_deref().is_none_or(|d| d == input.dataset);
                    let label_ok = o.label.is_none_or(|l| l == sample.label);
                    if dataset_ok && label_ok {
                        sample.features.set(*feature, o.value);
                    }
                }
                samples.push(sample);
            }
        }
        Ok(LabeledDataset::new(rule.output.clone(), samples))
    }

    /// Returns a new registry with each rule's output added, in order; later
    /// rules may consume earlier outputs. Inputs are never modified.
    pub fn apply_merge_rules(&self, rules: &[MergeRule]) -> Result<Registry, DatasetError> {
        let mut out = self.clone();
        for rule in rules {
            let ds = out.build_merge(rule)?;
            out.insert(ds, rule.role.unwrap_or(Role::Excluded))?;
        }
        Ok(out)
    }
}

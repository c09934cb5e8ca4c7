use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use botstream_core::analysis::{characterize, cross_dataset_matrix, AnalysisError, CharacterizeConfig};
use botstream_core::datasets::synthetic::random_user_records;
use botstream_core::datasets::{
    generate_synthetic, LabeledDataset, Registry, Role, Sample, SyntheticSpec,
};
use botstream_core::features::FeatureCsvWriter;
use botstream_core::forest::ForestConfig;
use botstream_core::selection::{
    evaluate_candidate, run_selection, train_candidate, Candidate, EvaluationSetup,
    SelectionConfig,
};
use botstream_core::{extract_features, BigramModel, Feature, Label};

fn small_forest(seed: u64) -> ForestConfig {
    ForestConfig {
        n_trees: 10,
        ..ForestConfig::with_seed(seed)
    }
}

fn write_csv(path: &Path, ds: &LabeledDataset, with_label: bool) {
    let mut w = FeatureCsvWriter::new(File::create(path).unwrap(), with_label).unwrap();
    for s in ds.samples() {
        w.write(&s.user_id, &s.features, Some(s.label)).unwrap();
    }
    w.into_inner().unwrap().flush().unwrap();
}

fn only(ds: &LabeledDataset, name: &str, label: Label) -> LabeledDataset {
    LabeledDataset::new(
        name,
        ds.samples()
            .iter()
            .filter(|s| s.label == label)
            .map(|s| Sample {
                user_id: format!("{name}-{}", s.user_id),
                ..s.clone()
            })
            .collect(),
    )
}

fn synthetic(name: &str, n: usize, seed: u64) -> LabeledDataset {
    generate_synthetic(&SyntheticSpec::separable(name, n), seed).unwrap()
}

/// Candidates `a` (both classes), `b` (bots), `c` (humans); two holdouts; a
/// reference set whose scores track the true class.
fn write_registry(dir: &Path) {
    let a = synthetic("a", 60, 1);
    write_csv(&dir.join("a.csv"), &a, true);
    write_csv(&dir.join("b.csv"), &only(&synthetic("b", 60, 2), "b", Label::Bot), true);
    write_csv(&dir.join("c.csv"), &only(&synthetic("c", 60, 3), "c", Label::Human), true);
    write_csv(&dir.join("h1.csv"), &synthetic("h1", 40, 4), true);
    write_csv(&dir.join("h2.csv"), &synthetic("h2", 40, 5), true);
    let reference = synthetic("ref", 40, 6);
    write_csv(&dir.join("ref.csv"), &reference, false);
    let mut scores = String::from("user_id,score\n");
    for (i, s) in reference.samples().iter().enumerate() {
        let base = if s.label.is_bot() { 0.7 } else { 0.2 };
        scores.push_str(&format!("{},{}\n", s.user_id, base + i as f64 * 1e-3));
    }
    fs::write(dir.join("ref_scores.csv"), scores).unwrap();
    fs::write(
        dir.join("registry.toml"),
        r#"
split_seed = 9

[[datasets]]
name = "a"
path = "a.csv"

[[datasets]]
name = "b"
path = "b.csv"

[[datasets]]
name = "c"
path = "c.csv"

[[datasets]]
name = "h1"
path = "h1.csv"
role = "holdout"

[[datasets]]
name = "h2"
path = "h2.csv"
role = "holdout"

[[datasets]]
name = "ref"
path = "ref.csv"
role = "reference"
scores = "ref_scores.csv"
"#,
    )
    .unwrap();
}

#[test]
fn selection_over_a_registry() {
    let dir = tempfile::tempdir().unwrap();
    write_registry(dir.path());
    let (registry, rejected) = Registry::load(&dir.path().join("registry.toml")).unwrap();
    assert!(rejected.is_empty());
    assert_eq!(registry.with_role(Role::CandidateTraining).len(), 3);
    assert_eq!(registry.reference().unwrap().len(), 80);

    let config = SelectionConfig {
        forest: small_forest(4),
        cv_folds: 3,
        max_resident: 2,
    };
    let outcome = run_selection(&registry, &config).unwrap();
    let report = &outcome.report;
    // Of the 7 subsets only {b} and {c} lack a class.
    assert_eq!(report.rows.len(), 5);
    let masks: Vec<u64> = report.rows.iter().map(|r| r.candidate.mask).collect();
    assert_eq!(masks, vec![1, 3, 5, 6, 7]);
    assert_eq!(report.tests, vec!["h1", "h2", "cv", "reference"]);

    let best = report.winner().rank_product;
    assert!(report.rows.iter().all(|r| r.rank_product >= best));
    for r in &report.rows {
        assert!(r.scores[..3].iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    let again = run_selection(&registry, &SelectionConfig { max_resident: 5, ..config.clone() }).unwrap();
    assert_eq!(again.report, outcome.report);

    let training = registry.with_role(Role::CandidateTraining);
    let retrained = train_candidate(&report.winner().candidate, &training, &config.forest).unwrap();
    assert_eq!(retrained, outcome.winner_forest);
}

#[test]
fn candidate_on_separable_data_cross_validates_well() {
    let train = synthetic("train", 200, 10);
    let holdout = synthetic("holdout", 100, 11);
    let reference_ds = synthetic("ref", 50, 12);
    let reference = botstream_core::datasets::ReferenceSet {
        name: "ref".into(),
        user_ids: reference_ds.samples().iter().map(|s| s.user_id.clone()).collect(),
        features: reference_ds.features(),
        scores: reference_ds.labels().iter().map(|l| l.is_bot() as u8 as f64).collect(),
    };
    let config = small_forest(1);
    let holdouts = [&holdout];
    let setup = EvaluationSetup {
        holdouts: &holdouts,
        reference: &reference,
        forest: &config,
        cv_folds: 5,
    };
    let candidate = Candidate {
        id: "M1".into(),
        mask: 1,
        datasets: vec!["train".into()],
    };
    let results = evaluate_candidate(&candidate, &[&train], &setup).unwrap();
    assert_eq!(results.len(), 3);
    assert!(results[0] >= 0.99, "holdout AUC {}", results[0]);
    assert!(results[1] >= 0.99, "CV AUC {}", results[1]);
    assert!(results[2] > 0.8, "reference rho {}", results[2]);
}

#[test]
fn raw_records_load_through_bigrams() {
    let dir = tempfile::tempdir().unwrap();
    let records = random_user_records(300, 5);
    let bigrams = BigramModel::build(records.iter().map(|(r, _)| r.screen_name.as_str()), 1.0).unwrap();
    bigrams.write_json(File::create(dir.path().join("bigrams.json")).unwrap()).unwrap();
    let mut text = String::new();
    for (r, l) in &records {
        let mut v = r.to_json_value();
        v["label"] = l.as_str().into();
        text.push_str(&v.to_string());
        text.push('\n');
    }
    text.push_str("{\"not\": \"a user\"}\n");
    fs::write(dir.path().join("raw.ndjson"), text).unwrap();
    fs::write(
        dir.path().join("r.toml"),
        "bigrams = \"bigrams.json\"\n[[datasets]]\nname = \"raw\"\npath = \"raw.ndjson\"\n",
    )
    .unwrap();
    let (registry, rejected) = Registry::load(&dir.path().join("r.toml")).unwrap();
    assert_eq!(rejected.len(), 1);
    let ds = registry.get("raw").unwrap();
    assert_eq!(ds.len(), 300);
    for (s, (r, l)) in ds.samples().iter().zip(&records) {
        assert_eq!(&s.user_id, &r.user_id);
        assert_eq!(s.label, *l);
        assert_eq!(s.features, extract_features(r, &bigrams));
    }
}

#[test]
fn merge_rules_split_and_override() {
    let dir = tempfile::tempdir().unwrap();
    let mut humans = only(&synthetic("verified", 50, 7), "verified", Label::Human);
    humans = LabeledDataset::new(
        "verified",
        humans
            .into_samples()
            .into_iter()
            .map(|mut s| {
                s.features.set(Feature::Verified, 1.0);
                s
            })
            .collect(),
    );
    write_csv(&dir.path().join("verified.csv"), &humans, true);
    write_csv(&dir.path().join("bots.csv"), &only(&synthetic("bots", 30, 8), "bots", Label::Bot), true);
    fs::write(
        dir.path().join("m.toml"),
        r#"
split_seed = 3

[[datasets]]
name = "verified"
path = "verified.csv"
role = "excluded"

[[datasets]]
name = "bots"
path = "bots.csv"

[[merges]]
output = "left"
role = "holdout"
inputs = [{ dataset = "bots" }, { dataset = "verified", partition = { index = 0, of = 2 } }]
overrides = [{ dataset = "verified", label = "human", feature = "verified", value = 0.0 }]

[[merges]]
output = "right"
inputs = [{ dataset = "verified", partition = { index = 1, of = 2 } }]
"#,
    )
    .unwrap();
    let (registry, _) = Registry::load(&dir.path().join("m.toml")).unwrap();
    let left = registry.get("left").unwrap();
    let right = registry.get("right").unwrap();
    assert_eq!(registry.role("left"), Some(Role::Holdout));
    assert_eq!(registry.role("right"), Some(Role::Excluded));
    assert_eq!(left.n_bots(), 30);
    assert_eq!(left.n_humans() + right.len(), 50);
    let left_ids: Vec<&str> = left.samples().iter().filter(|s| !s.label.is_bot()).map(|s| s.user_id.as_str()).collect();
    assert!(right.samples().iter().all(|s| !left_ids.contains(&s.user_id.as_str())));
    assert!(left
        .samples()
        .iter()
        .filter(|s| !s.label.is_bot())
        .all(|s| s.features[Feature::Verified] == 0.0));
    assert!(right.samples().iter().all(|s| s.features[Feature::Verified] == 1.0));
    // The source dataset is untouched.
    assert!(registry.get("verified").unwrap().samples().iter().all(|s| s.features[Feature::Verified] == 1.0));
}

#[test]
fn cross_dataset_matrix_on_synthetic_data() {
    let s1 = synthetic("s1", 80, 1);
    let s2 = synthetic("s2", 80, 2);
    let noise = generate_synthetic(&SyntheticSpec::indistinguishable("noise", 80), 3).unwrap();
    let m = cross_dataset_matrix(&[&s1, &s2, &noise], &small_forest(0), 5).unwrap();
    assert_eq!(m.names, vec!["s1", "s2", "noise"]);
    assert!(m.auc[0][0] >= 0.99 && m.auc[1][1] >= 0.99);
    assert!(m.auc[0][1] >= 0.99 && m.auc[1][0] >= 0.99);
    assert!((m.auc[2][2] - 0.5).abs() < 0.15);
    let sep = m.separability();
    assert!(sep[0] > sep[2] && sep[1] > sep[2]);
    assert_eq!(m, cross_dataset_matrix(&[&s1, &s2, &noise], &small_forest(0), 5).unwrap());

    let bots = only(&s1, "bots", Label::Bot);
    match cross_dataset_matrix(&[&s1, &bots], &small_forest(0), 5) {
        Err(AnalysisError::SingleClass(name)) => assert_eq!(name, "bots"),
        other => panic!("expected a single-class error, got {other:?}"),
    }
}

#[test]
fn characterization_separates_signal_from_noise() {
    let config = CharacterizeConfig {
        n_per_class: 100,
        repetitions: 20,
        seed: 5,
        ..Default::default()
    };
    let ds = synthetic("s", 300, 1);
    let h = characterize(&ds, &config).unwrap();
    assert_eq!(h.scores.len(), 20);
    assert!(h.median() >= 0.95);
    let shuffled = generate_synthetic(&SyntheticSpec::indistinguishable("n", 300), 1).unwrap();
    assert!(characterize(&shuffled, &config).unwrap().median() <= 0.1);
    assert_eq!(h, characterize(&ds, &config).unwrap());
}

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use botstream_core::datasets::synthetic::random_user_records;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_botstream"));
    c.env("BOTSTREAM_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Labeled raw records, a bigram model and a small forest trained on them.
struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace { dir };
        ok(&["generate", "--kind", "records", "--n", &n.to_string(), "--seed", "7", "--output", s(&ws.path("recs.ndjson"))]);
        ok(&["build-bigrams", "--input", s(&ws.path("recs.ndjson")), "--output", s(&ws.path("bigrams.json"))]);
        ok(&["extract", "--input", s(&ws.path("recs.ndjson")), "--bigrams", s(&ws.path("bigrams.json")), "--output", s(&ws.path("feats.csv"))]);
        ok(&["train", "--input", s(&ws.path("feats.csv")), "--output", s(&ws.path("model.json")), "--trees", "20", "--seed", "1"]);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn score(&self, input: &str, output: &str, extra: &[&str]) -> Output {
        let model = self.path("model.json");
        let bigrams = self.path("bigrams.json");
        let mut args = vec!["score", "--input", input, "--model", s(&model), "--bigrams", s(&bigrams), "--output", output];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn ndjson(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn scoring_conserves_and_orders_records() {
    let ws = Workspace::new(10_000);
    let out = ws.path("scores.ndjson");
    let res = ws.score(s(&ws.path("recs.ndjson")), s(&out), &["--workers", "1"]);
    assert!(res.status.success());
    let scored = ndjson(&out);
    assert_eq!(scored.len(), 10_000);
    let input = ndjson(&ws.path("recs.ndjson"));
    for (o, i) in scored.iter().zip(&input) {
        assert_eq!(o["user_id"], i["id_str"]);
        let score = o["bot_score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
        assert!(o.get("label").is_none());
    }

    let parallel = ws.path("parallel.ndjson");
    assert!(ws
        .score(s(&ws.path("recs.ndjson")), s(&parallel), &["--workers", "4", "--chunk", "97"])
        .status
        .success());
    let a: BTreeSet<String> = fs::read_to_string(&out).unwrap().lines().map(str::to_owned).collect();
    let b: BTreeSet<String> = fs::read_to_string(&parallel).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(a, b);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&parallel).unwrap());
}

#[test]
fn malformed_lines_are_isolated() {
    let ws = Workspace::new(50);
    let mut lines: Vec<String> = fs::read_to_string(ws.path("recs.ndjson")).unwrap().lines().map(str::to_owned).collect();
    lines.insert(4, "{\"id_str\": \"1\", \"screen_name\": \"bad name!\"}".into());
    lines.insert(10, "not json".into());
    fs::write(ws.path("mixed.ndjson"), lines.join("\n")).unwrap();
    let out = ws.path("mixed.out.ndjson");
    assert!(ws.score(s(&ws.path("mixed.ndjson")), s(&out), &["--threshold", "0.5"]).status.success());
    let scored = ndjson(&out);
    assert_eq!(scored.len(), 50);
    assert!(scored.iter().all(|r| r["label"] == "bot" || r["label"] == "human"));
    let rejects = ndjson(&ws.path("mixed.out.ndjson.rejected.ndjson"));
    let ordinals: Vec<u64> = rejects.iter().map(|r| r["record"].as_u64().unwrap()).collect();
    assert_eq!(ordinals, vec![5, 11]);
}

#[test]
fn extracted_features_score_identically() {
    let ws = Workspace::new(500);
    let raw = ws.path("raw.csv");
    let via_csv = ws.path("via.csv");
    assert!(ws.score(s(&ws.path("recs.ndjson")), s(&raw), &["--format", "csv"]).status.success());
    assert!(ws.score(s(&ws.path("feats.csv")), s(&via_csv), &[]).status.success());
    let a = fs::read_to_string(&raw).unwrap();
    assert_eq!(a, fs::read_to_string(&via_csv).unwrap());
    assert!(a.starts_with("user_id,bot_score\n"));
    assert_eq!(a.lines().count(), 501);
}

#[test]
fn training_is_reproducible() {
    let ws = Workspace::new(400);
    let train = |seed: &str, name: &str| {
        ok(&["train", "--input", s(&ws.path("feats.csv")), "--output", s(&ws.path(name)), "--trees", "15", "--seed", seed]);
        fs::read(ws.path(name)).unwrap()
    };
    let a = train("5", "a.json");
    assert_eq!(a, train("5", "b.json"));
    assert_ne!(a, train("6", "c.json"));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new(20);
    let out = ws.path("never.ndjson");
    let missing = run(&["score", "--input", s(&ws.path("recs.ndjson")), "--model", s(&ws.path("nope.json")), "--bigrams", s(&ws.path("bigrams.json")), "--output", s(&out)]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(!out.exists());

    let mut model: Value = serde_json::from_slice(&fs::read(ws.path("model.json")).unwrap()).unwrap();
    model["version"] = "2.0".into();
    fs::write(ws.path("future.json"), model.to_string()).unwrap();
    let future = run(&["score", "--input", s(&ws.path("recs.ndjson")), "--model", s(&ws.path("future.json")), "--bigrams", s(&ws.path("bigrams.json"))]);
    assert_eq!(future.status.code(), Some(1));

    let bad = ws.score(s(&ws.path("recs.ndjson")), s(&out), &["--threshold", "1.5"]);
    assert_eq!(bad.status.code(), Some(1));

    fs::write(ws.path("junk.ndjson"), "junk\n{}\n").unwrap();
    let junk = ws.score(s(&ws.path("junk.ndjson")), s(&out), &[]);
    assert_eq!(junk.status.code(), Some(2));
    assert_eq!(ndjson(&ws.path("never.ndjson.rejected.ndjson")).len(), 2);
}

#[test]
fn threshold_sweep_command() {
    let ws = Workspace::new(300);
    let out = ws.path("sweep.csv");
    ok(&["threshold", "--input", s(&ws.path("feats.csv")), "--model", s(&ws.path("model.json")), "--output", s(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("threshold,precision,recall,f1\n"));
    assert_eq!(text.lines().count(), 102);
    let cv = ws.path("cv.csv");
    ok(&["threshold", "--input", s(&ws.path("feats.csv")), "--cv-folds", "3", "--trees", "10", "--output", s(&cv), "--resolution", "0.1"]);
    assert_eq!(fs::read_to_string(&cv).unwrap().lines().count(), 12);
}

#[test]
fn bench_reports_percentiles() {
    let out = tempfile::NamedTempFile::new().unwrap();
    ok(&["bench", "--n", "300", "--rounds", "1", "--output", s(out.path())]);
    let r: Value = serde_json::from_slice(&fs::read(out.path()).unwrap()).unwrap();
    assert_eq!(r["records"], 300);
    for key in ["records_per_sec", "mean_us", "p50_us", "p95_us", "p99_us"] {
        assert!(r[key].as_f64().unwrap() > 0.0, "{key}");
    }
}

fn write_registry(dir: &Path) {
    let feats = |name: &str, n: &str, seed: &str, sep: &str| {
        ok(&["generate", "--kind", "features", "--n", n, "--seed", seed, "--separation", sep, "--output", s(&dir.join(format!("{name}.csv")))]);
    };
    feats("a", "120", "1", "2.0");
    feats("b", "120", "2", "1.0");
    feats("h1", "80", "3", "2.0");
    feats("ref", "60", "4", "2.0");
    let reference = fs::read_to_string(dir.join("ref.csv")).unwrap();
    let mut scores = String::from("user_id,score\n");
    for (i, line) in reference.lines().skip(1).enumerate() {
        let id = line.split(',').next().unwrap();
        let bot = line.ends_with(",bot");
        scores.push_str(&format!("{id},{}\n", bot as u8 as f64 + i as f64 * 1e-3));
    }
    fs::write(dir.join("ref_scores.csv"), scores).unwrap();
    fs::write(
        dir.join("registry.toml"),
        "[[datasets]]\nname = \"a\"\npath = \"a.csv\"\n\n[[datasets]]\nname = \"b\"\npath = \"b.csv\"\n\n\
         [[datasets]]\nname = \"h1\"\npath = \"h1.csv\"\nrole = \"holdout\"\n\n\
         [[datasets]]\nname = \"ref\"\npath = \"ref.csv\"\nrole = \"reference\"\nscores = \"ref_scores.csv\"\n",
    )
    .unwrap();
}

#[test]
fn experiment_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_registry(dir.path());
    let registry = dir.path().join("registry.toml");

    let sel = dir.path().join("sel");
    let out = ok(&["select", "--registry", s(&registry), "--output", s(&sel), "--trees", "10", "--cv-folds", "3"]);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("winner M"));
    let report = fs::read_to_string(sel.join("selection.csv")).unwrap();
    assert!(report.starts_with("candidate_id,dataset_mask,h1,cv,reference,rank_h1,rank_cv,rank_reference,rank_product\n"));
    assert_eq!(report.lines().count(), 4);
    let winner: Value = serde_json::from_slice(&fs::read(sel.join("winner.json")).unwrap()).unwrap();
    assert_eq!(winner["model"], "model.json");
    let scored = dir.path().join("scored.csv");
    ok(&["score", "--input", s(&dir.path().join("h1.csv")), "--model", s(&sel.join("model.json")), "--output", s(&scored)]);
    assert_eq!(fs::read_to_string(&scored).unwrap().lines().count(), 81);

    let sel2 = dir.path().join("sel2");
    ok(&["select", "--registry", s(&registry), "--output", s(&sel2), "--trees", "10", "--cv-folds", "3", "--max-resident", "1"]);
    assert_eq!(report, fs::read_to_string(sel2.join("selection.csv")).unwrap());

    let matrix = dir.path().join("matrix.csv");
    let out = ok(&["matrix", "--registry", s(&registry), "--output", s(&matrix), "--trees", "10"]);
    assert_eq!(fs::read_to_string(&matrix).unwrap().lines().count(), 10);
    assert!(String::from_utf8_lossy(&out.stdout).contains("spearman"));

    let chr = dir.path().join("chr");
    ok(&["characterize", "--registry", s(&registry), "--output", s(&chr), "--per-class", "30", "--reps", "5", "--dataset", "a", "--dataset", "b"]);
    assert_eq!(fs::read_to_string(chr.join("homogeneity.csv")).unwrap().lines().count(), 11);
    assert_eq!(fs::read_to_string(chr.join("pca.csv")).unwrap().lines().count(), 241);
    assert_eq!(fs::read_to_string(chr.join("summary.csv")).unwrap().lines().count(), 3);

    let even_k = run(&["characterize", "--registry", s(&registry), "--output", s(&chr), "--k", "4"]);
    assert_eq!(even_k.status.code(), Some(1));
    let unknown = run(&["matrix", "--registry", s(&registry), "--output", s(&matrix), "--dataset", "zzz"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn generated_records_round_trip_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ndjson");
    ok(&["generate", "--kind", "records", "--n", "100", "--seed", "3", "--output", s(&path)]);
    let expected = random_user_records(100, 3);
    for (line, (rec, label)) in fs::read_to_string(&path).unwrap().lines().zip(&expected) {
        let parsed = botstream_core::user_model::parse_record(line, None).unwrap();
        assert_eq!(&parsed.record, rec);
        assert_eq!(parsed.label, Some(*label));
    }
}

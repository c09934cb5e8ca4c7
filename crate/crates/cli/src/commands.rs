use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use botstream_core::analysis::{
    characterize, cross_dataset_matrix, pca_2d, write_homogeneity_csv, write_pca_csv,
    CharacterizeConfig, DistanceSpace, HomogeneityResult, PcaProjection,
};
use botstream_core::datasets::synthetic::random_user_records;
use botstream_core::datasets::{
    generate_synthetic, load_dataset, LoadOptions, Registry, Role, SyntheticSpec,
};
use botstream_core::features::FeatureCsvWriter;
use botstream_core::forest::{ClassWeight, ForestConfig, TreeParams};
use botstream_core::metrics::threshold_sweep;
use botstream_core::selection::{run_selection, SelectionConfig, WinnerManifest};
use botstream_core::user_model::{parse_timestamp, RecordStream};
use botstream_core::validation::{cross_val_scores, score_dataset, train_forest_named};
use botstream_core::{extract_features, BigramModel, Forest, LabeledDataset};
use chrono::{DateTime, Utc};
use serde_json::Value;

use crate::bench::{fixture, run_bench};
use crate::error::CliError;
use crate::output::{ensure_dir, write_file_with, Output};
use crate::score::{score_stream, Format, RecordWriter, Scorer};
use crate::{
    BenchArgs, BigramArgs, CharacterizeArgs, Command, ExtractArgs, FixtureKind, ForestArgs,
    GenerateArgs, MatrixArgs, ScoreArgs, SelectArgs, Space, ThresholdArgs, TrainArgs,
};

/// Training accounts behind the generated benchmark model.
const BENCH_TRAIN_ACCOUNTS: usize = 10_000;

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Score(a) => cmd_score(&a),
        Command::Train(a) => cmd_train(&a),
        Command::BuildBigrams(a) => cmd_build_bigrams(&a),
        Command::Extract(a) => cmd_extract(&a),
        Command::Characterize(a) => cmd_characterize(&a),
        Command::Matrix(a) => cmd_matrix(&a),
        Command::Select(a) => cmd_select(&a),
        Command::Threshold(a) => cmd_threshold(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Generate(a) => cmd_generate(&a),
    }
}

fn open_file(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_forest(path: &Path) -> Result<Forest, CliError> {
    let file = open_file(path)?;
    Forest::read_json(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("model {}: {e}", path.display())))
}

pub fn load_bigrams(path: &Path) -> Result<BigramModel, CliError> {
    let file = open_file(path)?;
    BigramModel::read_json(BufReader::new(file))
        .map_err(|e| CliError::Config(format!("bigrams {}: {e}", path.display())))
}

fn probe_time(raw: Option<&str>) -> Result<Option<DateTime<Utc>>, CliError> {
    raw.map(|s| parse_timestamp(s).map_err(|e| CliError::Config(format!("--probe-time: {e}"))))
        .transpose()
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>, CliError> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) if p == Path::new("-") => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(p) => Ok(Box::new(BufReader::new(open_file(p)?))),
    }
}

fn rejects_path(explicit: Option<&Path>, output: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_owned).or_else(|| {
        output.filter(|p| *p != Path::new("-")).map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".rejected.ndjson");
            PathBuf::from(s)
        })
    })
}

fn rejects_sink(path: Option<&Path>) -> Result<Option<Output>, CliError> {
    path.map(Output::file).transpose()
}

pub fn forest_config(args: &ForestArgs) -> Result<ForestConfig, CliError> {
    if args.trees == 0 {
        return Err(CliError::Config("--trees must be at least 1".into()));
    }
    if args.min_samples_leaf == 0 {
        return Err(CliError::Config("--min-samples-leaf must be at least 1".into()));
    }
    Ok(ForestConfig {
        n_trees: args.trees,
        seed: args.seed,
        params: TreeParams {
            max_depth: args.max_depth,
            min_samples_leaf: args.min_samples_leaf,
            class_weight: if args.balanced {
                ClassWeight::Balanced
            } else {
                ClassWeight::None
            },
            ..TreeParams::default()
        },
    })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads labeled files and concatenates them in argument order.
fn load_labeled(
    paths: &[PathBuf],
    bigrams: Option<&Path>,
    probe: Option<&str>,
) -> Result<(LabeledDataset, Vec<String>), CliError> {
    let bigrams = bigrams.map(load_bigrams).transpose()?;
    let opts = LoadOptions {
        bigrams: bigrams.as_ref(),
        default_probe: probe_time(probe)?,
    };
    let mut parts = Vec::with_capacity(paths.len());
    for path in paths {
        if !path.exists() {
            return Err(CliError::Config(format!("{}: no such file", path.display())));
        }
        let report = load_dataset(&dataset_name(path), path, &opts)
            .map_err(|e| CliError::Data(e.to_string()))?;
        if !report.rejected.is_empty() {
            log::warn!("{}: {} records rejected", path.display(), report.rejected.len());
        }
        parts.push(report.dataset);
    }
    let names: Vec<String> = parts.iter().map(|d| d.name().to_owned()).collect();
    Ok((LabeledDataset::union(names.join("+"), &parts), names))
}

fn load_registry(path: &Path) -> Result<Registry, CliError> {
    if !path.exists() {
        return Err(CliError::Config(format!("{}: no such registry", path.display())));
    }
    let (registry, rejected) =
        Registry::load(path).map_err(|e| CliError::Config(format!("registry: {e}")))?;
    if !rejected.is_empty() {
        log::warn!("registry: {} records rejected while loading", rejected.len());
    }
    Ok(registry)
}

/// Labeled registry datasets, optionally restricted to `names`. Without an
/// explicit list, datasets lacking one of the classes are skipped.
fn pick_datasets<'a>(
    registry: &'a Registry,
    names: &[String],
) -> Result<Vec<&'a LabeledDataset>, CliError> {
    if names.is_empty() {
        let mut picked = Vec::new();
        for e in registry.entries() {
            if e.role == Role::Reference {
                continue;
            }
            if e.dataset.has_both_classes() {
                picked.push(&e.dataset);
            } else {
                log::warn!("skipping single-class dataset `{}`", e.dataset.name());
            }
        }
        Ok(picked)
    } else {
        names
            .iter()
            .map(|n| {
                registry
                    .get(n)
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }
}

pub fn cmd_score(args: &ScoreArgs) -> Result<(), CliError> {
    if let Some(t) = args.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::Config(format!("--threshold {t} is outside [0, 1]")));
        }
    }
    let input_format = Format::from_path(args.input.as_deref());
    let forest = load_forest(&args.model)?;
    let bigrams = args.bigrams.as_deref().map(load_bigrams).transpose()?;
    if input_format == Format::Ndjson && bigrams.is_none() {
        return Err(CliError::Config("NDJSON input needs --bigrams".into()));
    }
    let scorer = Scorer {
        forest: &forest,
        bigrams: bigrams.as_ref(),
        threshold: args.threshold,
        default_probe: probe_time(args.probe_time.as_deref())?,
    };
    let input = open_input(args.input.as_deref())?;
    let out_format = args.format.unwrap_or(input_format);
    let mut writer = RecordWriter::new(
        Output::create(args.output.as_deref())?,
        out_format,
        args.threshold.is_some(),
    )?;
    let rejects_at = rejects_path(args.rejects.as_deref(), args.output.as_deref());
    let mut rejects = rejects_sink(rejects_at.as_deref())?;
    let parallel = rayon::current_num_threads() > 1;
    let summary = match rejects.as_mut() {
        Some(sink) => score_stream(&scorer, input, input_format, &mut writer, sink, args.chunk, parallel)?,
        None => score_stream(&scorer, input, input_format, &mut writer, &mut io::sink(), args.chunk, parallel)?,
    };
    writer.into_inner()?.commit()?;
    if let Some(r) = rejects {
        r.commit()?;
    }
    log::info!("scored {} records, rejected {}", summary.scored, summary.rejected);
    if summary.scored == 0 {
        return Err(CliError::Data(format!(
            "no record could be scored ({} rejected)",
            summary.rejected
        )));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let config = forest_config(&args.forest)?;
    let (ds, sources) = load_labeled(&args.input, args.bigrams.as_deref(), args.probe_time.as_deref())?;
    log::info!("training on {} bots, {} humans", ds.n_bots(), ds.n_humans());
    let forest = train_forest_named(&ds, &config, sources)
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_file_with(&args.output, |out| {
        forest.write_json(out).map_err(|e| CliError::command("train", e))
    })
}

fn names_from_json(line: &str) -> Option<String> {
    let v: Value = serde_json::from_str(line).ok()?;
    let name = v
        .get("user")
        .and_then(|u| u.get("screen_name"))
        .or_else(|| v.get("screen_name"))?;
    name.as_str().map(str::to_owned)
}

pub fn cmd_build_bigrams(args: &BigramArgs) -> Result<(), CliError> {
    if !(args.smoothing > 0.0 && args.smoothing.is_finite()) {
        return Err(CliError::Config(format!(
            "--smoothing must be positive and finite, got {}",
            args.smoothing
        )));
    }
    let json = matches!(
        args.input.extension().and_then(|e| e.to_str()),
        Some("ndjson" | "jsonl" | "json")
    );
    let reader = BufReader::new(open_file(&args.input)?);
    let mut names = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::io(&args.input, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let name = if json {
            match names_from_json(&line) {
                Some(n) => n,
                None => {
                    log::warn!("line {}: no screen_name", i + 1);
                    continue;
                }
            }
        } else {
            line.trim().to_owned()
        };
        if !args.unique || seen.insert(name.clone()) {
            names.push(name);
        }
    }
    let model = BigramModel::build(&names, args.smoothing)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    log::info!("bigram model from {} names", model.corpus_size());
    write_file_with(&args.output, |out| {
        model.write_json(out).map_err(|e| CliError::command("build-bigrams", e))
    })
}

pub fn cmd_extract(args: &ExtractArgs) -> Result<(), CliError> {
    let bigrams = load_bigrams(&args.bigrams)?;
    let default_probe = probe_time(args.probe_time.as_deref())?;
    let input = open_input(args.input.as_deref())?;
    let mut writer = FeatureCsvWriter::new(Output::create(args.output.as_deref())?, true)
        .map_err(|e| CliError::command("extract", e))?;
    let rejects_at = rejects_path(args.rejects.as_deref(), args.output.as_deref());
    let mut rejects = rejects_sink(rejects_at.as_deref())?;
    let (mut written, mut rejected) = (0usize, 0usize);
    for item in RecordStream::new(input, default_probe) {
        match item {
            Ok((_, parsed)) => {
                let fv = extract_features(&parsed.record, &bigrams);
                writer
                    .write(&parsed.record.user_id, &fv, parsed.label)
                    .map_err(|e| CliError::command("extract", e))?;
                written += 1;
            }
            Err(e) => {
                rejected += 1;
                log::warn!("{e}");
                if let Some(sink) = rejects.as_mut() {
                    let line = serde_json::json!({"record": e.ordinal, "error": e.kind.to_string()});
                    writeln!(sink, "{line}").map_err(|err| CliError::io("<rejections>", err))?;
                }
            }
        }
    }
    writer
        .into_inner()
        .map_err(|e| CliError::command("extract", e))?
        .commit()?;
    if let Some(r) = rejects {
        r.commit()?;
    }
    log::info!("extracted {written} records, rejected {rejected}");
    if written == 0 {
        return Err(CliError::Data(format!("no record could be parsed ({rejected} rejected)")));
    }
    Ok(())
}

pub fn cmd_characterize(args: &CharacterizeArgs) -> Result<(), CliError> {
    if args.k.is_multiple_of(2) {
        return Err(CliError::Config(format!("--k must be odd, got {}", args.k)));
    }
    let registry = load_registry(&args.registry)?;
    ensure_dir(&args.output)?;
    let config = CharacterizeConfig {
        k: args.k,
        n_per_class: args.per_class,
        repetitions: args.reps,
        seed: args.seed,
        space: match args.space {
            Space::Log => DistanceSpace::LogRescaled,
            Space::Raw => DistanceSpace::Raw,
        },
    };
    let mut results: Vec<(String, PcaProjection, HomogeneityResult, (usize, usize))> = Vec::new();
    for ds in pick_datasets(&registry, &args.datasets)? {
        let pca = pca_2d(ds).map_err(|e| CliError::Data(format!("{}: {e}", ds.name())))?;
        let h = characterize(ds, &config).map_err(|e| CliError::Data(format!("{}: {e}", ds.name())))?;
        log::info!("{}: median homogeneity {:.4}", ds.name(), h.median());
        results.push((ds.name().to_owned(), pca, h, (ds.n_bots(), ds.n_humans())));
    }
    let pcas: Vec<(&str, &PcaProjection)> = results.iter().map(|r| (r.0.as_str(), &r.1)).collect();
    write_file_with(&args.output.join("pca.csv"), |out| {
        write_pca_csv(out, &pcas).map_err(|e| CliError::command("characterize", e))
    })?;
    let hs: Vec<HomogeneityResult> = results.iter().map(|r| r.2.clone()).collect();
    write_file_with(&args.output.join("homogeneity.csv"), |out| {
        write_homogeneity_csv(out, &hs).map_err(|e| CliError::command("characterize", e))
    })?;
    write_file_with(&args.output.join("summary.csv"), |out| {
        let mut w = csv::Writer::from_writer(out);
        let mut rows = vec![vec![
            "dataset".to_owned(),
            "n_bots".into(),
            "n_humans".into(),
            "median_homogeneity".into(),
            "mean_homogeneity".into(),
            "pc1_variance_ratio".into(),
            "pc2_variance_ratio".into(),
        ]];
        for (name, pca, h, (b, hu)) in &results {
            rows.push(vec![
                name.clone(),
                b.to_string(),
                hu.to_string(),
                h.median().to_string(),
                h.mean().to_string(),
                pca.explained_variance_ratio[0].to_string(),
                pca.explained_variance_ratio[1].to_string(),
            ]);
        }
        for r in rows {
            w.write_record(&r).map_err(|e| CliError::command("characterize", e))?;
        }
        w.flush().map_err(|e| CliError::io("summary.csv", e))
    })?;
    for (name, _, h, _) in &results {
        println!("{name}\t{:.4}", h.median());
    }
    Ok(())
}

pub fn cmd_matrix(args: &MatrixArgs) -> Result<(), CliError> {
    let config = forest_config(&args.forest)?;
    let registry = load_registry(&args.registry)?;
    let datasets = pick_datasets(&registry, &args.datasets)?;
    let matrix = cross_dataset_matrix(&datasets, &config, args.cv_folds)
        .map_err(|e| CliError::Data(e.to_string()))?;
    write_file_with(&args.output, |out| {
        matrix.write_csv(out).map_err(|e| CliError::command("matrix", e))
    })?;
    let sep = matrix.separability();
    let gen = matrix.generalizability();
    println!("dataset\tseparability\tgeneralizability");
    for i in matrix.order_by_separability() {
        println!("{}\t{:.4}\t{:.4}", matrix.names[i], sep[i], gen[i]);
    }
    match matrix.separability_generalizability_spearman() {
        Ok((rho, Some(p))) => println!("spearman\t{rho:.4}\tp={p:.4}"),
        Ok((rho, None)) => println!("spearman\t{rho:.4}"),
        Err(e) => log::warn!("spearman undefined: {e}"),
    }
    Ok(())
}

pub fn cmd_select(args: &SelectArgs) -> Result<(), CliError> {
    let forest = forest_config(&args.forest)?;
    if args.max_resident == Some(0) {
        return Err(CliError::Config("--max-resident must be at least 1".into()));
    }
    let registry = load_registry(&args.registry)?;
    ensure_dir(&args.output)?;
    let defaults = SelectionConfig::default();
    let config = SelectionConfig {
        forest,
        cv_folds: args.cv_folds,
        max_resident: args.max_resident.unwrap_or(defaults.max_resident),
    };
    let outcome = run_selection(&registry, &config).map_err(|e| match e {
        botstream_core::selection::SelectionError::NoHoldouts
        | botstream_core::selection::SelectionError::NoReference
        | botstream_core::selection::SelectionError::NoDatasets => CliError::Config(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    let report = &outcome.report;
    write_file_with(&args.output.join("selection.csv"), |out| {
        report.write_csv(out).map_err(|e| CliError::command("select", e))
    })?;
    write_file_with(&args.output.join("model.json"), |out| {
        outcome
            .winner_forest
            .write_json(out)
            .map_err(|e| CliError::command("select", e))
    })?;
    let manifest = WinnerManifest::new(report, PathBuf::from("model.json"));
    write_file_with(&args.output.join("winner.json"), |out| {
        serde_json::to_writer_pretty(&mut *out, &manifest)
            .map_err(|e| CliError::command("select", e))?;
        out.write_all(b"\n").map_err(|e| CliError::io("winner.json", e))
    })?;
    let w = report.winner();
    println!(
        "winner {} ({}) rank product {}",
        w.candidate.id,
        w.candidate.datasets.join(" + "),
        w.rank_product
    );
    for r in report.runners_up(2) {
        println!("runner-up {} ({})", r.candidate.id, r.candidate.datasets.join(" + "));
    }
    Ok(())
}

pub fn cmd_threshold(args: &ThresholdArgs) -> Result<(), CliError> {
    if !(args.resolution > 0.0 && args.resolution <= 1.0) {
        return Err(CliError::Config(format!(
            "--resolution must lie in (0, 1], got {}",
            args.resolution
        )));
    }
    let forest = args.model.as_deref().map(load_forest).transpose()?;
    let config = forest_config(&args.forest)?;
    let (ds, _) = load_labeled(
        std::slice::from_ref(&args.input),
        args.bigrams.as_deref(),
        args.probe_time.as_deref(),
    )?;
    let samples = match &forest {
        Some(f) => score_dataset(f, &ds),
        None => cross_val_scores(&ds, args.cv_folds, &config)
            .map_err(|e| CliError::Data(e.to_string()))?,
    };
    let sweep = threshold_sweep(&samples, args.resolution).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = Output::create(args.output.as_deref())?;
    sweep.write_csv(&mut out).map_err(|e| CliError::command("threshold", e))?;
    out.commit()?;
    let best = sweep.best_point();
    eprintln!(
        "best threshold {} F1={:.4} P={:.4} R={:.4}",
        best.threshold, best.metrics.f1, best.metrics.precision, best.metrics.recall
    );
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let mut text = String::new();
    open_file(path)?
        .read_to_string(&mut text)
        .map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let (lines, forest, bigrams) = match (&args.model, &args.bigrams) {
        (Some(m), Some(b)) => {
            let forest = load_forest(m)?;
            let bigrams = load_bigrams(b)?;
            let lines = match &args.input {
                Some(p) => read_lines(p)?,
                None => random_user_records(args.n, args.seed)
                    .into_iter()
                    .map(|(r, _)| r.to_json_line())
                    .collect(),
            };
            (lines, forest, bigrams)
        }
        _ => {
            log::info!("training a fixture model on {BENCH_TRAIN_ACCOUNTS} generated accounts");
            let fx = fixture(args.n, BENCH_TRAIN_ACCOUNTS, botstream_core::forest::DEFAULT_N_TREES, args.seed)?;
            let lines = match &args.input {
                Some(p) => read_lines(p)?,
                None => fx.lines,
            };
            (lines, fx.forest, fx.bigrams)
        }
    };
    let report = run_bench(&lines, &forest, &bigrams, args.rounds)?;
    let mut out = Output::create(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::command("bench", e))?;
    out.write_all(b"\n").map_err(|e| CliError::io("<output>", e))?;
    out.commit()?;
    eprintln!(
        "{:.0} records/s, mean {:.1} us, p50 {:.1} us, p95 {:.1} us, p99 {:.1} us",
        report.records_per_sec, report.mean_us, report.p50_us, report.p95_us, report.p99_us
    );
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut out = Output::create(args.output.as_deref())?;
    match args.kind {
        FixtureKind::Records => {
            for (record, label) in random_user_records(args.n, args.seed) {
                let mut v = record.to_json_value();
                v["label"] = Value::from(label.as_str());
                writeln!(out, "{v}").map_err(|e| CliError::io("<output>", e))?;
            }
        }
        FixtureKind::Features => {
            let spec = SyntheticSpec {
                name: "generated".into(),
                n_bots: args.n / 2,
                n_humans: args.n - args.n / 2,
                separation: args.separation,
                ..SyntheticSpec::default()
            };
            let ds = generate_synthetic(&spec, args.seed).map_err(|e| CliError::Config(e.to_string()))?;
            let mut w = FeatureCsvWriter::new(&mut out, true).map_err(|e| CliError::command("generate", e))?;
            for s in ds.samples() {
                w.write(&s.user_id, &s.features, Some(s.label))
                    .map_err(|e| CliError::command("generate", e))?;
            }
            w.into_inner().map_err(|e| CliError::command("generate", e))?;
        }
    }
    out.commit()
}

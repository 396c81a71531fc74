use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use uqsup_core::analysis::{
    rank_order, sample_size_sweep, sensitivity, Pairing, RankInput, Sensitivity, SweepGrid,
};
use uqsup_core::io::{self, IoError};
use uqsup_core::manifest::RunManifest;
use uqsup_core::metrics::{EvaluationOptions, MaliciousRule, ObjectiveSpec};
use uqsup_core::pipeline::{calibrate_on, evaluate_on, PipelineError};
use uqsup_core::quantifiers::{quantify_dataset, QuantifierId};
use uqsup_core::records::{Dataset, Split, Task};
use uqsup_core::supervisor::CalibrationMode;
use uqsup_core::synth::{generate, SynthConfig};
use uqsup_core::EvaluationReport;

#[derive(Parser)]
#[command(name = "uqsup", version)]
#[command(about = "Quantify, calibrate and evaluate uncertainty-based DNN supervisors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic prediction records
    Synth(SynthArgs),
    /// Check a record file against every record invariant
    Validate {
        records: PathBuf,
        /// Allowed deviation of each softmax sum from 1
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Compute per-input predictions and scores
    Quantify(QuantifyArgs),
    /// Pick a threshold on validation records at a target false-positive rate
    Calibrate(CalibrateArgs),
    /// Apply a supervisor config to test records and report metrics
    Evaluate(EvaluateArgs),
    /// Rank quantifiers by S1 across a directory of reports
    Compare(CompareArgs),
    /// Re-evaluate with every record truncated to each sample count
    Sweep(SweepArgs),
    /// Neighborhood mean/std maps of grids and their correlation
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Samples per record (1 for point predictors)
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    validation: usize,
    #[arg(long, default_value_t = 1000)]
    test: usize,
    #[arg(long, default_value_t = 3.0)]
    margin: f64,
    #[arg(long, default_value_t = 3.0)]
    noise_max: f64,
    #[arg(long, default_value_t = 0.5)]
    sample_noise: f64,
    /// Share of test inputs generated with doubled noise and tagged `ood`
    #[arg(long, default_value_t = 0.0)]
    ood_fraction: f64,
    /// Emit regression records instead of class distributions
    #[arg(long)]
    regression: bool,
    /// With --regression, emit [mean, variance] samples
    #[arg(long, requires = "regression")]
    with_variance: bool,
    /// Extra `key=value` header metadata
    #[arg(long = "meta", value_parser = parse_key_value)]
    metadata: Vec<(String, String)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Validation,
    Test,
    All,
}

impl SplitChoice {
    fn select(self, dataset: &Dataset) -> Dataset {
        match self {
            SplitChoice::Train => dataset.split(Split::Train),
            SplitChoice::Validation => dataset.split(Split::Validation),
            SplitChoice::Test => dataset.split(Split::Test),
            SplitChoice::All => dataset.clone(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Validation => "validation",
            SplitChoice::Test => "test",
            SplitChoice::All => "all",
        }
    }
}

#[derive(Args)]
struct QuantifyArgs {
    records: PathBuf,
    /// Quantifier code, or `all` for every applicable one
    #[arg(long, short)]
    quantifier: String,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitChoice,
    /// Output file; a directory with `--quantifier all`; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RuleArgs {
    /// Regression: errors above this absolute imprecision count as malicious
    #[arg(long)]
    imprecision: Option<f64>,
}

impl RuleArgs {
    fn rule(&self) -> MaliciousRule {
        match self.imprecision {
            Some(x) => MaliciousRule::Imprecision(x),
            None => MaliciousRule::Misclassification,
        }
    }

    fn record(&self, manifest: &mut RunManifest) {
        if let Some(x) = self.imprecision {
            manifest.flags.insert("imprecision".into(), x.to_string());
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    records: PathBuf,
    #[arg(long, short)]
    quantifier: QuantifierId,
    #[arg(long, short)]
    epsilon: f64,
    #[arg(long, default_value = "above", value_parser = parse_mode)]
    mode: CalibrationMode,
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitChoice,
    /// Write the config even when calibration is degenerate
    #[arg(long)]
    allow_degenerate: bool,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    records: PathBuf,
    #[arg(long, short)]
    config: PathBuf,
    /// May be repeated
    #[arg(long = "beta", default_values_t = [1.0])]
    betas: Vec<f64>,
    /// `accuracy` or `mse:LOWER:UPPER`
    #[arg(long, default_value = "accuracy", value_parser = parse_objective)]
    objective: ObjectiveSpec,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Print two decimals instead of four
    #[arg(long)]
    paper_style: bool,
    #[command(flatten)]
    rule: RuleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    results_dir: PathBuf,
    /// Comma-separated grouping keys: report metadata names or `epsilon`
    #[arg(long, default_value = "subject,source,epsilon", value_delimiter = ',')]
    group_by: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// One record file per grid row (e.g. per training epoch)
    #[arg(required = true)]
    records: Vec<PathBuf>,
    #[arg(long, short)]
    quantifier: QuantifierId,
    #[arg(long, short)]
    epsilon: f64,
    /// `A..B` (inclusive) or a comma-separated list
    #[arg(long, value_parser = parse_sizes)]
    sizes: SizeList,
    #[arg(long, default_value = "above", value_parser = parse_mode)]
    mode: CalibrationMode,
    /// Header metadata key holding each file's row value; files are numbered
    /// 1.. when absent
    #[arg(long, default_value = "epoch")]
    row_key: String,
    #[command(flatten)]
    rule: RuleArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SensitivityArgs {
    /// A grid CSV or a directory of them
    grid_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Correlate the std map with the neighborhood means or the raw values
    #[arg(long, value_enum, default_value = "mean")]
    pairing: PairingChoice,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingChoice {
    Mean,
    Raw,
}

#[derive(Clone, Debug)]
struct SizeList(Vec<usize>);

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got `{s}`"))
}

fn parse_mode(s: &str) -> Result<CalibrationMode, String> {
    s.parse()
}

fn parse_objective(s: &str) -> Result<ObjectiveSpec, String> {
    let spec = match s.split(':').collect::<Vec<_>>().as_slice() {
        ["accuracy"] => ObjectiveSpec::accuracy(),
        ["mse", lo, hi] => {
            let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
            let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
            ObjectiveSpec::mean_squared_error(lo, hi)
        }
        _ => return Err(format!("expected `accuracy` or `mse:LOWER:UPPER`, got `{s}`")),
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_sizes(s: &str) -> Result<SizeList, String> {
    let bad = |p: &str| format!("bad size `{p}`");
    let sizes: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad(a))?;
        let b: usize = b.trim().parse().map_err(|_| bad(b))?;
        if a > b {
            return Err(format!("empty range `{s}`"));
        }
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(|_| bad(p)))
            .collect::<Result<_, _>>()?
    };
    let mut sizes = sizes;
    sizes.sort_unstable();
    sizes.dedup();
    Ok(SizeList(sizes))
}

/// A failed command and the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

/// Bad input, unmet precondition or invalid usage: exit code 2.
fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

/// Anything else: exit code 1.
fn internal(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn write_failure(error: IoError) -> Failure {
    match error {
        IoError::Unwritable(_) => usage(error),
        other => internal(other),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset, Failure> {
    io::read_records(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn decimals(paper_style: bool) -> usize {
    if paper_style {
        2
    } else {
        4
    }
}

fn check_manifest(manifest: &RunManifest) -> CmdResult {
    manifest.check().map_err(usage)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let config = SynthConfig {
        seed: args.seed,
        task: if args.regression {
            Task::Regression
        } else {
            Task::Classification
        },
        num_classes: args.classes,
        samples: args.samples,
        validation: args.validation,
        test: args.test,
        margin: args.margin,
        noise_max: args.noise_max,
        sample_noise: args.sample_noise,
        ood_fraction: args.ood_fraction,
        with_variance: args.with_variance,
    };
    if args.samples == 0 || (!args.regression && args.classes < 2) {
        return Err(usage(anyhow!("need at least 1 sample and 2 classes")));
    }
    if !(args.noise_max >= 0.0 && args.sample_noise >= 0.0) {
        return Err(usage(anyhow!("noise levels must be non-negative")));
    }
    let mut dataset = generate(&config);
    dataset.metadata.extend(args.metadata);
    io::write_records(&dataset, &args.out).map_err(write_failure)?;
    println!("wrote {} records to {}", dataset.len(), args.out.display());
    Ok(())
}

fn cmd_validate(records: PathBuf, tolerance: f64) -> CmdResult {
    let dataset = io::read_records_with(&records, tolerance)
        .with_context(|| format!("reading {}", records.display()))
        .map_err(usage)?;
    println!(
        "{}: {} valid records",
        records.display(),
        dataset.len()
    );
    Ok(())
}

fn cmd_quantify(args: QuantifyArgs) -> CmdResult {
    let dataset = args.split.select(&read_dataset(&args.records)?);
    let quantifiers: Vec<QuantifierId> = if args.quantifier.eq_ignore_ascii_case("all") {
        let applicable: Vec<QuantifierId> = QuantifierId::ALL
            .into_iter()
            .filter(|q| dataset.records.iter().all(|r| q.accepts(r)))
            .collect();
        if applicable.is_empty() {
            return Err(usage(anyhow!(
                "no quantifier applies to every record of {}",
                args.records.display()
            )));
        }
        applicable
    } else {
        vec![args.quantifier.parse().map_err(|e: String| usage(anyhow!(e)))?]
    };
    let all = quantifiers.len() > 1 || args.quantifier.eq_ignore_ascii_case("all");

    let tables = quantifiers
        .par_iter()
        .map(|&q| {
            let predictions = quantify_dataset(&dataset, q).map_err(usage)?;
            let csv = io::predictions_to_csv(&predictions).map_err(internal)?;
            Ok((q, csv))
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    match (&args.out, all) {
        (None, _) => {
            for (q, csv) in &tables {
                if all {
                    println!("# {}", q.code());
                }
                print!("{csv}");
            }
        }
        (Some(path), false) => {
            io::write_atomic(path, tables[0].1.as_bytes()).map_err(write_failure)?;
            println!("wrote {} rows to {}", dataset.len(), path.display());
        }
        (Some(dir), true) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(internal)?;
            for (q, csv) in &tables {
                let path = dir.join(format!("{}.csv", q.code()));
                io::write_atomic(&path, csv.as_bytes()).map_err(write_failure)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> CmdResult {
    let mut manifest = RunManifest::new("calibrate");
    manifest.inputs = vec![display(&args.records)];
    manifest.quantifiers = vec![args.quantifier];
    manifest.epsilons = vec![args.epsilon];
    manifest.mode = Some(args.mode);
    manifest.output = Some(display(&args.out));
    check_manifest(&manifest)?;

    let dataset = args.split.select(&read_dataset(&args.records)?);
    let config = calibrate_on(
        &dataset,
        args.quantifier,
        args.epsilon,
        args.mode,
        &args.rule.rule(),
    )
    .with_context(|| {
        format!(
            "calibrating on the {} split of {}",
            args.split.name(),
            args.records.display()
        )
    })
    .map_err(usage)?;

    if let Some(w) = &config.warning {
        eprintln!("warning: {w}");
    }
    if config.degenerate && !args.allow_degenerate {
        return Err(usage(anyhow!(
            "degenerate calibration (pass --allow-degenerate to write it anyway)"
        )));
    }
    io::write_config(&config, &args.out).map_err(write_failure)?;
    println!(
        "threshold {} achieved_fpr {} on {} benign scores",
        config.threshold,
        config.achieved_fpr.unwrap_or(f64::NAN),
        config.calibration_size
    );
    Ok(())
}

/// The common source tag of `dataset`, if every record shares one.
fn common_source(dataset: &Dataset) -> Option<String> {
    let first = dataset.records.first()?.source.as_str();
    dataset
        .records
        .iter()
        .all(|r| r.source.as_str() == first)
        .then(|| first.to_string())
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let mut manifest = RunManifest::new("evaluate");
    manifest.inputs = vec![display(&args.records), display(&args.config)];
    manifest.betas = args.betas.clone();
    manifest.objective = Some(args.objective.clone());
    manifest.flags.insert("split".into(), args.split.name().into());
    args.rule.record(&mut manifest);
    manifest.output = args.out.as_deref().map(display);
    check_manifest(&manifest)?;

    let config = io::read_config(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))
        .map_err(usage)?;
    manifest.quantifiers = config.quantifier.into_iter().collect();
    manifest.epsilons = config.epsilon.into_iter().collect();
    manifest.mode = config.mode;
    let dataset = args.split.select(&read_dataset(&args.records)?);
    let options = EvaluationOptions {
        objective: args.objective,
        betas: args.betas,
        rule: args.rule.rule(),
    };
    let mut report = evaluate_on(&dataset, &config, &options)
        .map_err(|e| match e {
            PipelineError::Metrics(_) => internal(e),
            other => usage(other),
        })?;
    if !report.metadata.contains_key("source") {
        if let Some(source) = common_source(&dataset) {
            report.metadata.insert("source".into(), source);
        }
    }
    report.manifest = Some(manifest);

    let places = decimals(args.paper_style);
    println!("{}", EvaluationReport::table_header());
    println!("{}", report.table_row(places));
    for s in report.s_beta.iter().filter(|s| s.beta != 1.0) {
        println!("S_{} = {}", s.beta, s.value.format(places));
    }
    if let Some(path) = &args.out {
        io::write_report(&report, path).map_err(write_failure)?;
    }
    Ok(())
}

fn group_key(report: &EvaluationReport, key: &str) -> String {
    match key {
        "epsilon" => report
            .epsilon
            .map(|e| e.to_string())
            .unwrap_or_else(|| "-".into()),
        "quantifier" => report
            .quantifier
            .map(|q| q.code().to_string())
            .unwrap_or_else(|| "-".into()),
        other => report
            .metadata
            .get(other)
            .cloned()
            .unwrap_or_else(|| "-".into()),
    }
}

fn cmd_compare(args: CompareArgs) -> CmdResult {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.results_dir)
        .with_context(|| format!("reading {}", args.results_dir.display()))
        .map_err(usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(anyhow!(
            "no .json reports in {}",
            args.results_dir.display()
        )));
    }

    let mut inputs = Vec::with_capacity(paths.len());
    for path in &paths {
        let report = io::read_report(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(usage)?;
        let s1 = report.s1().ok_or_else(|| {
            usage(anyhow!("{}: S1 is undefined or was not computed", path.display()))
        })?;
        let q = report
            .quantifier
            .map(|q| q.code().to_string())
            .ok_or_else(|| usage(anyhow!("{}: report names no quantifier", path.display())))?;
        let row = match report.metadata.get("model_type") {
            Some(tag) => format!("{tag}/{q}"),
            None => q,
        };
        let group = args.group_by.iter().map(|k| group_key(&report, k)).collect();
        inputs.push(RankInput { row, group, s1 });
    }

    let table = rank_order(&inputs).map_err(usage)?;
    print!("{}", table.render());
    if let Some(out) = &args.out {
        let csv = io::rank_table_to_csv(&table).map_err(internal)?;
        io::write_atomic(out, csv.as_bytes()).map_err(write_failure)?;
    }
    Ok(())
}

fn row_value(dataset: &Dataset, key: &str, index: usize) -> Result<i64, Failure> {
    match dataset.metadata.get(key) {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("metadata `{key}` = `{v}` is not an integer"))),
        None => Ok(index as i64 + 1),
    }
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let mut manifest = RunManifest::new("sweep");
    manifest.inputs = args.records.iter().map(|p| display(p)).collect();
    manifest.quantifiers = vec![args.quantifier];
    manifest.epsilons = vec![args.epsilon];
    manifest.betas = vec![1.0];
    manifest.mode = Some(args.mode);
    manifest.output = Some(display(&args.out));
    manifest
        .flags
        .insert("sizes".into(), format!("{:?}", args.sizes.0));
    args.rule.record(&mut manifest);
    check_manifest(&manifest)?;

    let options = EvaluationOptions {
        rule: args.rule.rule(),
        ..EvaluationOptions::default()
    };
    let rows = args
        .records
        .par_iter()
        .enumerate()
        .map(|(index, path)| {
            let dataset = read_dataset(path)?;
            let row = row_value(&dataset, &args.row_key, index)?;
            let sweep = sample_size_sweep(
                &dataset,
                args.quantifier,
                args.epsilon,
                &args.sizes.0,
                args.mode,
                &options,
            )
            .with_context(|| format!("sweeping {}", path.display()))
            .map_err(usage)?;
            Ok((row, sweep))
        })
        .collect::<Result<Vec<_>, Failure>>()?;

    let mut sorted = rows.clone();
    sorted.sort_by_key(|(row, _)| *row);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(usage(anyhow!(
            "two record files share the same `{}` value",
            args.row_key
        )));
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(internal)?;
    let axis1: Vec<i64> = sorted.iter().map(|(r, _)| *r).collect();
    let axis2: Vec<i64> = args.sizes.0.iter().map(|&s| s as i64).collect();
    type Pick = fn(&uqsup_core::analysis::SweepPoint) -> Option<f64>;
    let metrics: [(&str, Pick); 3] = [
        ("supervised_objective", |p| p.supervised_objective.value()),
        ("acceptance_rate", |p| p.acceptance_rate.value()),
        ("s1", |p| p.s1.value()),
    ];
    for (name, pick) in metrics {
        let values = sorted
            .iter()
            .map(|(_, sweep)| sweep.values().map(pick).collect())
            .collect();
        let mut grid = SweepGrid::new(
            args.row_key.clone(),
            axis1.clone(),
            "samples",
            axis2.clone(),
            values,
        )
        .map_err(internal)?;
        grid.metadata.insert("metric".into(), name.into());
        grid.metadata
            .insert("quantifier".into(), args.quantifier.code().into());
        grid.metadata
            .insert("epsilon".into(), args.epsilon.to_string());
        grid.metadata.insert("mode".into(), args.mode.to_string());
        io::write_grid(&grid, &args.out.join(format!("{name}.csv"))).map_err(write_failure)?;
    }

    let points: BTreeMap<i64, _> = sorted.into_iter().collect();
    let summary = serde_json::json!({ "manifest": manifest, "points": points });
    let text = serde_json::to_string_pretty(&summary).map_err(internal)? + "\n";
    io::write_atomic(&args.out.join("sweep.json"), text.as_bytes()).map_err(write_failure)?;

    println!("{} | size | ACC\u{0304} | \u{0394}_u | S\u{2081}", args.row_key);
    for (row, sweep) in &points {
        for (size, p) in sweep {
            println!(
                "{row} | {size} | {} | {} | {}",
                p.supervised_objective.format(4),
                p.acceptance_rate.format(4),
                p.s1.format(4)
            );
        }
    }
    Ok(())
}

fn grid_inputs(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut grids: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".csv") && !name.ends_with(".mean.csv") && !name.ends_with(".std.csv")
        })
        .collect();
    grids.sort();
    if grids.is_empty() {
        return Err(usage(anyhow!("no grid CSV files in {}", path.display())));
    }
    Ok(grids)
}

fn cmd_sensitivity(args: SensitivityArgs) -> CmdResult {
    let inputs = grid_inputs(&args.grid_dir)?;
    let mut manifest = RunManifest::new("sensitivity");
    manifest.inputs = inputs.iter().map(|p| display(p)).collect();
    manifest.output = Some(display(&args.out));
    manifest.flags.insert("window".into(), args.window.to_string());
    let pairing = match args.pairing {
        PairingChoice::Mean => Pairing::NeighborhoodMean,
        PairingChoice::Raw => Pairing::Raw,
    };
    manifest.flags.insert(
        "pairing".into(),
        match pairing {
            Pairing::NeighborhoodMean => "mean",
            Pairing::Raw => "raw",
        }
        .into(),
    );
    check_manifest(&manifest)?;

    let results = inputs
        .par_iter()
        .map(|path| {
            let grid = io::read_grid(path).map_err(usage)?;
            let s = sensitivity(&grid, args.window, pairing)
                .with_context(|| format!("{}", path.display()))
                .map_err(usage)?;
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("grid")
                .to_string();
            Ok((stem, s))
        })
        .collect::<Result<Vec<(String, Sensitivity)>, Failure>>()?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))
        .map_err(internal)?;
    let mut correlations = BTreeMap::new();
    for (stem, s) in &results {
        for (kind, grid) in [("mean", &s.mean), ("std", &s.std)] {
            io::write_grid(grid, &args.out.join(format!("{stem}.{kind}.csv")))
                .map_err(write_failure)?;
            io::write_atomic(
                &args.out.join(format!("{stem}.{kind}.pgm")),
                io::grid_to_pgm(grid).as_bytes(),
            )
            .map_err(write_failure)?;
        }
        match &s.correlation {
            Ok(c) => println!("{stem}: r = {:.4}, p = {:.4e}, n = {}", c.r, c.p_value, c.n),
            Err(reason) => println!("{stem}: r undefined ({reason})"),
        }
        correlations.insert(stem.clone(), &s.correlation);
    }
    let summary = serde_json::json!({ "manifest": manifest, "correlations": correlations });
    let text = serde_json::to_string_pretty(&summary).map_err(internal)? + "\n";
    io::write_atomic(&args.out.join("sensitivity.json"), text.as_bytes())
        .map_err(write_failure)?;
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("UQSUP_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(anyhow!("UQSUP_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(internal)
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Validate { records, tolerance } => cmd_validate(records, tolerance),
        Command::Quantify(args) => cmd_quantify(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

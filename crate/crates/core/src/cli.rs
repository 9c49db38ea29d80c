//! Command-line surface: `generate`, `detect`, `evaluate`, `bench`, `tradeoff`.
//!
//! Exit codes: 0 success, 2 invalid input or arguments, 3 runtime failure.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::aggregate::segment_summary_table;
use crate::detect::Detector;
use crate::evaluate::{self, Granularity, RunSummary};
use crate::ingest::{self, write_records_csv, write_segments_csv};
use crate::model::{build_graph, ConfusionMatrix, CongestionParams};
use crate::outputs;
use crate::parallel::{self, BenchConfig, Pipeline, PipelineError, RunStats};
use crate::strategy::StrategyRegistry;
use crate::synth::{self, DaySelector, PlantedEpisode, RoadSpec, ScenarioError, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Invalid(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "congestion",
    version,
    about = "Freeway congestion and recurrent congestion detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted congestion from a TOML scenario.
    Generate(GenerateArgs),
    /// Detect congestion and recurrent congestion.
    Detect(DetectArgs),
    /// Score detected masks against a truth file.
    Evaluate(EvaluateArgs),
    /// Time ingest and detection on growing synthetic inputs.
    Bench(BenchArgs),
    /// Tabulate processing time, cost and accuracy across runs.
    Tradeoff(TradeoffArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Scenario TOML file.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    /// Flat `key = value` parameter file; defaults apply when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Currency per worker-hour for the run cost estimate.
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of a `detect` run.
    #[arg(long)]
    pub detected: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value = "hour")]
    pub granularity: String,
    /// Where to write the report; defaults to the detected directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "detected")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Day multipliers, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub sizes: Vec<u32>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub segments: u32,
    /// Days at size 1.
    #[arg(long, default_value_t = 7)]
    pub days: u32,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 2018)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    /// `label,wall_seconds,workers[,accuracy]`; repeat per run, fastest first.
    #[arg(long = "run", required = true)]
    pub runs: Vec<String>,
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses arguments, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&args),
        Command::Detect(args) => cmd_detect(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Tradeoff(args) => cmd_tradeoff(&args),
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| invalid(format!("{what} {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| runtime(format!("writing {}: {e}", path.display()))
}

/// 1-based line of `field` (`days`, `roads[1].name`, ...) in scenario TOML text.
fn anchor_line(text: &str, field: &str) -> Option<usize> {
    let (table, index, key) = match field.split_once('.') {
        Some((head, key)) => {
            let (table, idx) = head.split_once('[')?;
            (
                Some(table),
                idx.trim_end_matches(']').parse::<usize>().ok()?,
                key,
            )
        }
        None => (None, 0, field),
    };
    let key_line = |line: &str| {
        line.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    };
    let mut in_target = table.is_none();
    let mut seen = 0usize;
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            in_target = match table {
                Some(t) if trimmed == format!("[[{t}]]") => {
                    seen += 1;
                    seen == index + 1
                }
                _ => false,
            };
            continue;
        }
        if in_target && key_line(line) {
            return Some(i + 1);
        }
    }
    None
}

fn scenario_error(text: &str, path: &Path, err: ScenarioError) -> CliError {
    let ScenarioError::Invalid { field, .. } = &err;
    match anchor_line(text, field) {
        Some(line) => invalid(format!(
            "{}:{line}: invalid scenario: {err}",
            path.display()
        )),
        None => invalid(format!("{}: invalid scenario: {err}", path.display())),
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let text = read_text(&args.spec, "cannot read scenario")?;
    let mut spec: ScenarioSpec =
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let corpus = synth::generate(&spec).map_err(|e| scenario_error(&text, &args.spec, e))?;

    ensure_dir(&args.out)?;
    let records_path = args.out.join("records.csv");
    write_records_csv(create(&records_path)?, &corpus.records).map_err(io_err(&records_path))?;
    let segments_path = args.out.join("segments.csv");
    write_segments_csv(create(&segments_path)?, &corpus.segments)
        .map_err(io_err(&segments_path))?;
    let truth_path = args.out.join("truth.csv");
    synth::write_truth_csv(create(&truth_path)?, &corpus.truth).map_err(io_err(&truth_path))?;
    let echo = toml::to_string(&spec).map_err(runtime)?;
    write_file(&args.out.join("scenario.toml"), &echo)?;

    println!(
        "generated {} records over {} segments x {} days ({} planted cells, {} overlapping)",
        corpus.records.len(),
        corpus.segments.len(),
        spec.days,
        corpus
            .truth
            .values()
            .map(|m| m.count_ones() as u64)
            .sum::<u64>(),
        corpus.overlap_warnings
    );
    Ok(())
}

pub fn cmd_detect(args: &DetectArgs) -> Result<(), CliError> {
    if args.workers == 0 {
        return Err(invalid("--workers must be at least 1"));
    }
    if !(args.rate >= 0.0 && args.rate.is_finite()) {
        return Err(invalid("--rate must be >= 0"));
    }
    let params = match &args.params {
        Some(path) => CongestionParams::from_kv_str(&read_text(path, "cannot read params")?)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        None => CongestionParams::default(),
    };
    let detector = Detector::new(params.clone(), StrategyRegistry::builtin()).map_err(invalid)?;

    let segments_file = File::open(&args.segments).map_err(|e| {
        invalid(format!(
            "cannot read segments {}: {e}",
            args.segments.display()
        ))
    })?;
    let segments = ingest::parse_segments(BufReader::new(segments_file))
        .map_err(|e| invalid(format!("{}: {e}", args.segments.display())))?;
    let graph =
        build_graph(segments).map_err(|e| invalid(format!("{}: {e}", args.segments.display())))?;

    let records_file = File::open(&args.records).map_err(|e| {
        invalid(format!(
            "cannot read records {}: {e}",
            args.records.display()
        ))
    })?;
    let ingested = ingest::ingest(BufReader::new(records_file), &params)
        .map_err(|e| invalid(format!("{}: {e}", args.records.display())))?;

    let profiles_for_days = ingested.profiles.clone();
    let partitions = parallel::partition_profiles(ingested.profiles, &graph, args.workers * 4)
        .map_err(invalid)?;
    let (results, mut stats) = Pipeline::new(detector)
        .workers(args.workers)
        .rate_per_node_hour(args.rate)
        .run(&partitions)
        .map_err(|e| match e {
            PipelineError::Worker { .. } => runtime(e),
            other => invalid(other),
        })?;
    stats.bytes_ingested = ingested.bytes_read;
    let summary = segment_summary_table(&results, &graph).map_err(invalid)?;

    ensure_dir(&args.out)?;
    let path = args.out.join("masks.csv");
    outputs::write_masks_csv(create(&path)?, &results).map_err(io_err(&path))?;
    let path = args.out.join("rc_profiles.csv");
    outputs::write_rc_csv(create(&path)?, &results).map_err(io_err(&path))?;
    let path = args.out.join("days.csv");
    outputs::write_days_csv(create(&path)?, &results, &profiles_for_days).map_err(io_err(&path))?;
    write_file(&args.out.join("summary.csv"), &summary.to_csv())?;
    write_file(&args.out.join("params.txt"), &params.to_kv_string())?;
    write_file(
        &args.out.join("ingest_report.txt"),
        &ingested.report.to_kv_string(),
    )?;
    write_file(&args.out.join("run_stats.txt"), &stats.to_kv_string())?;

    let totals = summary.totals();
    println!(
        "detected {} segments in {:.3}s with {} workers; {} records read, {} rejected; total RC hours {}",
        stats.segments_processed,
        stats.wall_time_seconds,
        stats.worker_count,
        ingested.report.records_read,
        ingested.report.records_rejected,
        totals.rc_hours
    );
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let granularity: Granularity = args.granularity.parse().map_err(invalid)?;
    let days_path = args.detected.join("days.csv");
    if !days_path.is_file() {
        return Err(invalid(format!(
            "{} holds no detection output (missing days.csv)",
            args.detected.display()
        )));
    }
    let universe = outputs::parse_days_csv(&read_text(&days_path, "cannot read")?)
        .map_err(|e| invalid(format!("{}: {e}", days_path.display())))?;
    if universe.is_empty() {
        return Err(invalid(format!(
            "{} lists no segment-days",
            days_path.display()
        )));
    }
    let masks_path = args.detected.join("masks.csv");
    let detected = outputs::parse_masks_csv(&read_text(&masks_path, "cannot read")?)
        .map_err(|e| invalid(format!("{}: {e}", masks_path.display())))?;
    let detected = evaluate::labels_over_universe(&universe, detected)
        .map_err(|e| invalid(format!("{}: {e}", masks_path.display())))?;

    let truth_file = File::open(&args.truth)
        .map_err(|e| invalid(format!("cannot read truth {}: {e}", args.truth.display())))?;
    let truth = evaluate::parse_truth_csv(BufReader::new(truth_file))
        .map_err(|e| invalid(format!("{}: {e}", args.truth.display())))?;
    let reference = evaluate::labels_over_universe(&universe, truth)
        .map_err(|e| invalid(format!("{}: {e}", args.truth.display())))?;

    let cm = evaluate::confusion(&detected, &reference, granularity).map_err(invalid)?;
    let stats = match fs::read_to_string(args.detected.join("run_stats.txt")) {
        Ok(text) => RunStats::from_kv_str(&text).map_err(invalid)?,
        Err(_) => RunStats::default(),
    };
    let report = evaluate::tradeoff_report(&[RunSummary {
        label: args.label.clone(),
        stats,
        confusion: cm,
    }]);

    let out_dir = args.out.as_ref().unwrap_or(&args.detected);
    ensure_dir(out_dir)?;
    write_file(
        &out_dir.join(format!("evaluation_{}.csv", granularity.as_str())),
        &report.report_csv(),
    )?;
    write_file(
        &out_dir.join(format!("confusion_{}.csv", granularity.as_str())),
        &format!("tp,tn,fp,fn\n{},{},{},{}\n", cm.tp, cm.tn, cm.fp, cm.fn_),
    )?;
    println!(
        "granularity={} tp={} tn={} fp={} fn={} accuracy={}",
        granularity.as_str(),
        cm.tp,
        cm.tn,
        cm.fp,
        cm.fn_,
        cm.accuracy()
            .map_or("n/a".to_string(), |a| format!("{a:.6}"))
    );
    Ok(())
}

/// Scenario used by `bench`: one road, a weekday morning episode on the
/// first half of the segments, 3 mph noise.
pub fn bench_scenario(segments: u32, days: u32, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        start_date: chrono::NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
        days,
        free_flow_mph: 65.0,
        noise_sigma_mph: 3.0,
        dropout_prob: 0.0,
        roads: vec![RoadSpec {
            name: "I-35".into(),
            segment_count: segments,
            length_miles: 0.5,
        }],
        episodes: vec![PlantedEpisode {
            road: None,
            segment_range: [0, segments.saturating_sub(1) / 2],
            minute_range: [420, 540],
            days: DaySelector::Weekdays,
            congested_speed_mph: 39.0,
        }],
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.segments == 0 || args.days == 0 {
        return Err(invalid("--segments and --days must be at least 1"));
    }
    let config = BenchConfig {
        base: bench_scenario(args.segments, args.days, args.seed),
        workers: args.workers,
        repetitions: args.repetitions,
        params: CongestionParams::default(),
    };
    let rows = parallel::scaling_benchmark(&args.sizes, &config).map_err(|e| match e {
        PipelineError::BadSizes(_) | PipelineError::NoWorkers => invalid(e),
        other => runtime(other),
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(&args.out, &parallel::bench_csv(&rows))?;
    for row in &rows {
        println!("{} bytes: {:.4}s", row.input_bytes, row.wall_time_seconds);
    }
    Ok(())
}

fn parse_run(spec: &str, rate: f64) -> Result<RunSummary, CliError> {
    let fields: Vec<&str> = spec.split(',').map(str::trim).collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(invalid(format!(
            "--run `{spec}`: expected label,wall_seconds,workers[,accuracy]"
        )));
    }
    let seconds: f64 = fields[1]
        .parse()
        .ok()
        .filter(|s: &f64| *s >= 0.0)
        .ok_or_else(|| invalid(format!("--run `{spec}`: bad wall_seconds")))?;
    let workers: usize = fields[2]
        .parse()
        .map_err(|_| invalid(format!("--run `{spec}`: bad workers")))?;
    let mut stats = RunStats {
        wall_time_seconds: seconds,
        worker_count: workers,
        ..Default::default()
    };
    stats.estimated_cost = parallel::estimate_cost(&stats, rate);
    // An accuracy is carried as a confusion matrix over 10^6 cells.
    let confusion = match fields.get(3) {
        Some(acc) => {
            let acc: f64 = acc
                .parse()
                .ok()
                .filter(|a| (0.0..=1.0).contains(a))
                .ok_or_else(|| invalid(format!("--run `{spec}`: accuracy must be in [0, 1]")))?;
            let correct = (acc * 1e6).round() as u64;
            ConfusionMatrix {
                tp: correct,
                tn: 0,
                fp: 1_000_000 - correct,
                fn_: 0,
            }
        }
        None => ConfusionMatrix::default(),
    };
    Ok(RunSummary {
        label: fields[0].to_string(),
        stats,
        confusion,
    })
}

pub fn cmd_tradeoff(args: &TradeoffArgs) -> Result<(), CliError> {
    if !(args.rate >= 0.0 && args.rate.is_finite()) {
        return Err(invalid("--rate must be >= 0"));
    }
    let runs = args
        .runs
        .iter()
        .map(|r| parse_run(r, args.rate))
        .collect::<Result<Vec<_>, _>>()?;
    let report = evaluate::tradeoff_report(&runs);
    ensure_dir(&args.out)?;
    write_file(&args.out.join("tradeoff.csv"), &report.report_csv())?;
    write_file(&args.out.join("pairwise.csv"), &report.pairwise_csv())?;
    let mut stdout = std::io::stdout().lock();
    for p in &report.pairwise {
        let _ = writeln!(
            stdout,
            "{} vs {}: {}",
            p.label_a,
            p.label_b,
            p.time_reduction_pct
                .map_or("n/a".to_string(), |v| format!("{v:.2}% less time"))
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCENARIO: &str = "seed = 1\ndays = 0\nfree_flow_mph = 65.0\n\n[[roads]]\nname = \"I-35\"\nsegment_count = 2\nlength_miles = 0.5\n\n[[roads]]\nname = \"I-80\"\nsegment_count = 0\nlength_miles = 0.5\n";

    #[test]
    fn anchors_top_level_and_table_keys() {
        assert_eq!(anchor_line(SCENARIO, "days"), Some(2));
        assert_eq!(anchor_line(SCENARIO, "roads[1].segment_count"), Some(12));
        assert_eq!(anchor_line(SCENARIO, "roads[0].segment_count"), Some(7));
        assert_eq!(anchor_line(SCENARIO, "episodes[0].road"), None);
    }

    #[test]
    fn run_spec_parsing() {
        let run = parse_run("spark,600,64,0.9", 0.5).unwrap();
        assert_eq!(run.stats.worker_count, 64);
        assert!((run.stats.estimated_cost - 600.0 / 3600.0 * 64.0 * 0.5).abs() < 1e-12);
        assert!((run.confusion.accuracy().unwrap() - 0.9).abs() < 1e-12);
        assert!(parse_run("x,1", 0.0).is_err());
        assert!(parse_run("x,1,1,1.5", 0.0).is_err());
    }

    #[test]
    fn bad_flags_exit_two() {
        assert_eq!(main_with_args(["congestion", "detect"]), EXIT_INVALID);
        assert_eq!(main_with_args(["congestion", "frobnicate"]), EXIT_INVALID);
    }
}

//! Command-line front end: fit a fairness calibrator from a score pool,
//! apply it to score files, audit fairness and accuracy before and after,
//! build bias-detection label sets, and run seeded synthetic benchmarks.
//!
//! Exit codes: 0 success, 2 bad input or I/O, 3 internal invariant failure.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairport::bias::{compute_db, export_task_dataset, label_tasks};
use fairport::metrics::{audit, AuditReport};
use fairport::synth::{generate, run_experiment};
use fairport::{
    BiasError, FairCalibrator, JitterConfig, ScoreRecord, SplitFractions, SynthSpec, TaskConfig,
    TaskKind,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "fairport", version, about = "Fairness post-processing for classifier scores")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a calibrator from a CSV pool of (id, score, group) rows
    Fit(FitArgs),
    /// Append a fair_score column to a CSV of scores using a saved calibrator
    Transform(TransformArgs),
    /// Report fairness and accuracy metrics before and after calibration
    Audit(AuditArgs),
    /// Label a pool for bias-detection tasks and export it as CSV
    BiasLabels(BiasLabelsArgs),
    /// Generate synthetic score pools and run repeated benchmark experiments
    Synth(SynthArgs),
}

#[derive(Args)]
struct ColumnArgs {
    /// Name of the score column
    #[arg(long, default_value = "score")]
    score_col: String,
    /// Name of the group column
    #[arg(long, default_value = "group")]
    group_col: String,
    /// Name of the optional binary label column
    #[arg(long, default_value = "label")]
    label_col: String,
}

#[derive(Args)]
struct FitArgs {
    /// CSV pool to fit on
    #[arg(long)]
    input: PathBuf,
    /// Where to write the calibrator JSON
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
    /// Break score ties with uniform noise of this half-width before fitting
    #[arg(long)]
    jitter_eps: Option<f64>,
    /// Seed for the jitter noise (FAIRPORT_SEED overrides)
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TransformArgs {
    /// CSV of scores to transform
    #[arg(long)]
    input: PathBuf,
    /// Calibrator JSON produced by `fairport fit`
    #[arg(long)]
    calibrator: PathBuf,
    /// Where to write the CSV with the appended fair_score column
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
struct AuditArgs {
    /// CSV of scores to audit
    #[arg(long)]
    input: PathBuf,
    /// Calibrator to apply; fitted on the input itself when omitted
    #[arg(long)]
    calibrator: Option<PathBuf>,
    /// Decision threshold for hard accuracy
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
struct BiasLabelsArgs {
    /// CSV pool to label
    #[arg(long)]
    input: PathBuf,
    /// Calibrator to apply; fitted on the input itself when omitted
    #[arg(long)]
    calibrator: Option<PathBuf>,
    /// Which label set to build
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Quantile level for the bias-size and outlier thresholds
    #[arg(long)]
    alpha: Option<f64>,
    /// Where to write the labeled CSV
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    columns: ColumnArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON benchmark spec; exclusive with --group
    #[arg(long, conflicts_with_all = ["group", "with_labels"])]
    config: Option<PathBuf>,
    /// Inline group spec "LABEL:beta(A,B):SIZE" or "LABEL:gauss(MU,SIGMA):SIZE"; repeatable
    #[arg(long)]
    group: Vec<String>,
    /// Attach Bernoulli(score) outcome labels to generated records
    #[arg(long)]
    with_labels: bool,
    /// Generation seed (FAIRPORT_SEED overrides)
    #[arg(long)]
    seed: Option<u64>,
    /// Write one generated pool as CSV
    #[arg(long)]
    output: Option<PathBuf>,
    /// Run the repeated experiment and write its JSON summary here
    #[arg(long)]
    report: Option<PathBuf>,
    /// Repetitions for the experiment report
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Fraction of each group used to fit the calibrator
    #[arg(long, default_value_t = 0.16)]
    calib_frac: f64,
    /// Fraction of each group held out for evaluation
    #[arg(long, default_value_t = 0.20)]
    test_frac: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    /// Positive where the fair score is at or above the original
    Discrimination,
    /// Positive where |fair - original| reaches its pool alpha-quantile
    BiasSize,
    /// Positive where the squared gap reaches its pool alpha-quantile
    Outliers,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Discrimination => TaskKind::Discrimination,
            TaskArg::BiasSize => TaskKind::BiasSize,
            TaskArg::Outliers => TaskKind::Outliers,
        }
    }
}

enum CliError {
    /// Bad input data, arguments, or file access: exit 2.
    Input(String),
    /// A library invariant failed on valid input: exit 3.
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) => m,
        }
    }
}

macro_rules! input_error_from {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Input(e.to_string())
            }
        }
    )+};
}

input_error_from!(
    fairport::ProjectionError,
    fairport::SynthError,
    std::io::Error,
    csv::Error
);

impl From<BiasError> for CliError {
    fn from(e: BiasError) -> Self {
        match e {
            // The CLI always labels the records it just computed, so a
            // length mismatch can only come from a bug, not from the user.
            BiasError::LengthMismatch { .. } => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Fit(args) => run_fit(args),
        Cmd::Transform(args) => run_transform(args),
        Cmd::Audit(args) => run_audit(args),
        Cmd::BiasLabels(args) => run_bias_labels(args),
        Cmd::Synth(args) => run_synth(args),
    }
}

/// FAIRPORT_SEED trumps any --seed flag so batch jobs can re-seed a whole
/// pipeline without editing every invocation.
fn effective_seed(flag: Option<u64>) -> Result<Option<u64>, CliError> {
    match std::env::var("FAIRPORT_SEED") {
        Ok(raw) => raw
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Input(format!("FAIRPORT_SEED must be an unsigned integer, got \"{raw}\""))),
        Err(_) => Ok(flag),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Input(format!("cannot create temporary file in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

struct ParsedPool {
    headers: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
    records: Vec<ScoreRecord>,
    any_label_missing: bool,
}

/// Read a score CSV. The id column is always "id"; score, group, and label
/// column names are configurable. Errors carry 1-based file line numbers.
fn read_pool(path: &Path, columns: &ColumnArgs) -> Result<ParsedPool, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_idx = find("id")
        .ok_or_else(|| CliError::Input(format!("{}: missing required column \"id\"", path.display())))?;
    let score_idx = find(&columns.score_col).ok_or_else(|| {
        CliError::Input(format!("{}: missing required column \"{}\"", path.display(), columns.score_col))
    })?;
    let group_idx = find(&columns.group_col).ok_or_else(|| {
        CliError::Input(format!("{}: missing required column \"{}\"", path.display(), columns.group_col))
    })?;
    let label_idx = find(&columns.label_col);

    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut seen_ids: BTreeMap<String, u64> = BTreeMap::new();
    let mut any_label_missing = false;
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i as u64 + 2, |p| p.line());
        let id = row.get(id_idx).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(CliError::Input(format!("line {line}: empty id")));
        }
        match seen_ids.entry(id.clone()) {
            Entry::Occupied(first) => {
                return Err(CliError::Input(format!(
                    "line {line}: duplicate id \"{id}\" (first seen on line {})",
                    first.get()
                )));
            }
            Entry::Vacant(slot) => {
                slot.insert(line);
            }
        }
        let raw_score = row.get(score_idx).unwrap_or("");
        let score: f64 = raw_score.parse().map_err(|_| {
            CliError::Input(format!("line {line}: score \"{raw_score}\" is not a number"))
        })?;
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            return Err(CliError::Input(format!(
                "line {line}: score {raw_score} is outside [0, 1]"
            )));
        }
        let group = row.get(group_idx).unwrap_or("").to_string();
        if group.is_empty() {
            return Err(CliError::Input(format!("line {line}: empty group")));
        }
        let mut record = ScoreRecord::new(id, score, group);
        match label_idx.map(|j| row.get(j).unwrap_or("")) {
            Some("1") => record = record.with_label(true),
            Some("0") => record = record.with_label(false),
            Some("") | None => any_label_missing = true,
            Some(other) => {
                return Err(CliError::Input(format!(
                    "line {line}: label \"{other}\" is not 0 or 1"
                )));
            }
        }
        rows.push(row);
        records.push(record);
    }
    Ok(ParsedPool { headers, rows, records, any_label_missing })
}

fn load_or_fit(
    calibrator: &Option<PathBuf>,
    records: &[ScoreRecord],
) -> Result<(FairCalibrator, String), CliError> {
    match calibrator {
        Some(path) => Ok((FairCalibrator::load(path)?, path.display().to_string())),
        None => Ok((FairCalibrator::fit(records)?, "fitted on input".to_string())),
    }
}

fn run_fit(args: FitArgs) -> Result<(), CliError> {
    let pool = read_pool(&args.input, &args.columns)?;
    let jitter = match args.jitter_eps {
        Some(epsilon) => {
            let seed = effective_seed(Some(args.seed))?.unwrap_or(args.seed);
            Some(JitterConfig { epsilon, seed })
        }
        None => None,
    };
    let c = match jitter {
        Some(j) => FairCalibrator::fit_with(&pool.records, Some(j))?,
        None => FairCalibrator::fit(&pool.records)?,
    };
    write_atomic(&args.output, format!("{}\n", c.to_json()).as_bytes())?;
    println!("fitted {} groups from {} records", c.group_count(), pool.records.len());
    for (label, g) in c.groups() {
        println!("  {label}: count={} weight={:.6}", g.count(), g.weight());
    }
    println!("saved calibrator to {}", args.output.display());
    Ok(())
}

fn run_transform(args: TransformArgs) -> Result<(), CliError> {
    let pool = read_pool(&args.input, &args.columns)?;
    if pool.headers.iter().any(|h| h == "fair_score") {
        return Err(CliError::Input(format!(
            "{}: input already has a fair_score column",
            args.input.display()
        )));
    }
    let c = FairCalibrator::load(&args.calibrator)?;
    let fair = c.transform_batch(&pool.records)?;

    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = pool.headers.iter().collect();
    header.push("fair_score");
    out.write_record(&header)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    for (row, f) in pool.rows.iter().zip(&fair) {
        let mut fields: Vec<String> = row.iter().map(str::to_string).collect();
        fields.push(f.to_string());
        out.write_record(&fields)
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&args.output, &bytes)?;
    println!("transformed {} records into {}", fair.len(), args.output.display());
    Ok(())
}

#[derive(Serialize)]
struct AuditDoc {
    format_version: u32,
    pre: AuditReport,
    post: AuditReport,
    meta: AuditMeta,
}

#[derive(Serialize)]
struct AuditMeta {
    threshold: f64,
    records: usize,
    groups: usize,
    calibrator: String,
    timing_ms: TimingMs,
}

#[derive(Serialize)]
struct TimingMs {
    fit: Option<f64>,
    transform: f64,
}

fn run_audit(args: AuditArgs) -> Result<(), CliError> {
    let pool = read_pool(&args.input, &args.columns)?;
    if pool.records.is_empty() {
        return Err(CliError::Input(format!("{}: no records to audit", args.input.display())));
    }
    let pre = audit(&pool.records, args.threshold);

    let fit_started = Instant::now();
    let (c, calibrator_desc) = load_or_fit(&args.calibrator, &pool.records)?;
    let fit_ms = args.calibrator.is_none().then(|| fit_started.elapsed().as_secs_f64() * 1e3);

    let transform_started = Instant::now();
    let fair = c.transform_batch(&pool.records)?;
    let transform_ms = transform_started.elapsed().as_secs_f64() * 1e3;

    let post_records: Vec<ScoreRecord> = pool
        .records
        .iter()
        .zip(&fair)
        .map(|(r, &s)| {
            let mut out = ScoreRecord::new(r.id.clone(), s, r.group.clone());
            if let Some(l) = r.label {
                out = out.with_label(l);
            }
            out
        })
        .collect();
    let post = audit(&post_records, args.threshold);

    if c.group_count() < 2 {
        eprintln!("warning: only one group present; unfairness is not defined");
    }
    if pool.any_label_missing {
        eprintln!("note: labels absent or incomplete; auc, risk, and hard accuracy are omitted");
    }

    print_audit_table(&pre, &post);
    let doc = AuditDoc {
        format_version: 1,
        pre,
        post,
        meta: AuditMeta {
            threshold: args.threshold,
            records: pool.records.len(),
            groups: c.group_count(),
            calibrator: calibrator_desc,
            timing_ms: TimingMs { fit: fit_ms, transform: transform_ms },
        },
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    match &args.report {
        Some(path) => {
            write_atomic(path, format!("{json}\n").as_bytes())?;
            eprintln!("wrote report to {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// Human-readable summary on stderr so stdout stays parseable JSON.
fn print_audit_table(pre: &AuditReport, post: &AuditReport) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    };
    eprintln!("{:<16}{:>10}{:>10}", "metric", "pre", "post");
    eprintln!("{:<16}{:>10}{:>10}", "unfairness", fmt(pre.unfairness), fmt(post.unfairness));
    eprintln!("{:<16}{:>10}{:>10}", "auc", fmt(pre.auc), fmt(post.auc));
    eprintln!("{:<16}{:>10}{:>10}", "risk", fmt(pre.risk), fmt(post.risk));
    eprintln!(
        "{:<16}{:>10}{:>10}",
        "hard_accuracy",
        fmt(pre.hard_accuracy),
        fmt(post.hard_accuracy)
    );
    for (group, w2) in &pre.w2 {
        eprintln!(
            "{:<16}{:>10}{:>10}",
            format!("w2[{group}]"),
            format!("{w2:.4}"),
            fmt(post.w2.get(group).copied())
        );
    }
}

fn run_bias_labels(args: BiasLabelsArgs) -> Result<(), CliError> {
    let pool = read_pool(&args.input, &args.columns)?;
    if pool.records.is_empty() {
        return Err(CliError::Input(format!("{}: no records to label", args.input.display())));
    }
    let (c, _) = load_or_fit(&args.calibrator, &pool.records)?;
    let records = compute_db(&c, &pool.records)?;
    let mut cfg = TaskConfig::new(args.task.into());
    if let Some(alpha) = args.alpha {
        cfg = cfg.with_alpha(alpha);
    }
    let task = label_tasks(&records, &cfg)?;

    let mut bytes = Vec::new();
    export_task_dataset(&records, &task, &mut bytes)?;
    write_atomic(&args.output, &bytes)?;

    let positives = task.labels.iter().filter(|&&l| l).count();
    let tau = task.tau.map_or("-".to_string(), |t| t.to_string());
    let kind = serde_json::to_string(&task.kind)
        .map_err(|e| CliError::Internal(e.to_string()))?
        .trim_matches('"')
        .to_string();
    println!(
        "task={} alpha={} tau={} positives={}/{} ({:.3})",
        kind,
        task.alpha,
        tau,
        positives,
        task.labels.len(),
        task.positive_fraction()
    );
    println!("wrote task dataset to {}", args.output.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthDoc {
    format_version: u32,
    #[serde(flatten)]
    summary: fairport::ExperimentSummary,
}

/// "a:beta(2,5):1000" or "a:gauss(0.5,0.1):1000".
fn parse_group_spec(raw: &str) -> Result<fairport::GroupSpec, CliError> {
    let bad = |why: &str| {
        CliError::Input(format!(
            "invalid --group \"{raw}\": {why}; expected LABEL:beta(A,B):SIZE or LABEL:gauss(MU,SIGMA):SIZE"
        ))
    };
    let mut parts = raw.splitn(3, ':');
    let label = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing label"))?;
    let dist_raw = parts.next().ok_or_else(|| bad("missing distribution"))?;
    let size_raw = parts.next().ok_or_else(|| bad("missing size"))?;
    let size: usize = size_raw.parse().map_err(|_| bad("size is not an integer"))?;

    let (name, params) = dist_raw
        .strip_suffix(')')
        .and_then(|s| s.split_once('('))
        .ok_or_else(|| bad("distribution must look like name(x,y)"))?;
    let (first, second) = params.split_once(',').ok_or_else(|| bad("expected two parameters"))?;
    let first: f64 = first.trim().parse().map_err(|_| bad("parameter is not a number"))?;
    let second: f64 = second.trim().parse().map_err(|_| bad("parameter is not a number"))?;
    let dist = match name {
        "beta" => fairport::ScoreDist::Beta { alpha: first, beta: second },
        "gauss" => fairport::ScoreDist::TruncGaussian { mu: first, sigma: second },
        other => return Err(bad(&format!("unknown distribution \"{other}\""))),
    };
    Ok(fairport::GroupSpec { label: label.to_string(), dist, size })
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.output.is_none() && args.report.is_none() {
        return Err(CliError::Input(
            "nothing to do: pass --output for a pool CSV, --report for an experiment summary, or both"
                .into(),
        ));
    }
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => {
            if args.group.is_empty() {
                return Err(CliError::Input("pass --config or at least one --group".into()));
            }
            SynthSpec {
                groups: args
                    .group
                    .iter()
                    .map(|g| parse_group_spec(g))
                    .collect::<Result<_, _>>()?,
                labels: args.with_labels,
                seed: 0,
            }
        }
    };
    if let Some(seed) = effective_seed(args.seed)? {
        spec.seed = seed;
    }

    if let Some(path) = &args.output {
        let pool = generate(&spec)?;
        let mut out = csv::Writer::from_writer(Vec::new());
        let header: &[&str] =
            if spec.labels { &["id", "score", "group", "label"] } else { &["id", "score", "group"] };
        out.write_record(header).map_err(|e| CliError::Internal(e.to_string()))?;
        for r in &pool {
            let mut fields = vec![r.id.clone(), r.score.to_string(), r.group.clone()];
            if spec.labels {
                fields.push(if r.label.unwrap_or(false) { "1" } else { "0" }.to_string());
            }
            out.write_record(&fields).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        let bytes = out.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(path, &bytes)?;
        println!("wrote {} records to {}", pool.len(), path.display());
    }

    if let Some(path) = &args.report {
        let split = SplitFractions { calib: args.calib_frac, test: args.test_frac };
        let summary = run_experiment(&spec, split, args.reps)?;
        let doc = SynthDoc { format_version: 1, summary };
        let json = serde_json::to_string_pretty(&doc)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        write_atomic(path, format!("{json}\n").as_bytes())?;
        println!("wrote experiment report to {} ({} repetitions)", path.display(), args.reps);
    }
    Ok(())
}

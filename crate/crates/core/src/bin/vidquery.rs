use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use vidquery::frameql::parse;
use vidquery::proxy::{label, LabeledSplit, ProxyModel, TrainConfig};
use vidquery::synthgen::{generate, ClassSpec, TraceSpec};
use vidquery::tracestore::{load_trace, resolve_tracks, write_trace, VideoTrace, DEFAULT_IOU_CUTOFF};
use vidquery::{Engine, EngineConfig, Error};

#[derive(Parser)]
#[command(name = "vidquery", version, about = "FrameQL queries over video detection traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Label the train and held-out ranges with the detector.
    Label(LabelArgs),
    /// Train a count proxy and save it.
    Train(TrainArgs),
    /// Run one FrameQL query and print its report.
    Query(QueryArgs),
    /// Summarize a saved report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON trace spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    /// `name:occupancy:mean_duration[:mean_extra[:red_fraction]]`, repeatable.
    #[arg(long = "class")]
    classes: Vec<String>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArg {
    /// Train and held-out fractions; the rest is the test range.
    #[arg(long, default_value = "0.25,0.25")]
    split: String,
}

impl SplitArg {
    fn resolve(&self, n: usize) -> Result<LabeledSplit, Error> {
        let parts: Vec<f64> = self
            .split
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::Unsupported(format!("bad --split `{}`", self.split)))?;
        match parts.as_slice() {
            [a, b] => Ok(LabeledSplit::fractions(n, *a, *b)?),
            _ => Err(Error::Unsupported(format!("--split takes two fractions, got `{}`", self.split))),
        }
    }
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    trace: PathBuf,
    #[command(flatten)]
    split: SplitArg,
    /// Comma-separated classes.
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    #[arg(long, default_value_t = 1)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, conflicts_with = "sql_file", required_unless_present = "sql_file")]
    sql: Option<String>,
    #[arg(long)]
    sql_file: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    split: SplitArg,
    /// `key=value` override: rewrite_threshold, bootstrap_B, stride_min, epochs, step.
    #[arg(long = "config")]
    config: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report file.
    path: PathBuf,
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(Error::from)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n"))?,
        None => writeln!(io::stdout().lock(), "{text}")?,
    }
    Ok(())
}

fn load(path: &Path) -> Result<VideoTrace, Error> {
    Ok(load_trace(path)?)
}

fn class_spec(arg: &str) -> Result<ClassSpec, Error> {
    let bad = || Error::Unsupported(format!("bad --class `{arg}`; expected name:occupancy:duration[:extra[:red]]"));
    let parts: Vec<&str> = arg.split(':').collect();
    if !(3..=5).contains(&parts.len()) {
        return Err(bad());
    }
    let num = |i: usize| parts[i].parse::<f64>().map_err(|_| bad());
    let mut c = ClassSpec::new(parts[0], num(1)?, num(2)?);
    if parts.len() > 3 && !parts[3].is_empty() {
        c = c.extra(num(3)?);
    }
    if parts.len() > 4 && !parts[4].is_empty() {
        c = c.red(num(4)?);
    }
    Ok(c)
}

fn gen(a: GenArgs) -> Result<(), Error> {
    let mut spec = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| Error::Format { what: "trace spec", message: e.to_string() })?,
        None => TraceSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.frames {
        spec.n_frames = n;
    }
    if !a.classes.is_empty() {
        spec.classes = a.classes.iter().map(|c| class_spec(c)).collect::<Result<_, _>>()?;
    }
    if let Some(s) = a.snr {
        spec.feature_snr = s;
    }
    if let Some(n) = a.name {
        spec.name = n;
    }
    let trace = generate(&spec)?;
    match &a.out {
        Some(p) => write_trace(&trace, BufWriter::new(fs::File::create(p)?))?,
        None => write_trace(&trace, BufWriter::new(io::stdout().lock()))?,
    }
    Ok(())
}

fn label_cmd(a: LabelArgs) -> Result<(), Error> {
    let trace = resolve_tracks(load(&a.trace)?, DEFAULT_IOU_CUTOFF);
    let split = a.split.resolve(trace.len())?;
    let labels = label(&trace, &split)?;
    let text = serde_json::to_string(&labels).map_err(|e| Error::Format { what: "labels", message: e.to_string() })?;
    emit(a.out.as_deref(), &text)?;
    eprintln!(
        "labeled {} frames, {} detector calls, {:.3} cost units",
        labels.len(),
        labels.offline_oracle_calls,
        labels.offline_cost_units
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), Error> {
    let trace = load(&a.trace)?;
    let split = a.split.resolve(trace.len())?;
    let labels = label(&trace, &split)?;
    let cfg = TrainConfig { epochs: a.epochs, step_size: a.step, seed: a.seed, ..TrainConfig::default() };
    let model = ProxyModel::train(&trace, &labels, &a.classes, &cfg)?;
    for c in &model.refused {
        eprintln!("no training examples for `{c}`; class skipped");
    }
    emit(a.out.as_deref(), &model.to_json())
}

fn query_cmd(a: QueryArgs) -> Result<(), Error> {
    let sql = match (&a.sql, &a.sql_file) {
        (Some(s), _) => s.clone(),
        (None, Some(p)) => read_text(p)?,
        (None, None) => unreachable!("clap requires one of --sql and --sql-file"),
    };
    let query = parse(&sql)?;
    let mut config = EngineConfig::default();
    if let Some(s) = a.seed {
        config.seed = s;
    }
    for kv in &a.config {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| Error::Unsupported(format!("--config expects key=value, got `{kv}`")))?;
        config.set(k.trim(), v.trim())?;
    }
    let trace = load(&a.trace)?;
    let split = a.split.resolve(trace.len())?;
    let engine = Engine::new(trace, split, config)?;
    let report = engine.run(&query)?;
    emit(a.out.as_deref(), &report.to_json())
}

fn report_cmd(a: ReportArgs) -> Result<(), Error> {
    let text = read_text(&a.path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format { what: "report", message: e.to_string() })?;
    let field = |k: &str| v.get(k).cloned().unwrap_or(serde_json::Value::Null);
    println!("plan          {}", field("plan").as_str().unwrap_or("?"));
    println!("oracle calls  {}", field("oracle_calls"));
    println!("cost units    {}", field("cost_units"));
    println!("proxy cost    {}", field("proxy_cost_units"));
    println!("offline cost  {}", field("offline_cost_units"));
    let answer = field("answer");
    let summary = if let Some(ts) = answer.get("timestamps").and_then(|t| t.as_array()) {
        json!({ "timestamps": ts.len() })
    } else if let Some(rows) = answer.get("rows").and_then(|r| r.as_array()) {
        json!({ "rows": rows.len() })
    } else {
        answer
    };
    println!("answer        {summary}");
    if let Some(q) = field("query").as_str() {
        println!("query\n{q}");
    }
    Ok(())
}

/// 1 for query errors, 2 for I/O and file-format errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Trace(_) | Error::Format { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Label(a) => label_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Query(a) => query_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

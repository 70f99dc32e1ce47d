use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pipesketch::trace::{read_trace_file, write_trace};
use pipesketch::{
    generate, HashFamily, Metric, Pid, Pipeline, ResourceEvent, SketchConfig, WorkloadKind,
    WorkloadSpec,
};

mod report;

/// Exit status for usage errors (bad flags or values).
const EXIT_USAGE: u8 = 2;
const EXIT_FAILURE: u8 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "pipesketch",
    version,
    about = "HashPipe top-k accounting over replayed resource traces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic JSONL trace.
    Generate(GenerateArgs),
    /// Replay traces through the memory and cpu trackers and print a JSON report.
    Replay(ReplayArgs),
    /// Top-k precision of both pipelines against the exact oracle.
    Eval(EvalArgs),
    /// Sample a metric at a fixed replay-clock cadence.
    Snapshot(SnapshotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    ZipfAlloc,
    ForkBomb,
    CyclicTrain,
    SchedMix,
}

impl From<KindArg> for WorkloadKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::ZipfAlloc => WorkloadKind::ZipfAlloc,
            KindArg::ForkBomb => WorkloadKind::ForkBomb,
            KindArg::CyclicTrain => WorkloadKind::CyclicTrain,
            KindArg::SchedMix => WorkloadKind::SchedMix,
        }
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u32).range(1..))]
    pids: u32,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    events: u64,
    #[arg(long, default_value_t = 1.2)]
    zipf_s: f64,
    #[arg(long, default_value_t = 0.5)]
    free_ratio: f64,
    #[arg(long, default_value_t = 1_000_000_000)]
    period_ns: u64,
    #[arg(long, env = "PIPESKETCH_SEED", default_value_t = 42)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HashArg {
    Seeded,
    Identity,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Pipeline stages per sketch.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    stages: u64,
    /// Slots per stage.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    slots: u64,
    /// Seed for the stage hash parameters.
    #[arg(long, env = "PIPESKETCH_SEED", default_value_t = 42)]
    seed: u64,
    /// `identity` uses a = 1, b = 0 on every stage.
    #[arg(long, value_enum, default_value_t = HashArg::Seeded)]
    hash: HashArg,
    /// Pids tracked exactly, outside the sketches.
    #[arg(long, value_delimiter = ',')]
    priority: Vec<Pid>,
    /// Reject unknown fields and abort on malformed lines.
    #[arg(long)]
    strict: bool,
}

impl RunArgs {
    fn sketch_config(&self) -> SketchConfig {
        SketchConfig {
            stages: self.stages as usize,
            slots: self.slots as usize,
            seed: self.seed,
            hash: match self.hash {
                HashArg::Seeded => HashFamily::Seeded,
                HashArg::Identity => HashFamily::Identity,
            },
        }
    }

    fn priority_set(&self) -> BTreeSet<Pid> {
        self.priority.iter().copied().collect()
    }
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
    /// Length of the reported top-k lists.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Include every stage's slot contents in the report.
    #[arg(long)]
    dump_slots: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,30")]
    ks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Topk,
    PidUsage,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PipelineArg {
    Memory,
    Cpu,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Memory => Pipeline::Memory,
            PipelineArg::Cpu => Pipeline::Cpu,
        }
    }
}

#[derive(Debug, Args)]
struct SnapshotArgs {
    trace: PathBuf,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    interval_ns: u64,
    #[arg(long, value_enum, default_value_t = MetricArg::Topk)]
    metric: MetricArg,
    #[arg(long, value_enum, default_value_t = PipelineArg::Memory)]
    pipeline: PipelineArg,
    /// Pid to follow with `--metric pid-usage`.
    #[arg(long, required_if_eq("metric", "pid-usage"))]
    pid: Option<Pid>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<pipesketch::Error> for CliError {
    fn from(e: pipesketch::Error) -> Self {
        match e {
            pipesketch::Error::Config(_) | pipesketch::Error::Argument(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Snapshot(args) => cmd_snapshot(args),
    }
}

fn open_output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

struct LoadedTraces {
    events: Vec<ResourceEvent>,
    skipped_lines: u64,
}

fn load_traces(paths: &[PathBuf], strict: bool) -> Result<LoadedTraces, CliError> {
    let mut loaded = LoadedTraces {
        events: Vec::new(),
        skipped_lines: 0,
    };
    for path in paths {
        let parsed = read_trace_file(path, strict).map_err(|e| {
            CliError::Runtime(anyhow::Error::new(e).context(format!("reading {}", path.display())))
        })?;
        loaded.events.extend(parsed.events);
        loaded.skipped_lines += parsed.skipped_lines;
    }
    Ok(loaded)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let spec = WorkloadSpec {
        kind: args.kind.into(),
        pid_count: args.pids,
        event_count: args.events,
        zipf_s: args.zipf_s,
        free_ratio: args.free_ratio,
        period_ns: args.period_ns,
        seed: args.seed,
    };
    let events = generate(&spec)?;
    let file = File::create(&args.output)?;
    write_trace(&events, BufWriter::new(file))?;
    let bytes = std::fs::metadata(&args.output)?.len();
    println!(
        "wrote {} events ({} bytes) to {}",
        events.len(),
        bytes,
        args.output.display()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let loaded = load_traces(&args.traces, args.run.strict)?;
    let report = report::replay_report(
        &loaded.events,
        loaded.skipped_lines,
        &args.run.sketch_config(),
        &args.run.priority_set(),
        args.k as usize,
        args.dump_slots,
    )?;
    let mut out = open_output(args.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(anyhow::Error::from)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    if args.ks.is_empty() {
        return Err(CliError::Usage("--ks needs at least one value".into()));
    }
    if args.ks.contains(&0) {
        return Err(CliError::Usage("every k must be at least 1".into()));
    }
    let loaded = load_traces(&args.traces, args.run.strict)?;
    let table = report::precision_table(
        &loaded.events,
        &args.run.sketch_config(),
        &args.run.priority_set(),
        &args.ks,
    )?;
    let mut out = open_output(args.output.as_deref())?;
    match args.format {
        Format::Csv => report::write_precision_csv(&table, &mut out)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &table).map_err(anyhow::Error::from)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_snapshot(args: SnapshotArgs) -> Result<(), CliError> {
    let pipeline = args.pipeline.into();
    let metric = match args.metric {
        MetricArg::Topk => Metric::TopK {
            pipeline,
            k: args.k as usize,
        },
        MetricArg::PidUsage => Metric::PidUsage {
            pipeline,
            pid: args
                .pid
                .ok_or_else(|| CliError::Usage("--pid is required for pid-usage".into()))?,
        },
    };
    let loaded = load_traces(std::slice::from_ref(&args.trace), args.run.strict)?;
    let series = pipesketch::snapshot_replay(
        &loaded.events,
        &args.run.sketch_config(),
        &args.run.priority_set(),
        args.interval_ns,
        metric,
    )?;
    let mut out = open_output(args.output.as_deref())?;
    report::write_series_csv(&series, &mut out)?;
    out.flush()?;
    Ok(())
}

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mpzch::experiments::{
    self, configure_threads_from_env, emit_report, run_churn_simulation, run_collision_grid,
    run_latency_bench, run_publish_roundtrip, ChurnParams, CsvSchema, Method, ReportFormat,
    WorkloadSpec, GRID_NUM_IDS, GRID_PROBES, GRID_TABLE_SIZES,
};
use mpzch::{Error, EvictionPolicy, Result, TtlPolicy};

#[derive(Parser, Debug)]
#[command(
    name = "mpzch",
    version,
    about = "Multi-probe zero-collision hashing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Collision rates over a grid of table sizes and probe depths.
    Collide(CollideArgs),
    /// Churn simulation measuring stale-row inheritance and evictions.
    Churn(ChurnArgs),
    /// Batched vs per-id throughput for each probe depth.
    Bench(BenchArgs),
    /// Snapshot plus delta chain replayed into a replica and verified.
    PublishRoundtrip(PublishArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Baseline,
    Mpzch,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Baseline => vec![Method::Baseline],
            MethodArg::Mpzch => vec![Method::Mpzch],
            MethodArg::Both => vec![Method::Baseline, Method::Mpzch],
        }
    }

    fn single(self) -> Result<Method> {
        match self {
            MethodArg::Baseline => Ok(Method::Baseline),
            MethodArg::Mpzch => Ok(Method::Mpzch),
            MethodArg::Both => Err(Error::InvalidSpec(
                "this command takes a single method".into(),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Disabled,
    Ttl,
    Lru,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args, Debug)]
struct PolicyArgs {
    #[arg(long, value_enum, default_value = "ttl")]
    policy: PolicyArg,
    /// Default retention in seconds for the ttl policy.
    #[arg(long, default_value_t = 259_200)]
    ttl_seconds: u64,
    /// Per-feature retention override, FEATURE=SECONDS. Repeatable.
    #[arg(long = "feature-ttl", value_parser = parse_feature_ttl)]
    feature_ttl: Vec<(u32, u64)>,
}

impl PolicyArgs {
    fn build(&self) -> Result<EvictionPolicy> {
        Ok(match self.policy {
            PolicyArg::Disabled => EvictionPolicy::Disabled,
            PolicyArg::Lru => EvictionPolicy::Lru,
            PolicyArg::Ttl => {
                let mut ttl = TtlPolicy::new(self.ttl_seconds)?;
                for &(feature, secs) in &self.feature_ttl {
                    ttl = ttl.with_feature_ttl(feature, secs)?;
                }
                EvictionPolicy::Ttl(ttl)
            }
        })
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutputArgs {
    fn emit<R: Serialize + CsvSchema>(&self, records: &[R]) -> Result<()> {
        match &self.out {
            Some(path) => emit_report(records, self.format.into(), path),
            None => {
                let stdout = io::stdout();
                let mut lock = stdout.lock();
                experiments::write_report(records, self.format.into(), &mut lock)?;
                lock.flush()?;
                Ok(())
            }
        }
    }
}

#[derive(Args, Debug)]
struct CollideArgs {
    #[arg(long)]
    num_ids: Option<usize>,
    /// Repeatable. Defaults to the 0.67x..3.33x grid.
    #[arg(long)]
    table_size: Vec<usize>,
    /// Repeatable. Defaults to 8, 16, ..., 512.
    #[arg(long)]
    max_probe: Vec<usize>,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    #[arg(long, default_value_t = 1)]
    num_shards: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies the default id count and table sizes.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ChurnArgs {
    #[arg(long, default_value_t = 16_384)]
    table_size: usize,
    #[arg(long, default_value_t = 64)]
    max_probe: usize,
    #[arg(long, value_enum, default_value = "mpzch")]
    method: MethodArg,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 1)]
    num_shards: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 400)]
    new_per_step: usize,
    #[arg(long, default_value_t = 400)]
    revisits_per_step: usize,
    #[arg(long, default_value_t = 4000)]
    revisit_window: usize,
    #[arg(long, default_value_t = 60)]
    step_seconds: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Size of the id pool batches are drawn from.
    #[arg(long, default_value_t = 200_000)]
    num_ids: usize,
    #[arg(long, default_value_t = 262_144)]
    table_size: usize,
    /// Repeatable. Defaults to 8, 16, ..., 512.
    #[arg(long)]
    max_probe: Vec<usize>,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 4)]
    num_shards: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8192)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct PublishArgs {
    #[arg(long, default_value_t = 20_000)]
    num_ids: usize,
    #[arg(long, default_value_t = 8192)]
    table_size: usize,
    #[arg(long, default_value_t = 32)]
    max_probe: usize,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 4)]
    num_shards: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    batches: usize,
    #[arg(long, default_value_t = 10)]
    cuts: usize,
    /// Directory for the snapshot and delta files.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_feature_ttl(s: &str) -> std::result::Result<(u32, u64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected FEATURE=SECONDS, got {s:?}"))?;
    let k = k
        .trim()
        .parse()
        .map_err(|e| format!("feature {k:?}: {e}"))?;
    let v = v
        .trim()
        .parse()
        .map_err(|e| format!("seconds {v:?}: {e}"))?;
    Ok((k, v))
}

fn collide(args: &CollideArgs) -> Result<()> {
    let scale = args.scale.max(1);
    let num_ids = args.num_ids.unwrap_or(GRID_NUM_IDS * scale);
    let table_sizes: Vec<usize> = if args.table_size.is_empty() {
        GRID_TABLE_SIZES.iter().map(|t| t * scale).collect()
    } else {
        args.table_size.clone()
    };
    let probes = if args.max_probe.is_empty() {
        GRID_PROBES.to_vec()
    } else {
        args.max_probe.clone()
    };
    let base = WorkloadSpec {
        num_ids,
        num_shards: args.num_shards,
        seed: args.seed,
        ..Default::default()
    };
    let report = run_collision_grid(&base, &table_sizes, &probes, &args.method.methods())?;
    for r in &report.records {
        eprintln!(
            "{:>10} rows  {:>5.2}x  {:<8} P={:<4} collision {:>9.4}%",
            r.table_size,
            r.capacity_ratio,
            r.method,
            r.max_probe.map_or("-".into(), |p| p.to_string()),
            r.collision_rate * 100.0
        );
    }
    args.output.emit(&report.records)
}

fn churn(args: &ChurnArgs) -> Result<()> {
    let spec = WorkloadSpec {
        num_ids: 1,
        table_size: args.table_size,
        max_probe: args.max_probe,
        method: args.method.single()?,
        policy: args.policy.build()?,
        num_shards: args.num_shards,
        seed: args.seed,
        churn: ChurnParams {
            steps: args.steps,
            new_ids_per_step: args.new_per_step,
            revisits_per_step: args.revisits_per_step,
            revisit_window: args.revisit_window,
            step_seconds: args.step_seconds,
            dim: args.dim,
            ..Default::default()
        },
    };
    let report = run_churn_simulation(&spec)?;
    eprintln!(
        "{}: inheritance {:.4} ({} of {} new ids), {} evictions, {} collisions",
        report.method,
        report.inheritance_rate,
        report.inherited,
        report.first_occurrences,
        report.eviction_count,
        report.collision_count
    );
    args.output.emit(std::slice::from_ref(&report))
}

fn bench(args: &BenchArgs) -> Result<()> {
    let probes = if args.max_probe.is_empty() {
        GRID_PROBES.to_vec()
    } else {
        args.max_probe.clone()
    };
    let spec = WorkloadSpec {
        num_ids: args.num_ids,
        table_size: args.table_size,
        policy: args.policy.build()?,
        num_shards: args.num_shards,
        seed: args.seed,
        ..Default::default()
    };
    let report = run_latency_bench(&spec, &probes, args.batch_size, args.repetitions)?;
    for r in &report.records {
        eprintln!(
            "P={:<4} {:<8} {:>10.3} ms/batch {:>14.0} ids/s",
            r.max_probe,
            format!("{:?}", r.mode),
            r.ms_per_batch,
            r.ids_per_second
        );
    }
    args.output.emit(&report.records)
}

fn publish_roundtrip(args: &PublishArgs) -> Result<()> {
    let spec = WorkloadSpec {
        num_ids: args.num_ids,
        table_size: args.table_size,
        max_probe: args.max_probe,
        policy: args.policy.build()?,
        num_shards: args.num_shards,
        seed: args.seed,
        churn: ChurnParams {
            dim: args.dim,
            ..Default::default()
        },
        ..Default::default()
    };
    let dir = args.dir.clone().unwrap_or_else(|| {
        std::env::temp_dir().join(format!("mpzch-publish-{}", std::process::id()))
    });
    let report = run_publish_roundtrip(&spec, args.batch_size, args.batches, args.cuts, &dir)?;
    eprintln!(
        "snapshot {} bytes, {} delta records, bit-equal {}, {} consistency violations ({})",
        report.snapshot_bytes,
        report.delta_records,
        report.bit_equal,
        report.consistency_violations,
        dir.display()
    );
    let output = OutputArgs {
        format: args.format,
        out: args.out.clone(),
    };
    output.emit(std::slice::from_ref(&report))?;
    if report.ok() {
        Ok(())
    } else {
        Err(Error::Malformed("replica diverged from source".into()))
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads_from_env()?;
    match &cli.command {
        Command::Collide(a) => collide(a),
        Command::Churn(a) => churn(a),
        Command::Bench(a) => bench(a),
        Command::PublishRoundtrip(a) => publish_roundtrip(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! `cdal`: summarize voxel grids, select annotation batches, simulate
//! policy comparisons and benchmark a cycle at scale.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cdal_core::bench::{available_memory_bytes, run_bench, BenchConfig};
use cdal_core::io::{
    load_state, read_features, read_grid, read_manifest, read_summaries, save_state,
    selection_to_string, summarize_grid, write_atomic, write_summaries, ManifestSource,
};
use cdal_core::sim::{compare_policies, PoolSpec};
use cdal_core::{
    select_random, select_with_policy, AcquisitionConfig, CoresetFeature, CycleState, ExecMode,
    IndexConfig, Policy, PolicyConfig, Retrieval, SampleId, SampleSummary,
};
use clap::{Args, CommandFactory, Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "cdal", version, about = "Class-distribution guided batch acquisition")]
struct Cli {
    /// Worker threads for data-parallel phases (default: all cores).
    #[arg(long, global = true, env = "CDAL_WORKERS")]
    workers: Option<usize>,

    /// Run every phase on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reduce the grids listed in a manifest to per-sample summaries.
    Summarize(SummarizeArgs),
    /// Create a cycle state from summaries and an initial labeled set.
    Init(InitArgs),
    /// Select the next batch and write the updated state.
    Select(SelectArgs),
    /// Compare policies on synthetic long-tail pools.
    Simulate(SimulateArgs),
    /// Time one acquisition cycle over a synthetic pool.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// JSONL manifest of `{"id", "grid"}` or `{"id", "summary"}` entries.
    #[arg(long)]
    manifest: PathBuf,
    /// Summary file to write (JSONL, sorted by id).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    summaries: PathBuf,
    /// File with one labeled sample id per line (`#` starts a comment).
    #[arg(long, conflicts_with = "initial")]
    labeled: Option<PathBuf>,
    /// Label this many samples drawn uniformly at random instead.
    #[arg(long)]
    initial: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SelectArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    summaries: PathBuf,
    /// cas, random, entropy or coreset.
    #[arg(long, default_value = "cas", value_parser = parse_policy)]
    policy: Policy,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Smoothing constant of the prevalence weights.
    #[arg(long, default_value_t = AcquisitionConfig::default().epsilon, value_parser = parse_epsilon)]
    epsilon: f64,
    /// Candidates reranked exactly per index query.
    #[arg(long, default_value_t = IndexConfig::default().rerank_width)]
    rerank_width: usize,
    /// auto, exhaustive or approximate.
    #[arg(long, default_value = "auto", value_parser = parse_retrieval)]
    retrieval: Retrieval,
    /// External coreset features (JSONL `{"id", "features"}`).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Replace cached labeled distributions with the ones in `--summaries`.
    #[arg(long)]
    refresh_labeled: bool,
    /// Selection file to write; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Updated state to write; required unless `--dry-run`.
    #[arg(long, required_unless_present = "dry_run")]
    state_out: Option<PathBuf>,
    /// Emit the selection without producing an updated state.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML pool spec.
    #[arg(long)]
    spec: PathBuf,
    /// Comma-separated policies to compare.
    #[arg(long, value_delimiter = ',', default_value = "cas,random,entropy", value_parser = parse_policy)]
    policies: Vec<Policy>,
    #[arg(long, default_value_t = 5)]
    cycles: usize,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Number of seeds (0..N); at least 2 for the paired tests.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Directory for `reports.jsonl` and `summary.txt`.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    pool_size: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 17)]
    k: usize,
    #[arg(long, default_value_t = IndexConfig::default().rerank_width)]
    rerank_width: usize,
    #[arg(long, default_value_t = 100)]
    budget: usize,
    /// Initially labeled samples (default: 1% of the pool).
    #[arg(long)]
    labeled: Option<usize>,
    #[arg(long, default_value_t = 32)]
    voxels: usize,
    /// Unlabeled samples on which index recall is measured.
    #[arg(long, default_value_t = 1000)]
    recall_queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto", value_parser = parse_retrieval)]
    retrieval: Retrieval,
    /// Print the report as one JSON object instead of a table.
    #[arg(long)]
    json: bool,
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = Policy::ALL.iter().map(|p| p.name()).collect();
        format!("unknown policy '{s}' (expected one of {})", names.join(", "))
    })
}

fn parse_retrieval(s: &str) -> std::result::Result<Retrieval, String> {
    match s {
        "auto" => Ok(Retrieval::Auto),
        "exhaustive" => Ok(Retrieval::Exhaustive),
        "approximate" => Ok(Retrieval::Approximate),
        _ => Err(format!("unknown retrieval '{s}' (expected auto, exhaustive or approximate)")),
    }
}

fn parse_epsilon(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("epsilon must be positive and finite".into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDAL_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    configure_workers(cli.workers)?;
    let exec = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match cli.command {
        Command::Summarize(a) => summarize(a, exec),
        Command::Init(a) => init(a).map(|_| 0),
        Command::Select(a) => select(a, exec).map(|_| 0),
        Command::Simulate(a) => simulate(a, exec).map(|_| 0),
        Command::Bench(a) => bench(a, exec).map(|_| 0),
    }
}

#[cfg(feature = "parallel")]
fn configure_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn configure_workers(workers: Option<usize>) -> Result<()> {
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    Ok(())
}

fn summarize(args: SummarizeArgs, exec: ExecMode) -> Result<u8> {
    let entries = read_manifest(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let one = |e: &cdal_core::io::ManifestEntry| -> Result<SampleSummary> {
        match &e.source {
            ManifestSource::Inline(s) => Ok((**s).clone()),
            ManifestSource::Grid(path) => {
                let grid = read_grid(path, e.id)
                    .with_context(|| format!("sample {}: {}", e.id, path.display()))?;
                summarize_grid(&grid).with_context(|| format!("sample {}", e.id))
            }
        }
    };
    let results: Vec<Result<SampleSummary>> = map_entries(exec, &entries, one);

    let mut summaries = BTreeMap::new();
    let mut failed = 0usize;
    for r in results {
        match r {
            Ok(s) => {
                summaries.insert(s.id, s);
            }
            Err(e) => {
                failed += 1;
                eprintln!("skipped {e:#}");
            }
        }
    }
    write_summaries(&args.output, summaries.values())?;
    log::info!("{} summaries written, {failed} failed", summaries.len());
    if failed > 0 {
        eprintln!("{failed} of {} samples failed", entries.len());
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn map_entries<T, R, F>(exec: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

fn read_id_list(path: &Path) -> Result<BTreeSet<SampleId>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = BTreeSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id: u64 = line
            .parse()
            .with_context(|| format!("{}:{}: bad sample id '{line}'", path.display(), n + 1))?;
        ids.insert(SampleId(id));
    }
    Ok(ids)
}

fn init(args: InitArgs) -> Result<()> {
    let summaries = read_summaries(&args.summaries)?;
    let labeled = match (&args.labeled, args.initial) {
        (Some(path), _) => read_id_list(path)?,
        (None, Some(n)) => {
            let ids: Vec<SampleId> = summaries.keys().copied().collect();
            select_random(&ids, n, args.seed)?.ids().into_iter().collect()
        }
        (None, None) => BTreeSet::new(),
    };
    let state = CycleState::from_summaries(&summaries, &labeled)?;
    save_state(&state, &args.output)?;
    eprintln!(
        "state: {} labeled, {} unlabeled",
        state.labeled.len(),
        state.unlabeled.len()
    );
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn select(args: SelectArgs, exec: ExecMode) -> Result<()> {
    for out in args.state_out.iter().chain(args.output.iter()) {
        if same_file(out, &args.state) || same_file(out, &args.summaries) {
            bail!("refusing to overwrite input file {}", out.display());
        }
    }
    if args.rerank_width == 0 {
        bail!("--rerank-width must be at least 1");
    }
    let mut state = load_state(&args.state)
        .with_context(|| format!("loading state {}", args.state.display()))?;
    let summaries = read_summaries(&args.summaries)
        .with_context(|| format!("reading summaries {}", args.summaries.display()))?;
    if args.refresh_labeled {
        state.refresh_labeled(&summaries)?;
    }
    let features = args
        .features
        .as_deref()
        .map(read_features)
        .transpose()?;
    let policy = PolicyConfig {
        policy: args.policy,
        seed: args.seed,
        coreset_feature: if features.is_some() {
            CoresetFeature::External
        } else {
            CoresetFeature::Hellinger
        },
    };
    let acquisition = AcquisitionConfig {
        epsilon: args.epsilon,
        retrieval: args.retrieval,
        index: IndexConfig {
            rerank_width: args.rerank_width,
            ..IndexConfig::default()
        },
        exec,
        ..AcquisitionConfig::default()
    };
    let selection = select_with_policy(
        &state,
        &summaries,
        args.budget,
        &policy,
        &acquisition,
        features.as_ref(),
    )?;

    let text = selection_to_string(&selection)?;
    match &args.output {
        Some(path) => write_atomic(path, text.as_bytes())?,
        None => print!("{text}"),
    }
    if args.dry_run {
        return Ok(());
    }
    state.apply_selection(&selection, &summaries)?;
    let out = args.state_out.as_ref().expect("required unless dry run");
    save_state(&state, out)?;
    eprintln!(
        "cycle {}: selected {} with {}, {} labeled",
        state.cycle_index,
        selection.budget(),
        args.policy,
        state.labeled.len()
    );
    Ok(())
}

fn simulate(args: SimulateArgs, exec: ExecMode) -> Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))?;
    let spec: PoolSpec = toml::from_str(&text)
        .with_context(|| format!("invalid pool spec {}", args.spec.display()))?;
    let acquisition = AcquisitionConfig {
        exec,
        ..AcquisitionConfig::default()
    };
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let start = Instant::now();
    let report =
        compare_policies(&spec, &args.policies, args.cycles, args.budget, &seeds, &acquisition)?;
    log::info!("simulation finished in {:.1?}", start.elapsed());

    fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    write_atomic(&args.output_dir.join("reports.jsonl"), report.to_jsonl()?.as_bytes())?;
    let table = report.render_table();
    write_atomic(&args.output_dir.join("summary.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn bench(args: BenchArgs, exec: ExecMode) -> Result<()> {
    let config = BenchConfig {
        pool_size: args.pool_size,
        num_classes: args.k,
        rerank_width: args.rerank_width,
        budget: args.budget,
        labeled: args.labeled,
        voxels_per_sample: args.voxels,
        recall_queries: args.recall_queries,
        seed: args.seed,
        exec,
        retrieval: args.retrieval,
    };
    let needed = config.estimated_peak_bytes();
    if let Some(available) = available_memory_bytes() {
        if needed > available {
            bail!(
                "pool of {} needs about {} MiB but only {} MiB is available",
                config.pool_size,
                needed >> 20,
                available >> 20
            );
        }
    }
    let report = run_bench(&config)?;
    if args.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!("{}", report.render());
    }
    Ok(())
}

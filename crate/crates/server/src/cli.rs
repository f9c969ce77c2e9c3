//! `modelcmp` command line: `compare`, `serve` and `bench`.
//!
//! Exit codes: 0 on success, 1 when some pairs failed or a bench bound was
//! violated, 2 on usage or input errors.

use std::ffi::OsString;
use std::future::Future;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use modelcmp::{
    ComparisonMode, Engine, Error, ExperimentConfig, ExperimentState, MeasureSet, ScaleMode, SchedulerConfig, Store,
};

use crate::bench::{self, Gate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PAIR_ERRORS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// How often a running service schedules the cleanup task.
const CLEANUP_EVERY: Duration = Duration::from_secs(3600);

#[derive(Debug, Parser)]
#[command(name = "modelcmp", version, about = "Compare protein structure models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare local PDB files and write the results file.
    Compare(CompareArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Measure throughput on synthetic models.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `1n` (first against all) or `nn` (all against all).
    #[arg(long, default_value = "1n", value_parser = parse_mode)]
    pub mode: ComparisonMode,
    /// Comma-separated measures.
    #[arg(long, default_value = "RMSD,GDT_TS,TM-score,Q-score", value_parser = parse_measures)]
    pub measures: MeasureSet,
    /// `match` or `total`.
    #[arg(long, default_value = "match", value_parser = parse_scale)]
    pub scale: ScaleMode,
    #[arg(long, default_value = "compare")]
    pub label: String,
    /// Write the results file here instead of stdout.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write the histogram JSON here.
    #[arg(long)]
    pub histograms: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// PDB files; the first one is the target in `1n` mode.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "modelcmp-data")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub queue_rate: Option<f64>,
    #[arg(long)]
    pub bucket_size: Option<u32>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Minimum number of pairs; models are added until it is reached.
    #[arg(long, default_value_t = 2415)]
    pub pairs: usize,
    /// Worker counts to run, the first one is the speedup baseline.
    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 60)]
    pub residues: usize,
    /// Gate dispatch with a token bucket at this rate.
    #[arg(long)]
    pub queue_rate: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub bucket_size: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn parse_mode(s: &str) -> Result<ComparisonMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "1n" | "1:n" | "first" => Ok(ComparisonMode::OneVsAll),
        "nn" | "n:n" | "all" => Ok(ComparisonMode::AllVsAll),
        other => other.parse().map_err(|e: Error| e.to_string()),
    }
}

fn parse_scale(s: &str) -> Result<ScaleMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "match" => Ok(ScaleMode::MatchLength),
        "total" => Ok(ScaleMode::TotalLength),
        other => other.parse().map_err(|e: Error| e.to_string()),
    }
}

fn parse_measures(s: &str) -> Result<MeasureSet, String> {
    MeasureSet::parse_list(s).map_err(|e| e.to_string())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_USAGE;
            }
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
    };
    match cli.command {
        Command::Compare(a) => compare(a, out, err),
        Command::Serve(a) => serve_cmd(a, out, err),
        Command::Bench(a) => bench_cmd(a, out, err),
    }
}

fn fail(err: &mut dyn Write, message: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {message}");
    EXIT_USAGE
}

/// Defaults, then the config file, then `MODELCMP_*` variables.
fn load_config(path: Option<&PathBuf>) -> Result<SchedulerConfig, Error> {
    let base = match path {
        Some(p) => SchedulerConfig::from_file(p)?,
        None => SchedulerConfig::default(),
    };
    base.apply_env(std::env::vars())
}

fn compare(args: CompareArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut config = match load_config(args.config.as_ref()) {
        Ok(c) => c,
        Err(e) => return fail(err, e),
    };
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let engine = match Engine::builder(Arc::new(Store::in_memory())).config(config.clone()).ungated().build() {
        Ok(e) => e,
        Err(e) => return fail(err, e),
    };
    let exp_config = match ExperimentConfig::new(args.label, args.measures, args.mode, args.scale) {
        Ok(c) => c,
        Err(e) => return fail(err, e),
    };
    let exp = match engine.create_experiment(exp_config) {
        Ok(e) => e,
        Err(e) => return fail(err, e),
    };
    for path in &args.files {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => return fail(err, format_args!("cannot read {}: {e}", path.display())),
        };
        if let Err(e) = engine.upload_structure(&exp.id, &path.to_string_lossy(), &bytes) {
            return fail(err, format_args!("{}: {} {e}", path.display(), e.code()));
        }
    }
    if let Err(e) = engine.start(&exp.id) {
        return fail(err, format_args!("{} {e}", e.code()));
    }
    let pool = engine.spawn_workers(config.workers);
    let done = engine.wait_terminal(&exp.id, Duration::from_secs(u32::MAX as u64));
    pool.shutdown();
    let done = match done {
        Ok(d) => d,
        Err(e) => return fail(err, e),
    };

    let tsv = match engine.results_file(&exp.id) {
        Ok(t) => t,
        Err(e) => return fail(err, e),
    };
    let written = match &args.out {
        Some(p) => std::fs::write(p, &tsv).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => out.write_all(&tsv).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        return fail(err, e);
    }
    if let Some(p) = &args.histograms {
        let json = match engine.histograms_json(&exp.id) {
            Ok(j) => j,
            Err(e) => return fail(err, e),
        };
        if let Err(e) = std::fs::write(p, json) {
            return fail(err, format_args!("cannot write {}: {e}", p.display()));
        }
    }
    let _ = writeln!(err, "{}", done.status_line());
    if done.state == ExperimentState::FinishedWithErrors {
        EXIT_PAIR_ERRORS
    } else {
        EXIT_OK
    }
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: Engine,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let cleanup_engine = engine.clone();
    let cleanup = tokio::spawn(async move {
        let mut tick = tokio::time::interval(CLEANUP_EVERY);
        loop {
            tick.tick().await;
            let e = cleanup_engine.clone();
            let _ = tokio::task::spawn_blocking(move || e.schedule_cleanup()).await;
        }
    });
    let result = axum::serve(listener, crate::api::router(engine))
        .with_graceful_shutdown(shutdown)
        .await;
    cleanup.abort();
    result
}

fn serve_cmd(args: ServeArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut config = match load_config(args.config.as_ref()) {
        Ok(c) => c,
        Err(e) => return fail(err, e),
    };
    if let Some(r) = args.queue_rate {
        config.queue_rate = r;
    }
    if let Some(b) = args.bucket_size {
        config.bucket_size = b;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    let store = match Store::open(&args.data_dir) {
        Ok(s) => Arc::new(s),
        Err(e) => return fail(err, format_args!("cannot open {}: {e}", args.data_dir.display())),
    };
    let engine = match Engine::builder(store).config(config.clone()).build() {
        Ok(e) => e,
        Err(e) => return fail(err, e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(err, e),
    };
    let addr = format!("{}:{}", args.host, args.port);
    let listener = match runtime.block_on(tokio::net::TcpListener::bind(&addr)) {
        Ok(l) => l,
        Err(e) => return fail(err, format_args!("cannot listen on {addr}: {e}")),
    };
    let local = listener.local_addr().map_or(addr, |a| a.to_string());
    let _ = writeln!(out, "listening on http://{local}");
    let _ = out.flush();

    let pool = engine.spawn_workers(config.workers);
    let served = runtime.block_on(serve(listener, engine, async {
        let _ = tokio::signal::ctrl_c().await;
    }));
    pool.shutdown();
    match served {
        Ok(()) => EXIT_OK,
        Err(e) => fail(err, e),
    }
}

fn bench_cmd(args: BenchArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if args.workers.is_empty() || args.workers.contains(&0) {
        return fail(err, "worker counts must be positive");
    }
    let gate = args.queue_rate.map(|rate| Gate {
        rate,
        capacity: args.bucket_size,
    });
    let models = bench::models_for_pairs(args.pairs);
    let files = bench::synthetic_files(models, args.residues, args.seed);
    let _ = writeln!(
        out,
        "bench: {models} models x {} residues, {} pairs (all against all)",
        args.residues,
        models * (models - 1) / 2
    );
    let mut baseline = None;
    let mut violated = false;
    for &workers in &args.workers {
        let run = match bench::run_once(&files, workers, gate) {
            Ok(r) => r,
            Err(e) => return fail(err, e),
        };
        let rate = run.pairs_per_second();
        let base = *baseline.get_or_insert(rate);
        let bound = match gate {
            None => "ungated".to_string(),
            Some(g) if g.holds(&run.dispatch_log) => format!("ok (bucket {}, rate {}/s)", g.capacity, g.rate),
            Some(g) => {
                violated = true;
                format!("VIOLATED (bucket {}, rate {}/s)", g.capacity, g.rate)
            }
        };
        let _ = writeln!(
            out,
            "workers={workers} elapsed={:.3}s {rate:.1} pairs/s speedup={:.2}x dispatch bound: {bound}",
            run.elapsed.as_secs_f64(),
            rate / base,
        );
    }
    if violated {
        EXIT_PAIR_ERRORS
    } else {
        EXIT_OK
    }
}

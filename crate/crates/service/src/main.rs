use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hype_core::pool::{build_pool, read_manifest, DEFAULT_POOL_SIZE};
use hype_core::scoring::render_table;
use hype_core::simulator::{
    infinity_pool_scores, run_convergence_experiment, run_cost_tradeoff_experiment, run_infinity_experiment,
    run_time_experiment, ConvergenceConfig, ExperimentReport, InfinityBehaviorModel, TradeoffConfig,
};
use hype_core::PsychometricModel;
use hype_service::metrics::MetricTable;
use hype_service::report::{compare_models, replay, report_json, ScoringParams};
use hype_service::{api, Config, Store};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "hype", version, about = "Human realism evaluation service and tools")]
struct Cli {
    /// TOML configuration file; HYPE_* environment variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data directory (overrides the configuration).
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve,
    #[command(subcommand)]
    Pool(PoolCommand),
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Score a run from the data directory.
    Score { run: String },
    /// ANOVA, Tukey and metric correlations across runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<String>,
        /// CSV of model_id,metric,value rows.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Rescore a run from its response log.
    Replay {
        log: PathBuf,
        /// Run manifest; defaults to manifest.json next to the log.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PoolCommand {
    /// Sample a pool from real and generated image manifests.
    Build {
        #[arg(long)]
        id: String,
        /// Line-delimited JSON manifest of real images.
        #[arg(long)]
        reals: PathBuf,
        /// Line-delimited JSON manifest of generated images.
        #[arg(long)]
        fakes: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        k: usize,
    },
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Timed protocol with logistic evaluators.
    Time {
        #[arg(long, default_value_t = 400.0)]
        t75: f64,
        #[arg(long, default_value_t = 6.0)]
        slope: f64,
        #[arg(long, default_value_t = 0.02)]
        lapse: f64,
        #[arg(long, default_value_t = 30)]
        evaluators: usize,
    },
    /// Untimed protocol with fixed per-class mistake rates.
    Infinity {
        #[command(flatten)]
        behavior: Behavior,
        #[arg(long, default_value_t = 30)]
        evaluators: usize,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
    /// Bootstrap interval width against number of evaluators.
    Tradeoff {
        #[command(flatten)]
        behavior: Behavior,
        #[arg(long, default_value_t = 120)]
        pool: usize,
        /// Comma-separated evaluator counts.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120])]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        iterations: usize,
    },
    /// Staircase drift under fixed-accuracy responders.
    Convergence {
        #[arg(long, default_value_t = 10)]
        step_down: u32,
        #[arg(long, default_value_t = 30)]
        step_up: u32,
        #[arg(long, default_value_t = 0.75)]
        responder_p: f64,
        #[arg(long, default_value_t = 10_000)]
        blocks: usize,
    },
}

#[derive(Args)]
struct Behavior {
    #[arg(long, default_value_t = 0.5)]
    p_fooled: f64,
    #[arg(long, default_value_t = 0.5)]
    p_misjudge: f64,
}

impl Behavior {
    fn model(&self) -> InfinityBehaviorModel {
        InfinityBehaviorModel { p_fooled_by_fake: self.p_fooled, p_misjudge_real: self.p_misjudge }
    }
}

fn output(out: &Option<PathBuf>, text: &str) -> std::io::Result<()> {
    match out {
        Some(p) => File::create(p)?.write_all(text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

fn jsonl(report: &ExperimentReport) -> String {
    serde_json::to_string(report).expect("reports serialize") + "\n"
}

fn scoring_params(config: &Config) -> ScoringParams {
    ScoringParams {
        staircase: config.staircase,
        iterations: config.bootstrap_iterations,
        resample_size: config.bootstrap_resample_size,
    }
}

fn simulate(cmd: SimulateCommand, config: &Config, seed: u64) -> Result<ExperimentReport, Box<dyn std::error::Error>> {
    Ok(match cmd {
        SimulateCommand::Time { t75, slope, lapse, evaluators } => {
            let model = PsychometricModel::new(t75, slope).with_lapse(lapse);
            run_time_experiment(&model, &config.staircase, evaluators, seed)?
        }
        SimulateCommand::Infinity { behavior, evaluators, iterations } => {
            run_infinity_experiment(&behavior.model(), evaluators, iterations, seed)?
        }
        SimulateCommand::Tradeoff { behavior, pool, grid, iterations } => {
            let scores = infinity_pool_scores(&behavior.model(), pool, seed)?;
            run_cost_tradeoff_experiment(&scores, &TradeoffConfig { n_grid: grid, iterations }, seed)?
        }
        SimulateCommand::Convergence { step_down, step_up, responder_p, blocks } => {
            let mut c = ConvergenceConfig::new(step_down, step_up, responder_p);
            c.blocks = blocks;
            run_convergence_experiment(&c, seed)?
        }
    })
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let mut config = Config::load(cli.config.as_deref())?;
    if let Some(d) = cli.data {
        config.data_dir = d;
    }
    match cli.command {
        Command::Serve => {
            let store = Arc::new(Store::open(config)?);
            tokio::runtime::Runtime::new()?.block_on(api::serve(store))?;
        }
        Command::Pool(PoolCommand::Build { id, reals, fakes, k }) => {
            let pool = build_pool(&id, &read_manifest(&reals)?, &read_manifest(&fakes)?, k, cli.seed)?;
            let path = match &cli.out {
                Some(p) => {
                    pool.save(p)?;
                    p.clone()
                }
                None => Store::open(config)?.install_pool(&pool)?,
            };
            eprintln!(
                "pool {id}: {} real, {} generated -> {}",
                pool.real_images.len(),
                pool.fake_images.len(),
                path.display()
            );
        }
        Command::Simulate(cmd) => output(&cli.out, &jsonl(&simulate(cmd, &config, cli.seed)?))?,
        Command::Score { run } => {
            let store = Store::open(config)?;
            let scored = store.scored_run(&run)?;
            eprint!("{}", render_table(&mut [scored.report.clone()]));
            output(&cli.out, &report_json(&scored.report))?;
        }
        Command::Compare { runs, metrics } => {
            let store = Store::open(config)?;
            let mut table = store.metrics();
            if let Some(p) = metrics {
                table.merge(MetricTable::from_csv(File::open(p)?)?);
            }
            let scored = runs.iter().map(|r| store.scored_run(r)).collect::<Result<Vec<_>, _>>()?;
            let report = compare_models(&scored, &table)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            output(&cli.out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Replay { log, manifest } => {
            let manifest = manifest.unwrap_or_else(|| log.parent().unwrap_or(Path::new(".")).join("manifest.json"));
            let report = replay(&log, &manifest, &scoring_params(&config))?;
            if report.partial {
                eprintln!("warning: report is partial");
            }
            output(&cli.out, &report_json(&report))?;
        }
    }
    Ok(())
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use toolstop::critical::{RetentionPolicy, RetentionRule};
use toolstop::pipeline::{
    cmd_agreement, cmd_build_infeasible, cmd_evaluate, cmd_gen_synthetic, cmd_report, cmd_run, cmd_sample_plan,
    AgreementOptions, BuildOptions, EvaluateOptions, GenSyntheticOptions, OracleKind, PipelineConfig, PipelineError,
    RunMode, RunOptions, SamplePlanOptions,
};
use toolstop::stats::SizeRounding;
use toolstop::task::{DatasetFormat, SyntheticSuiteSpec};

#[derive(Parser)]
#[command(name = "toolstop", version, about = "Build infeasible tool-use suites and score early stopping")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Declarative TOML config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for `run`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    PlannerExecutor,
}

#[derive(Clone, Copy, ValueEnum)]
enum Oracle {
    TraceOutcome,
    GroundTruth,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rounding {
    Ceil,
    HalfUp,
}

#[derive(Subcommand)]
enum Command {
    /// Run the roster over a dataset and record traces.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Mine critical tools from traces and write the infeasible suite.
    BuildInfeasible {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        /// Comma-separated agent ids; defaults to every agent with traces.
        #[arg(long, value_delimiter = ',')]
        roster: Option<Vec<String>>,
        /// Keep tasks solved by at least K agents instead of all.
        #[arg(long)]
        any_k: Option<usize>,
        /// Also require identical tool sets across agents.
        #[arg(long)]
        strict_identical: bool,
        /// planted.json from gen-synthetic, for a recovery report.
        #[arg(long)]
        planted: Option<PathBuf>,
    },
    /// Score traces against one or more suites.
    Evaluate {
        #[arg(long = "suite", required = true)]
        suites: Vec<PathBuf>,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
    },
    /// Rebuild report tables from records.jsonl files.
    Report {
        #[arg(long = "records", required = true)]
        records: Vec<PathBuf>,
    },
    /// Plan the human verification sample and emit annotation sheets.
    SamplePlan {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, default_value_t = 0.05)]
        margin: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, value_enum, default_value = "ceil")]
        round: Rounding,
        /// Use this sample size instead of the formula value.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 2)]
        annotators: usize,
    },
    /// Agreement and precision statistics from two judgment files.
    Agreement {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        /// Suite file used to group tasks by dataset.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
    },
    /// Generate a synthetic suite with planted critical tools.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        tasks: usize,
        #[arg(long, default_value_t = 8)]
        pool_size: usize,
        #[arg(long, default_value_t = 2)]
        critical: usize,
        #[arg(long, default_value_t = 1)]
        redundant_pairs: usize,
        #[arg(long, default_value_t = 0)]
        critical_clones: usize,
        #[arg(long, default_value_t = 3)]
        roster_size: usize,
        #[arg(long, default_value_t = 1)]
        extras: usize,
        #[arg(long, default_value = "synthetic")]
        dataset_id: String,
    },
}

fn format(s: &str) -> Result<DatasetFormat, PipelineError> {
    Ok(s.parse()?)
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let config = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let seed = cli.common.seed.or(config.seed).unwrap_or(0);
    let out = cli.common.out.clone();
    match cli.command {
        Command::Run { dataset, format: f, mode } => {
            let mut config = config;
            if let Some(m) = mode {
                config.mode = match m {
                    Mode::Single => RunMode::Single,
                    Mode::PlannerExecutor => RunMode::PlannerExecutor,
                };
            }
            let jobs = cli
                .common
                .jobs
                .or(config.jobs)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let m = cmd_run(&RunOptions {
                dataset,
                format: format(&f)?,
                config,
                out_dir: out,
                jobs,
                seed,
            })?;
            println!(
                "{}: {} planned, {} already done, {} executed",
                m.run_id, m.planned, m.skipped, m.executed
            );
            if m.errors > 0 {
                return Err(PipelineError::Transport(format!(
                    "{} trace(s) ended on a transport or authentication error",
                    m.errors
                )));
            }
        }
        Command::BuildInfeasible {
            traces,
            dataset,
            format: f,
            roster,
            any_k,
            strict_identical,
            planted,
        } => {
            let mut policy: RetentionPolicy = config.retention;
            if let Some(k) = any_k {
                policy.rule = RetentionRule::AnyK(k);
            }
            policy.strict_identical |= strict_identical;
            let s = cmd_build_infeasible(&BuildOptions {
                traces_dir: traces,
                dataset,
                format: format(&f)?,
                roster,
                policy,
                planted,
                out: out.join("infeasible.json"),
            })?;
            println!("retained {}/{} tasks -> {}", s.log.retained, s.log.source_tasks, s.suite_file.display());
            for (reason, n) in &s.log.skip_counts {
                println!("  skipped {n} ({reason})");
            }
            if let Some(r) = &s.log.recovery {
                println!("{r}");
            }
        }
        Command::Evaluate { suites, traces, oracle } => {
            let oracle = match oracle {
                Some(Oracle::TraceOutcome) => OracleKind::TraceOutcome,
                Some(Oracle::GroundTruth) => OracleKind::GroundTruth,
                None => config.evaluate.oracle,
            };
            let s = cmd_evaluate(&EvaluateOptions {
                suites,
                traces_dir: traces,
                oracle,
                out_dir: out,
            })?;
            if !s.uncovered.is_empty() {
                eprintln!("warning: {} suite entries have no traces", s.uncovered.len());
            }
            print!("{}", s.report.render_text());
        }
        Command::Report { records } => {
            print!("{}", cmd_report(&records, &out)?.render_text());
        }
        Command::SamplePlan {
            suite,
            confidence,
            margin,
            p,
            round,
            n,
            annotators,
        } => {
            let plan = cmd_sample_plan(&SamplePlanOptions {
                suite,
                confidence,
                margin,
                variability: p,
                rounding: match round {
                    Rounding::Ceil => SizeRounding::Ceil,
                    Rounding::HalfUp => SizeRounding::HalfUp,
                },
                override_n: n,
                seed,
                annotators,
                out_dir: out,
            })?;
            println!("N = {}, n0 = {:.3}, n = {}", plan.population, plan.n0, plan.n);
            for (k, v) in &plan.allocation {
                println!("  {k}: {v}");
            }
        }
        Command::Agreement {
            first,
            second,
            suite,
            confidence,
        } => {
            let r = cmd_agreement(&AgreementOptions {
                first,
                second,
                suite,
                confidence,
                out_dir: out,
            })?;
            print!("{}", r.render_text());
        }
        Command::GenSynthetic {
            tasks,
            pool_size,
            critical,
            redundant_pairs,
            critical_clones,
            roster_size,
            extras,
            dataset_id,
        } => {
            let mut spec = SyntheticSuiteSpec::new(tasks, pool_size, critical, redundant_pairs, seed)
                .with_critical_clones(critical_clones);
            spec.dataset_id = dataset_id;
            let s = cmd_gen_synthetic(&GenSyntheticOptions {
                spec,
                roster_size,
                extras,
                out_dir: out,
            })?;
            println!("{} tasks -> {}", s.tasks, s.tasks_file.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

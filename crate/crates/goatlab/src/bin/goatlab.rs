//! Command-line front end: dataset generation, training runs, policy
//! evaluation, the full result-table sweep, and the distribution-shift
//! verification.
//!
//! Exit codes: 0 success, 1 a verification or sweep reported failures,
//! 2 usage or configuration errors, 3 numeric errors, 4 I/O errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use goatlab::agents::{Algorithm, TrainConfig};
use goatlab::env::{generate_dataset, DatasetKind, EnvConfig};
use goatlab::error::{Error, Result};
use goatlab::eval::{coverage_grid, NetworkPolicy};
use goatlab::run::{
    self, load_file_config, run_evaluation, run_reproduce, run_train, run_verify_theory,
    EvalSettings, FileConfig, ReproduceSettings, ResolvedRunConfig, TableKind,
};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "GOATLAB_OUT";

#[derive(Parser)]
#[command(
    name = "goatlab",
    version,
    about = "Offline goal-conditioned learning laboratory on a planar reaching task"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a behavior dataset and write it as NDJSON.
    Generate(GenerateArgs),
    /// Train one algorithm on a dataset, writing a full run directory.
    Train(TrainArgs),
    /// Evaluate a saved policy on the two goal circles, or map coverage.
    Eval(EvalArgs),
    /// Run every algorithm on the three reference datasets and tabulate.
    Reproduce(ReproduceArgs),
    /// Check the worst-case distribution-shift bounds against enumeration.
    VerifyTheory(VerifyTheoryArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Expert,
    Nonexpert,
}

#[derive(Args)]
struct GenerateArgs {
    /// Behavior policy class.
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Number of trajectories.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; defaults to `<kind><n>.ndjson` in the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Optional TOML config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm name (bc, gcsl, marwil_her, wgcsl, goat, goat_tau,
    /// ddpg_her, cql_her).
    #[arg(long)]
    algo: Option<String>,
    /// Dataset NDJSON file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gradient-update budget.
    #[arg(long)]
    updates: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    policy_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    /// Probability of relabeling a sampled transition's goal.
    #[arg(long)]
    p_relabel: Option<f64>,
    /// Expectile level for the pessimistic value fit.
    #[arg(long)]
    tau: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    members: Option<usize>,
    /// Output root; runs land under `<out>/runs/<run-id>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exact run directory, overriding `--out`/`--run-id`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Run name; defaults to `<algo>_<data-stem>_s<seed>`.
    #[arg(long)]
    run_id: Option<String>,
    /// Final-evaluation goals per circle.
    #[arg(long)]
    eval_n: Option<usize>,
    /// Independent final-evaluation goal draws.
    #[arg(long)]
    eval_seeds: Option<u64>,
    /// Suppress the stdout summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy file, or a run directory containing `checkpoints/policy.bin`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Inner and outer goal-circle radii; the outer must be twice the inner.
    #[arg(long, default_value = "10,20")]
    radii: String,
    /// Goals per circle.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Independent goal draws to average over.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination; stdout when omitted (coverage defaults to
    /// `coverage.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Map success over a square grid of goals instead of the circles.
    #[arg(long)]
    coverage: bool,
    /// Coverage grid as `LO:HI:N` (N cells per side).
    #[arg(long, default_value = "-12:12:25", allow_hyphen_values = true)]
    grid: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    PointSuccess,
    PointReturn,
    Both,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Output root (datasets/, runs/, tables/); defaults to $GOATLAB_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override every run's update budget.
    #[arg(long)]
    updates: Option<u64>,
    /// Training seeds per cell.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Concurrent training processes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Goals per circle in the final evaluations.
    #[arg(long, default_value_t = 200)]
    eval_n: usize,
    /// Which summary tables to write.
    #[arg(long, value_enum, default_value_t = TableArg::Both)]
    table: TableArg,
    /// Re-run cells even if their reports already exist.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct VerifyTheoryArgs {
    /// Support size of the source distribution.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Per-outcome probability cap defining the shift family.
    #[arg(long, default_value_t = 0.5)]
    cap: f64,
    /// Random source distributions to test against the uniform.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_root(cli: Option<&PathBuf>) -> PathBuf {
    cli.cloned()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("goatlab_out"))
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let kind = match args.kind {
        KindArg::Expert => DatasetKind::expert(args.n),
        KindArg::Nonexpert => DatasetKind::non_expert(args.n),
    };
    let out = args.out.unwrap_or_else(|| {
        let stem = match args.kind {
            KindArg::Expert => "expert",
            KindArg::Nonexpert => "nonexpert",
        };
        PathBuf::from(format!("{stem}{}.ndjson", args.n))
    });
    let dataset = generate_dataset(kind, EnvConfig::default(), args.seed)?;
    dataset.save_ndjson(&out)?;
    let summary = dataset.summary();
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(|e| Error::data(e.to_string()))?
    );
    eprintln!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn resolve_train(args: &TrainArgs) -> Result<(ResolvedRunConfig, PathBuf, Option<DatasetKind>, u64)> {
    let file: FileConfig = match &args.config {
        Some(path) => load_file_config(path)?,
        None => FileConfig::default(),
    };

    let algo_name = args
        .algo
        .clone()
        .or_else(|| file.algorithm.as_ref().and_then(|a| a.name.clone()))
        .ok_or_else(|| Error::config("no algorithm given (use --algo or [algorithm].name)"))?;
    let algorithm = Algorithm::from_name(&algo_name)?;

    let seed = args
        .seed
        .or_else(|| file.algorithm.as_ref().and_then(|a| a.seed))
        .unwrap_or(0);
    let mut train = TrainConfig::preset(algorithm, seed);
    if let Some(section) = &file.algorithm {
        section.apply(&mut train);
        train.seed = seed;
    }
    if let Some(section) = &file.weights {
        section.apply(&mut train.weights);
    }
    if let Some(v) = args.updates {
        train.total_updates = v;
    }
    if let Some(v) = args.batch {
        train.batch_size = v;
    }
    if let Some(v) = args.policy_lr {
        train.policy_lr = v;
    }
    if let Some(v) = args.critic_lr {
        train.critic_lr = v;
    }
    if let Some(v) = args.p_relabel {
        train.p_relabel = v;
    }
    if let Some(v) = args.tau {
        train.expectile_tau = Some(v);
    }
    if let Some(v) = args.members {
        train.n_members = v;
    }

    let mut env = EnvConfig::default();
    if let Some(section) = &file.env {
        section.apply(&mut env);
    }

    let mut eval = EvalSettings::default();
    if let Some(section) = &file.eval {
        section.apply(&mut eval);
    }
    if let Some(v) = args.eval_n {
        eval.goals_per_set = v;
    }
    if let Some(v) = args.eval_seeds {
        eval.seeds = v;
    }

    // The dataset is an existing file, or generation instructions from the
    // config file (saved into the run directory before training).
    let data_path = args
        .data
        .clone()
        .or_else(|| file.dataset.as_ref().and_then(|d| d.path.clone()));
    let (dataset_path_hint, generate_kind, generate_seed) = match data_path {
        Some(p) => (p, None, 0),
        None => {
            let section = file
                .dataset
                .as_ref()
                .ok_or_else(|| Error::config("no dataset given (use --data or [dataset])"))?;
            let kind_name = section
                .kind
                .as_deref()
                .ok_or_else(|| Error::config("[dataset] needs either path or kind"))?;
            let n_traj = section
                .n_traj
                .ok_or_else(|| Error::config("[dataset] generation needs n_traj"))?;
            let kind = match kind_name {
                "expert" => DatasetKind::expert(n_traj),
                "nonexpert" | "non_expert" => DatasetKind::non_expert(n_traj),
                other => {
                    return Err(Error::config(format!(
                        "unknown dataset kind {other:?} (expected expert or nonexpert)"
                    )))
                }
            };
            (PathBuf::from("dataset.ndjson"), Some(kind), section.seed.unwrap_or(0))
        }
    };

    let run_id = args.run_id.clone().unwrap_or_else(|| {
        let stem = dataset_path_hint
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".to_string());
        format!("{}_{}_s{}", algorithm.name(), stem, seed)
    });
    let run_dir = match &args.run_dir {
        Some(d) => d.clone(),
        None => out_root(args.out.as_ref()).join("runs").join(&run_id),
    };

    let rc = ResolvedRunConfig::new(run_id, dataset_path_hint, env, train, eval);
    Ok((rc, run_dir, generate_kind, generate_seed))
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let (mut rc, run_dir, generate_kind, generate_seed) = resolve_train(&args)?;
    if let Some(kind) = generate_kind {
        std::fs::create_dir_all(&run_dir)?;
        let path = run_dir.join("dataset.ndjson");
        let ds = generate_dataset(kind, rc.env.clone(), generate_seed)?;
        ds.save_ndjson(&path)?;
        rc.dataset_path = path;
    }
    let out = run_train(&rc, &run_dir)?;
    if !args.quiet {
        println!(
            "{}",
            serde_json::json!({
                "run_dir": out.run_dir,
                "steps": out.summary.steps,
                "final_policy_loss": out.summary.final_policy_loss,
                "mean_r10_success": out.report.mean_r10_success,
                "mean_r20_success": out.report.mean_r20_success,
            })
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_radii(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    let usage = || Error::config(format!("radii must be `inner,outer`, got {text:?}"));
    if parts.len() != 2 {
        return Err(usage());
    }
    let inner: f64 = parts[0].trim().parse().map_err(|_| usage())?;
    let outer: f64 = parts[1].trim().parse().map_err(|_| usage())?;
    if !(inner > 0.0) || !inner.is_finite() {
        return Err(Error::config(format!("inner radius must be positive, got {inner}")));
    }
    if (outer - 2.0 * inner).abs() > 1e-9 {
        return Err(Error::config(format!(
            "the protocol evaluates an inner circle and its double; got {inner},{outer}"
        )));
    }
    Ok((inner, outer))
}

fn parse_grid(text: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(':').collect();
    let usage = || Error::config(format!("grid must be `LO:HI:N`, got {text:?}"));
    if parts.len() != 3 {
        return Err(usage());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| usage())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| usage())?;
    let n: usize = parts[2].trim().parse().map_err(|_| usage())?;
    if !(hi > lo) {
        return Err(Error::config(format!("grid needs HI > LO, got {lo}:{hi}")));
    }
    if n < 2 {
        return Err(Error::config(format!("grid needs at least 2 cells per side, got {n}")));
    }
    Ok((lo, hi, n))
}

fn policy_path(ckpt: &Path) -> PathBuf {
    if ckpt.is_dir() {
        ckpt.join(run::CHECKPOINT_DIR).join(run::POLICY_FILE)
    } else {
        ckpt.to_path_buf()
    }
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let policy = NetworkPolicy::load_file(policy_path(&args.ckpt))?;
    let mut env = EnvConfig::default();

    if args.coverage {
        let (lo, hi, n) = parse_grid(&args.grid)?;
        let grid = coverage_grid(&env, &policy, lo, hi, n)?;
        let out = args.out.unwrap_or_else(|| PathBuf::from("coverage.csv"));
        grid.write_csv(&out)?;
        eprintln!(
            "coverage {:.3} over {} goals, wrote {}",
            grid.success_fraction(),
            grid.cells.len(),
            out.display()
        );
        return Ok(ExitCode::SUCCESS);
    }

    let (inner, _outer) = parse_radii(&args.radii)?;
    env.train_goal_radius = inner;
    let settings = EvalSettings { goals_per_set: args.n, seeds: args.seeds };
    let report = run_evaluation(&env, &policy, args.seed, &settings)?;
    match &args.out {
        Some(path) => {
            run::save_multi_eval_json(&report, path)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!(
            "{}",
            serde_json::to_string_pretty(&report).map_err(|e| Error::data(e.to_string()))?
        ),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<ExitCode> {
    let exe = std::env::current_exe()?;
    let settings = ReproduceSettings {
        out_root: out_root(args.out.as_ref()),
        updates: args.updates,
        train_seeds: args.seeds,
        jobs: args.jobs,
        goals_per_set: args.eval_n,
        table: match args.table {
            TableArg::PointSuccess => TableKind::Success,
            TableArg::PointReturn => TableKind::Return,
            TableArg::Both => TableKind::Both,
        },
        resume: !args.fresh,
    };
    let outcome = run_reproduce(&exe, &settings)?;
    for table in &outcome.tables {
        println!("table {}", table.display());
    }
    println!("completed {} runs", outcome.completed);
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &outcome.failures {
            eprintln!("failed: {failure}");
        }
        eprintln!("{} of the sweep's runs failed", outcome.failures.len());
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_verify_theory(args: VerifyTheoryArgs) -> Result<ExitCode> {
    let report = run_verify_theory(args.n, args.cap, args.trials, args.seed)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::data(e.to_string()))?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, text + "\n")?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    if report.passed {
        eprintln!(
            "verified: uniform worst case {:.6} matches 2(1-1/(C*n)), min margin {:.6}",
            report.uniform_worst_case, report.min_margin
        );
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "verification FAILED: {} violations, min margin {:.6}, enumeration gap {:.3e}",
            report.violations, report.min_margin, report.brute_max_abs_diff
        );
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Reproduce(args) => cmd_reproduce(args),
        Cmd::VerifyTheory(args) => cmd_verify_theory(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

//! Run orchestration: resolved configurations, the on-disk run-directory
//! layout, multi-seed evaluation reports, table sweeps, and the
//! distribution-shift verification report.
//!
//! A run directory always contains the same fixed names:
//!
//! ```text
//! <run>/config.copy        resolved TOML config, written before training
//! <run>/dataset.ref        JSON pointer {path, sha256, ...} to the data
//! <run>/checkpoints/       policy.bin (+ critic_member_K.bin, targets)
//! <run>/logs/              train.ndjson, weights.csv
//! <run>/reports/           eval.json, eval.csv
//! ```
//!
//! Re-running from `config.copy` against the same dataset bytes reproduces
//! the checkpoints and reports bit for bit.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Algorithm, TrainConfig, Trainer, TrainSummary};
use crate::divergence::{
    brute_force_worst_case, verify_uniform_minimax, worst_case_d1, CapFamily, DiscreteDist,
    MinimaxReport,
};
use crate::env::{generate_dataset, Dataset, DatasetKind, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, NetworkPolicy};
use crate::nn::checkpoint;
use crate::rng::{derive_seed, stream_rng};

pub const CONFIG_COPY: &str = "config.copy";
pub const DATASET_REF: &str = "dataset.ref";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_DIR: &str = "logs";
pub const REPORT_DIR: &str = "reports";
pub const POLICY_FILE: &str = "policy.bin";
pub const TRAIN_LOG: &str = "train.ndjson";
pub const WEIGHTS_CSV: &str = "weights.csv";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";

/// Final-evaluation protocol for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub goals_per_set: usize,
    /// Independent evaluation goal draws, averaged in the report.
    pub seeds: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { goals_per_set: 200, seeds: 1 }
    }
}

/// Fully resolved configuration of one training run; the serialized form is
/// the `config.copy` reproducibility record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRunConfig {
    pub tool_version: String,
    pub run_id: String,
    pub dataset_path: PathBuf,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl ResolvedRunConfig {
    pub fn new(
        run_id: impl Into<String>,
        dataset_path: impl Into<PathBuf>,
        env: EnvConfig,
        train: TrainConfig,
        eval: EvalSettings,
    ) -> ResolvedRunConfig {
        ResolvedRunConfig {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            run_id: run_id.into(),
            dataset_path: dataset_path.into(),
            env,
            train,
            eval,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::data(format!("config encode: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<ResolvedRunConfig> {
        toml::from_str(text).map_err(|e| Error::config(format!("config decode: {e}")))
    }
}

/// Sectioned, all-optional config file. Missing keys fall back to the
/// algorithm preset; command-line flags override both.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<EnvSection>,
    pub dataset: Option<DatasetSection>,
    pub algorithm: Option<AlgorithmSection>,
    pub weights: Option<WeightsSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub horizon: Option<usize>,
    pub success_radius: Option<f64>,
    pub action_bound: Option<f64>,
    pub train_goal_radius: Option<f64>,
    pub discount: Option<f64>,
}

impl EnvSection {
    pub fn apply(&self, env: &mut EnvConfig) {
        if let Some(v) = self.horizon {
            env.horizon = v;
        }
        if let Some(v) = self.success_radius {
            env.success_radius = v;
        }
        if let Some(v) = self.action_bound {
            env.action_bound = v;
        }
        if let Some(v) = self.train_goal_radius {
            env.train_goal_radius = v;
        }
        if let Some(v) = self.discount {
            env.discount = v;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Existing dataset file; mutually exclusive with the generation keys.
    pub path: Option<PathBuf>,
    pub kind: Option<String>,
    pub n_traj: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub name: Option<String>,
    pub total_updates: Option<u64>,
    pub batch_size: Option<usize>,
    pub policy_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub p_relabel: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub critic_hidden: Option<Vec<usize>>,
    pub n_members: Option<usize>,
    pub target_interval: Option<u64>,
    pub expectile_tau: Option<f64>,
    pub cql_alpha: Option<f64>,
    pub cql_k: Option<usize>,
    pub seed: Option<u64>,
    pub eval_every: Option<u64>,
    pub eval_goals: Option<usize>,
    pub log_every: Option<u64>,
}

impl AlgorithmSection {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.total_updates {
            cfg.total_updates = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.policy_lr {
            cfg.policy_lr = v;
        }
        if let Some(v) = self.critic_lr {
            cfg.critic_lr = v;
        }
        if let Some(v) = self.p_relabel {
            cfg.p_relabel = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = &self.critic_hidden {
            cfg.critic_hidden = v.clone();
        }
        if let Some(v) = self.n_members {
            cfg.n_members = v;
        }
        if let Some(v) = self.target_interval {
            cfg.target_interval = v;
        }
        if let Some(v) = self.expectile_tau {
            cfg.expectile_tau = Some(v);
        }
        if let Some(v) = self.cql_alpha {
            cfg.cql_alpha = v;
        }
        if let Some(v) = self.cql_k {
            cfg.cql_k = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if let Some(v) = self.eval_goals {
            cfg.eval_goals = v;
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    pub eaw: Option<bool>,
    pub dsw: Option<bool>,
    pub uw: Option<bool>,
    pub drw: Option<bool>,
    pub beta: Option<f64>,
    pub eaw_max: Option<f64>,
    pub eps_low: Option<f64>,
    pub alpha_final: Option<f64>,
    pub ramp_frac: Option<f64>,
    pub uw_scale: Option<f64>,
    pub uw_floor: Option<f64>,
    pub dsw_warmup: Option<usize>,
    pub queue_capacity: Option<usize>,
}

impl WeightsSection {
    pub fn apply(&self, cfg: &mut crate::weights::WeightConfig) {
        if let Some(v) = self.eaw {
            cfg.components.eaw = v;
        }
        if let Some(v) = self.dsw {
            cfg.components.dsw = v;
        }
        if let Some(v) = self.uw {
            cfg.components.uw = v;
        }
        if let Some(v) = self.drw {
            cfg.components.drw = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.eaw_max {
            cfg.eaw_max = v;
        }
        if let Some(v) = self.eps_low {
            cfg.eps_low = v;
        }
        if let Some(v) = self.alpha_final {
            cfg.alpha_final = v;
        }
        if let Some(v) = self.ramp_frac {
            cfg.ramp_frac = v;
        }
        if let Some(v) = self.uw_scale {
            cfg.uw_scale = v;
        }
        if let Some(v) = self.uw_floor {
            cfg.uw_floor = v;
        }
        if let Some(v) = self.dsw_warmup {
            cfg.dsw_warmup = v;
        }
        if let Some(v) = self.queue_capacity {
            cfg.queue_capacity = v;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub goals_per_set: Option<usize>,
    pub seeds: Option<u64>,
}

impl EvalSection {
    pub fn apply(&self, eval: &mut EvalSettings) {
        if let Some(v) = self.goals_per_set {
            eval.goals_per_set = v;
        }
        if let Some(v) = self.seeds {
            eval.seeds = v;
        }
    }
}

pub fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Multi-seed evaluation of one policy; aggregates are plain means and
/// population standard deviations over the evaluation seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiEvalReport {
    pub goals_per_set: usize,
    pub eval_seeds: Vec<u64>,
    pub mean_r10_success: f64,
    pub std_r10_success: f64,
    pub mean_r20_success: f64,
    pub std_r20_success: f64,
    pub mean_r10_return: f64,
    pub std_r10_return: f64,
    pub mean_r20_return: f64,
    pub std_r20_return: f64,
    pub mean_iid_success: f64,
    pub mean_ood_success: f64,
    pub per_seed: Vec<EvalReport>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Evaluate with `settings.seeds` independent goal draws derived from
/// `base_seed` and aggregate.
pub fn run_evaluation(
    env: &EnvConfig,
    policy: &NetworkPolicy,
    base_seed: u64,
    settings: &EvalSettings,
) -> Result<MultiEvalReport> {
    if settings.seeds == 0 {
        return Err(Error::config("evaluation needs at least one seed"));
    }
    let mut per_seed = Vec::new();
    let mut eval_seeds = Vec::new();
    for i in 0..settings.seeds {
        let seed = derive_seed(base_seed, 0xE5A1 + i);
        eval_seeds.push(seed);
        per_seed.push(evaluate(env, policy, seed, settings.goals_per_set)?);
    }
    let collect = |f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> { per_seed.iter().map(f).collect() };
    let (mean_r10_success, std_r10_success) = mean_std(&collect(&|r| r.r10.success_rate));
    let (mean_r20_success, std_r20_success) = mean_std(&collect(&|r| r.r20.success_rate));
    let (mean_r10_return, std_r10_return) = mean_std(&collect(&|r| r.r10.mean_return));
    let (mean_r20_return, std_r20_return) = mean_std(&collect(&|r| r.r20.mean_return));
    let (mean_iid_success, _) = mean_std(&collect(&|r| r.iid_r10_upper.success_rate));
    let (mean_ood_success, _) = mean_std(&collect(&|r| r.ood_all.success_rate));
    Ok(MultiEvalReport {
        goals_per_set: settings.goals_per_set,
        eval_seeds,
        mean_r10_success,
        std_r10_success,
        mean_r20_success,
        std_r20_success,
        mean_r10_return,
        std_r10_return,
        mean_r20_return,
        std_r20_return,
        mean_iid_success,
        mean_ood_success,
        per_seed,
    })
}

pub fn save_multi_eval_json(report: &MultiEvalReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::data(format!("report encode: {e}")))?;
    Ok(std::fs::write(path, text + "\n")?)
}

pub fn load_multi_eval_json(path: &Path) -> Result<MultiEvalReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn write_eval_csv(report: &MultiEvalReport, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "eval_seed,set,n_goals,success_rate,mean_return,mean_return_stop,mean_discounted_return,mean_final_distance"
    )?;
    for (seed, rep) in report.eval_seeds.iter().zip(&report.per_seed) {
        for (name, set) in [
            ("r10", &rep.r10),
            ("r20", &rep.r20),
            ("iid_r10_upper", &rep.iid_r10_upper),
            ("ood_r10_lower", &rep.ood_r10_lower),
            ("ood_all", &rep.ood_all),
        ] {
            writeln!(
                f,
                "{seed},{name},{},{},{},{},{},{}",
                set.n_goals,
                set.success_rate,
                set.mean_return,
                set.mean_return_stop,
                set.mean_discounted_return,
                set.mean_final_distance
            )?;
        }
    }
    f.into_inner().map_err(|e| Error::data(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetRef {
    path: PathBuf,
    sha256: String,
    kind: String,
    n_trajectories: usize,
    n_transitions: usize,
}

/// Everything a finished training run leaves behind.
#[derive(Debug)]
pub struct TrainRunOutput {
    pub run_dir: PathBuf,
    pub summary: TrainSummary,
    pub report: MultiEvalReport,
}

/// Execute one training run into `run_dir`, producing the full fixed
/// directory layout.
pub fn run_train(rc: &ResolvedRunConfig, run_dir: &Path) -> Result<TrainRunOutput> {
    let dataset_bytes = std::fs::read(&rc.dataset_path)?;
    let dataset = Dataset::load_ndjson(&rc.dataset_path)?;
    if dataset.env != rc.env {
        return Err(Error::config(format!(
            "environment settings disagree with the dataset file {}",
            rc.dataset_path.display()
        )));
    }

    std::fs::create_dir_all(run_dir)?;
    std::fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    std::fs::create_dir_all(run_dir.join(LOG_DIR))?;
    std::fs::create_dir_all(run_dir.join(REPORT_DIR))?;

    std::fs::write(run_dir.join(CONFIG_COPY), rc.to_toml()?)?;
    let ds_ref = DatasetRef {
        path: rc.dataset_path.clone(),
        sha256: sha256_hex(&dataset_bytes),
        kind: dataset.kind.label().to_string(),
        n_trajectories: dataset.trajectories.len(),
        n_transitions: dataset.n_transitions(),
    };
    std::fs::write(
        run_dir.join(DATASET_REF),
        serde_json::to_string_pretty(&ds_ref).map_err(|e| Error::data(e.to_string()))? + "\n",
    )?;

    let mut trainer = Trainer::new(dataset, rc.train.clone())?;
    let mut log_file = std::io::BufWriter::new(std::fs::File::create(
        run_dir.join(LOG_DIR).join(TRAIN_LOG),
    )?);
    let summary = trainer.train(Some(&mut log_file))?;
    log_file.flush()?;
    drop(log_file);

    // Weight diagnostics mirror the log rows in spreadsheet-friendly form.
    let mut wcsv = std::io::BufWriter::new(std::fs::File::create(
        run_dir.join(LOG_DIR).join(WEIGHTS_CSV),
    )?);
    writeln!(wcsv, "step,mean_eaw,frac_selected,mean_uw")?;
    for row in &summary.rows {
        writeln!(wcsv, "{},{},{},{}", row.step, row.mean_eaw, row.frac_selected, row.mean_uw)?;
    }
    wcsv.into_inner().map_err(|e| Error::data(format!("csv flush: {e}")))?;

    let policy = trainer.policy();
    policy.save_file(run_dir.join(CHECKPOINT_DIR).join(POLICY_FILE))?;
    if let Some(critic) = trainer.critic() {
        for (k, net) in critic.members().iter().enumerate() {
            checkpoint::save_file(
                net,
                run_dir.join(CHECKPOINT_DIR).join(format!("critic_member_{k}.bin")),
            )?;
        }
        for (k, net) in critic.targets().iter().enumerate() {
            checkpoint::save_file(
                net,
                run_dir.join(CHECKPOINT_DIR).join(format!("critic_target_{k}.bin")),
            )?;
        }
    }

    let report = run_evaluation(&rc.env, &policy, rc.train.seed, &rc.eval)?;
    save_multi_eval_json(&report, &run_dir.join(REPORT_DIR).join(EVAL_JSON))?;
    write_eval_csv(&report, &run_dir.join(REPORT_DIR).join(EVAL_CSV))?;

    Ok(TrainRunOutput { run_dir: run_dir.to_path_buf(), summary, report })
}

/// The three dataset regimes of the summary tables.
pub const TABLE_DATASETS: [(&str, DatasetKind, u64); 3] = [
    ("expert10", DatasetKind::Expert { n_traj: 10 }, 101),
    ("nonexpert10", DatasetKind::NonExpert { n_traj: 10, sigma: 0.2, p_random: 0.3 }, 102),
    ("nonexpert50", DatasetKind::NonExpert { n_traj: 50, sigma: 0.2, p_random: 0.3 }, 103),
];

/// Ensure the three table datasets exist under `dir`, generating any that
/// are missing. Returns `(label, path)` pairs in table order.
pub fn ensure_table_datasets(dir: &Path, env: &EnvConfig) -> Result<Vec<(String, PathBuf)>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (label, kind, seed) in TABLE_DATASETS {
        let path = dir.join(format!("{label}.ndjson"));
        if !path.exists() {
            let ds = generate_dataset(kind, env.clone(), seed)?;
            ds.save_ndjson(&path)?;
        }
        out.push((label.to_string(), path));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    Success,
    Return,
    Both,
}

#[derive(Debug, Clone)]
pub struct ReproduceSettings {
    pub out_root: PathBuf,
    /// Override every run's update budget (None keeps per-algorithm presets).
    pub updates: Option<u64>,
    pub train_seeds: u64,
    pub jobs: usize,
    pub goals_per_set: usize,
    pub table: TableKind,
    /// Skip runs whose evaluation report already exists.
    pub resume: bool,
}

#[derive(Debug)]
pub struct ReproduceOutcome {
    pub tables: Vec<PathBuf>,
    pub completed: usize,
    pub failures: Vec<String>,
}

struct PendingRun {
    algorithm: Algorithm,
    dataset_label: String,
    dataset_path: PathBuf,
    seed: u64,
    run_dir: PathBuf,
}

fn reproduce_run_id(algorithm: Algorithm, dataset_label: &str, seed: u64) -> String {
    format!("{}_{}_s{}", algorithm.name(), dataset_label, seed)
}

/// Sweep every algorithm over the three table datasets and the configured
/// seeds, each run in its own child process of `exe` (the tool binary), up
/// to `jobs` at a time. Emits the aggregate table CSVs.
pub fn run_reproduce(exe: &Path, s: &ReproduceSettings) -> Result<ReproduceOutcome> {
    let env = EnvConfig::default();
    let datasets = ensure_table_datasets(&s.out_root.join("datasets"), &env)?;
    let runs_dir = s.out_root.join("runs");
    std::fs::create_dir_all(&runs_dir)?;

    let mut pending = Vec::new();
    for algorithm in Algorithm::ALL {
        for (label, path) in &datasets {
            for seed in 0..s.train_seeds {
                let run_dir = runs_dir.join(reproduce_run_id(algorithm, label, seed));
                if s.resume && run_dir.join(REPORT_DIR).join(EVAL_JSON).exists() {
                    continue;
                }
                pending.push(PendingRun {
                    algorithm,
                    dataset_label: label.clone(),
                    dataset_path: path.clone(),
                    seed,
                    run_dir,
                });
            }
        }
    }

    let mut failures = Vec::new();
    let mut completed = 0usize;
    let jobs = s.jobs.max(1);
    let mut active: Vec<(std::process::Child, String)> = Vec::new();
    let mut queue = pending.into_iter();
    loop {
        while active.len() < jobs {
            let Some(run) = queue.next() else { break };
            let mut cmd = Command::new(exe);
            cmd.arg("train")
                .arg("--algo")
                .arg(run.algorithm.name())
                .arg("--data")
                .arg(&run.dataset_path)
                .arg("--seed")
                .arg(run.seed.to_string())
                .arg("--run-dir")
                .arg(&run.run_dir)
                .arg("--eval-n")
                .arg(s.goals_per_set.to_string())
                .arg("--quiet");
            if let Some(u) = s.updates {
                cmd.arg("--updates").arg(u.to_string());
            }
            let label = reproduce_run_id(run.algorithm, &run.dataset_label, run.seed);
            match cmd.spawn() {
                Ok(child) => active.push((child, label)),
                Err(e) => failures.push(format!("{label}: spawn failed: {e}")),
            }
        }
        if active.is_empty() {
            break;
        }
        // Reap whichever child finishes first.
        let mut reaped = false;
        while !reaped {
            for i in 0..active.len() {
                if let Some(status) = active[i].0.try_wait()? {
                    let (_, label) = active.remove(i);
                    if status.success() {
                        completed += 1;
                    } else {
                        failures.push(format!("{label}: exit status {status}"));
                    }
                    reaped = true;
                    break;
                }
            }
            if !reaped {
                std::thread::sleep(std::time::Duration::from_millis(40));
            }
        }
    }

    let tables_dir = s.out_root.join("tables");
    std::fs::create_dir_all(&tables_dir)?;
    let mut tables = Vec::new();
    let specs: &[(&str, bool)] = match s.table {
        TableKind::Success => &[("point_success.csv", true)],
        TableKind::Return => &[("point_return.csv", false)],
        TableKind::Both => &[("point_success.csv", true), ("point_return.csv", false)],
    };
    for (file, success) in specs {
        let path = tables_dir.join(file);
        write_table(&runs_dir, &datasets, s.train_seeds, *success, &path, &mut failures)?;
        tables.push(path);
    }
    Ok(ReproduceOutcome { tables, completed, failures })
}

/// Aggregate per-run reports into a `mean±std` cell table, one row per
/// algorithm, `(R10, R20)` column pairs per dataset.
fn write_table(
    runs_dir: &Path,
    datasets: &[(String, PathBuf)],
    train_seeds: u64,
    success: bool,
    out_path: &Path,
    failures: &mut Vec<String>,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    let mut header = String::from("algorithm");
    for (label, _) in datasets {
        header.push_str(&format!(",{label}_r10,{label}_r20"));
    }
    writeln!(f, "{header}")?;
    for algorithm in Algorithm::ALL {
        let mut line = algorithm.name().to_string();
        for (label, _) in datasets {
            let mut r10 = Vec::new();
            let mut r20 = Vec::new();
            for seed in 0..train_seeds {
                let report_path = runs_dir
                    .join(reproduce_run_id(algorithm, label, seed))
                    .join(REPORT_DIR)
                    .join(EVAL_JSON);
                match load_multi_eval_json(&report_path) {
                    Ok(rep) => {
                        if success {
                            r10.push(rep.mean_r10_success);
                            r20.push(rep.mean_r20_success);
                        } else {
                            r10.push(rep.mean_r10_return);
                            r20.push(rep.mean_r20_return);
                        }
                    }
                    Err(e) => failures.push(format!(
                        "{}: report missing: {e}",
                        reproduce_run_id(algorithm, label, seed)
                    )),
                }
            }
            for set in [&r10, &r20] {
                if set.is_empty() {
                    line.push_str(",missing");
                } else {
                    let (m, sd) = mean_std(set);
                    line.push_str(&format!(",{m:.3}±{sd:.3}"));
                }
            }
        }
        writeln!(f, "{line}")?;
    }
    f.into_inner().map_err(|e| Error::data(format!("table flush: {e}")))?;
    Ok(())
}

/// Verification report for the capped worst-case shift properties.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoryReport {
    pub n: usize,
    pub cap: f64,
    pub trials: usize,
    pub seed: u64,
    pub uniform_worst_case: f64,
    /// Closed-form value for the uniform source; equals `2(1 - 1/(cap*n))`
    /// whenever `1/cap` is a whole number.
    pub closed_form_uniform: f64,
    pub uniform_matches_closed_form: bool,
    pub min_margin: f64,
    pub mean_margin: f64,
    pub violations: usize,
    /// Random instances cross-checked against exhaustive enumeration.
    pub brute_instances: usize,
    pub brute_max_abs_diff: f64,
    pub passed: bool,
    pub minimax: MinimaxReport,
}

/// Closed-form worst case against the uniform source. The subset-size
/// trade-off `min(cap*k, 1) - k/n` is piecewise linear with its peak at
/// `k = 1/cap`, so only the two surrounding integers can attain the max.
pub fn uniform_closed_form(n: usize, cap: f64) -> f64 {
    let at = |k: f64| (cap * k).min(1.0) - k / n as f64;
    let k0 = (1.0 / cap).floor().min(n as f64);
    let k1 = (1.0 / cap).ceil().min(n as f64);
    2.0 * at(k0).max(at(k1))
}

/// Run the uniform-minimax property plus an enumeration cross-check of the
/// closed-form worst case on random small instances.
pub fn run_verify_theory(n: usize, cap: f64, trials: usize, seed: u64) -> Result<TheoryReport> {
    let minimax = verify_uniform_minimax(n, cap, trials, seed)?;
    let closed_form_uniform = uniform_closed_form(n, cap);
    let uniform_matches_closed_form =
        (minimax.uniform_worst_case - closed_form_uniform).abs() < 1e-12;

    use rand::Rng;
    let mut rng = stream_rng(seed, 0x7E07);
    let mut brute_max_abs_diff = 0.0f64;
    let brute_instances = 50;
    for _ in 0..brute_instances {
        let m = rng.gen_range(2..=8);
        let mut p: Vec<f64> = (0..m).map(|_| -(rng.gen_range(1e-12..1.0f64)).ln()).collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        let dist = DiscreteDist::new(p)?;
        let c = rng.gen_range((1.0 / m as f64) * 1.05..1.0);
        let family = CapFamily::new(m, c)?;
        let fast = worst_case_d1(&dist, &family)?;
        let brute = brute_force_worst_case(&dist, &family)?;
        brute_max_abs_diff = brute_max_abs_diff.max((fast - brute).abs());
    }

    let passed = minimax.passed() && uniform_matches_closed_form && brute_max_abs_diff < 1e-9;
    Ok(TheoryReport {
        n,
        cap,
        trials,
        seed,
        uniform_worst_case: minimax.uniform_worst_case,
        closed_form_uniform,
        uniform_matches_closed_form,
        min_margin: minimax.min_margin,
        mean_margin: minimax.mean_margin,
        violations: minimax.failures.len(),
        brute_instances,
        brute_max_abs_diff,
        passed,
        minimax,
    })
}

//! Training loops: a weighted-imitation ladder (plain cloning up to the
//! full uncertainty/advantage/selection product) and two actor-critic
//! baselines that maximize the learned action value directly.
//!
//! Every update follows the same fixed order: sample a minibatch, relabel
//! goals, update the critic, compute advantages and ensemble spreads, fold
//! them through the running weight windows, then take one policy step.
//! All randomness flows from named streams of the config seed, so a
//! `(config, dataset)` pair fully determines the resulting parameters.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{CqlBatch, CriticBatch, CriticConfig, EnsembleCritic};
use crate::env::{Dataset, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, NetworkPolicy, Policy};
use crate::nn::{Activation, AdamConfig, AdamState, Network, OutputActivation, ParamGrads};
use crate::replay::{sample_batch, DatasetStats, RelabeledSample};
use crate::rng::{derive_seed, labels, stream_rng};
use crate::weights::{WeightComponents, WeightConfig, WeightEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Plain behavior cloning on the recorded goals.
    Bc,
    /// Cloning on relabeled goals, uniform weights.
    Gcsl,
    /// Exponential advantage weighting only.
    MarwilHer,
    /// Advantage weighting plus quantile selection.
    Wgcsl,
    /// Full product: uncertainty, advantage, selection over an ensemble.
    Goat,
    /// Same with the expectile TD loss in the critic.
    GoatTau,
    /// Policy ascends the learned Q directly.
    DdpgHer,
    /// Q ascent with a conservative penalty on unseen actions.
    CqlHer,
}

/// How the policy step uses the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyObjective {
    /// Weighted squared error against recorded actions.
    Imitation,
    /// Gradient ascent on the ensemble-mean action value.
    CriticMax,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Bc,
        Algorithm::Gcsl,
        Algorithm::MarwilHer,
        Algorithm::Wgcsl,
        Algorithm::Goat,
        Algorithm::GoatTau,
        Algorithm::DdpgHer,
        Algorithm::CqlHer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bc => "bc",
            Algorithm::Gcsl => "gcsl",
            Algorithm::MarwilHer => "marwil_her",
            Algorithm::Wgcsl => "wgcsl",
            Algorithm::Goat => "goat",
            Algorithm::GoatTau => "goat_tau",
            Algorithm::DdpgHer => "ddpg_her",
            Algorithm::CqlHer => "cql_her",
        }
    }

    pub fn from_name(name: &str) -> Result<Algorithm> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
                Error::config(format!("unknown algorithm {name:?}, expected one of {known:?}"))
            })
    }

    pub fn uses_critic(self) -> bool {
        !matches!(self, Algorithm::Bc | Algorithm::Gcsl)
    }

    pub fn objective(self) -> PolicyObjective {
        match self {
            Algorithm::DdpgHer | Algorithm::CqlHer => PolicyObjective::CriticMax,
            _ => PolicyObjective::Imitation,
        }
    }

    fn default_components(self) -> WeightComponents {
        let mut c = WeightComponents::NONE;
        match self {
            Algorithm::Bc | Algorithm::Gcsl | Algorithm::DdpgHer | Algorithm::CqlHer => {}
            Algorithm::MarwilHer => c.eaw = true,
            Algorithm::Wgcsl => {
                c.eaw = true;
                c.dsw = true;
            }
            Algorithm::Goat | Algorithm::GoatTau => {
                c.eaw = true;
                c.dsw = true;
                c.uw = true;
            }
        }
        c
    }

    fn default_members(self) -> usize {
        match self {
            Algorithm::Goat | Algorithm::GoatTau => 5,
            _ => 1,
        }
    }

    fn default_relabel(self) -> f64 {
        if self == Algorithm::Bc {
            0.0
        } else {
            1.0
        }
    }

    fn default_tau(self) -> Option<f64> {
        if self == Algorithm::GoatTau {
            Some(0.1)
        } else {
            None
        }
    }

    fn default_cql_alpha(self) -> f64 {
        if self == Algorithm::CqlHer {
            1.0
        } else {
            0.0
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub total_updates: u64,
    pub batch_size: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub p_relabel: f64,
    /// Policy network hidden layer sizes. Width drives how well the learned
    /// action map extrapolates beyond the data region, so the policy gets a
    /// wider default than the critic.
    pub hidden: Vec<usize>,
    /// Critic network hidden layer sizes; kept narrower because every
    /// update pays for `2 * n_members` critic passes.
    pub critic_hidden: Vec<usize>,
    pub n_members: usize,
    pub target_interval: u64,
    /// Expectile level of the critic TD loss; `None` is plain squared error.
    pub expectile_tau: Option<f64>,
    pub cql_alpha: f64,
    /// Random actions per sample feeding the conservative penalty.
    pub cql_k: usize,
    pub seed: u64,
    pub weights: WeightConfig,
    /// Rollout-evaluation period in updates; 0 evaluates only at the end.
    pub eval_every: u64,
    /// Goals per circle for in-training evaluations.
    pub eval_goals: usize,
    /// Log-row period in updates; 0 logs only the final row.
    pub log_every: u64,
}

impl TrainConfig {
    /// Defaults for one algorithm: which weight factors are active, the
    /// ensemble size, the relabeling rate, and the critic loss.
    pub fn preset(algorithm: Algorithm, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm,
            total_updates: 50_000,
            batch_size: 512,
            policy_lr: 5e-4,
            critic_lr: 5e-4,
            p_relabel: algorithm.default_relabel(),
            hidden: vec![128, 128],
            critic_hidden: vec![64, 64],
            n_members: algorithm.default_members(),
            target_interval: 50,
            expectile_tau: algorithm.default_tau(),
            cql_alpha: algorithm.default_cql_alpha(),
            cql_k: 10,
            seed,
            weights: WeightConfig {
                components: algorithm.default_components(),
                ..Default::default()
            },
            eval_every: 2500,
            eval_goals: 50,
            log_every: 250,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_updates == 0 {
            return Err(Error::config("training needs at least one update"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.policy_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err(Error::config(format!(
                "learning rates must be positive, got policy {} critic {}",
                self.policy_lr, self.critic_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.p_relabel) {
            return Err(Error::config(format!(
                "relabel probability must lie in [0,1], got {}",
                self.p_relabel
            )));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(format!("bad hidden sizes {:?}", self.hidden)));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(format!("bad critic hidden sizes {:?}", self.critic_hidden)));
        }
        if self.algorithm.uses_critic() && self.n_members == 0 {
            return Err(Error::config("critic algorithms need at least one ensemble member"));
        }
        if !(self.cql_alpha >= 0.0) {
            return Err(Error::config(format!(
                "conservative penalty weight must be >= 0, got {}",
                self.cql_alpha
            )));
        }
        if self.algorithm == Algorithm::CqlHer && self.cql_k == 0 {
            return Err(Error::config("conservative penalty needs at least one sampled action"));
        }
        if self.eval_goals == 0 {
            return Err(Error::config("in-training evaluation needs at least one goal"));
        }
        self.weights.validate()
    }
}

/// Weighted squared action error and its parameter gradient:
/// `(1/B) * sum_i w_i * ||out_i * bound - a_i||^2`.
pub fn policy_loss_and_grads(
    net: &Network,
    rows: &[f64],
    actions: &[f64],
    weights: &[f64],
    action_bound: f64,
) -> Result<(f64, ParamGrads)> {
    let b = weights.len();
    let out_dim = net.output_dim();
    if rows.len() != b * net.input_dim() || actions.len() != b * out_dim {
        return Err(Error::shape(format!(
            "policy loss inputs disagree: {} rows, {} actions, {} weights",
            rows.len(),
            actions.len(),
            b
        )));
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= 0.0 {
            return Err(Error::numeric(format!("weight {i} must be finite and positive, got {w}")));
        }
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let (_, grads) = net.forward_backward_batch(rows, b, |out| {
        let mut upstream = vec![0.0; b * out_dim];
        for i in 0..b {
            let w = weights[i];
            for j in 0..out_dim {
                let e = out[i * out_dim + j] * action_bound - actions[i * out_dim + j];
                loss += w * e * e;
                upstream[i * out_dim + j] = 2.0 * w * e * action_bound * inv_b;
            }
        }
        upstream
    })?;
    Ok((loss * inv_b, grads))
}

/// The loss alone, without touching gradients.
pub fn policy_loss(
    net: &Network,
    rows: &[f64],
    actions: &[f64],
    weights: &[f64],
    action_bound: f64,
) -> Result<f64> {
    let b = weights.len();
    let out_dim = net.output_dim();
    if rows.len() != b * net.input_dim() || actions.len() != b * out_dim {
        return Err(Error::shape("policy loss inputs disagree"));
    }
    let out = net.forward_batch(rows, b)?;
    let mut loss = 0.0;
    for i in 0..b {
        for j in 0..out_dim {
            let e = out[i * out_dim + j] * action_bound - actions[i * out_dim + j];
            loss += weights[i] * e * e;
        }
    }
    Ok(loss / b as f64)
}

/// Unweighted mean squared action error of a policy on recorded samples.
pub fn empirical_imitation_loss<P: Policy + ?Sized>(
    policy: &P,
    samples: &[RelabeledSample],
) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for s in samples {
        let a = policy.act(s.state, s.goal);
        let dx = a[0] - s.action[0];
        let dy = a[1] - s.action[1];
        acc += dx * dx + dy * dy;
    }
    acc / samples.len() as f64
}

/// Diagnostics from one update.
#[derive(Debug, Clone)]
pub struct StepStats {
    /// 0-based index of the update that produced these numbers.
    pub step: u64,
    pub policy_loss: f64,
    pub critic_loss: Option<f64>,
    pub mean_advantage: Option<f64>,
    pub mean_eaw: f64,
    pub mean_uw: f64,
    pub frac_selected: f64,
    pub threshold: Option<f64>,
    pub alpha: f64,
}

/// One NDJSON log row; evaluation fields are filled on evaluation epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub policy_loss: f64,
    pub critic_loss: Option<f64>,
    #[serde(rename = "mean_A")]
    pub mean_advantage: Option<f64>,
    pub frac_selected: f64,
    pub mean_uw: f64,
    pub mean_eaw: f64,
    #[serde(rename = "eval_R10")]
    pub eval_r10: Option<f64>,
    #[serde(rename = "eval_R20")]
    pub eval_r20: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_policy_loss: f64,
    pub final_critic_loss: Option<f64>,
    /// Every row that was logged (and written, when a sink was given).
    pub rows: Vec<LogRow>,
}

pub struct Trainer {
    cfg: TrainConfig,
    env: EnvConfig,
    dataset: Dataset,
    stats: DatasetStats,
    policy_net: Network,
    policy_optim: AdamState,
    critic: Option<EnsembleCritic>,
    weight_engine: WeightEngine,
    sampler_rng: ChaCha12Rng,
    cql_rng: ChaCha12Rng,
    step: u64,
}

impl Trainer {
    pub fn new(dataset: Dataset, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let env = dataset.env.clone();
        env.validate()?;
        if dataset.trajectories.is_empty() {
            return Err(Error::data("cannot train on an empty dataset"));
        }
        let stats = DatasetStats::fit(&dataset)?;
        let mut sizes = vec![NetworkPolicy::INPUT_DIM];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(NetworkPolicy::OUTPUT_DIM);
        let policy_net = Network::new(
            &sizes,
            Activation::Relu,
            OutputActivation::Tanh,
            derive_seed(cfg.seed, labels::POLICY_INIT),
        )?;
        let policy_optim = AdamState::new(&policy_net, AdamConfig::default())?;
        let critic = if cfg.algorithm.uses_critic() {
            Some(EnsembleCritic::new(CriticConfig {
                n_members: cfg.n_members,
                hidden: cfg.critic_hidden.clone(),
                activation: Activation::Relu,
                tau: cfg.expectile_tau,
                target_interval: cfg.target_interval,
                lr: cfg.critic_lr,
                discount: env.discount,
                seed: cfg.seed,
            })?)
        } else {
            None
        };
        let weight_engine = WeightEngine::new(cfg.weights.clone())?;
        let sampler_rng = stream_rng(cfg.seed, labels::BATCH_SAMPLER);
        let cql_rng = stream_rng(cfg.seed, labels::CQL_ACTIONS);
        Ok(Trainer {
            cfg,
            env,
            dataset,
            stats,
            policy_net,
            policy_optim,
            critic,
            weight_engine,
            sampler_rng,
            cql_rng,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }
    pub fn env(&self) -> &EnvConfig {
        &self.env
    }
    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }
    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }
    pub fn critic(&self) -> Option<&EnsembleCritic> {
        self.critic.as_ref()
    }
    pub fn completed_updates(&self) -> u64 {
        self.step
    }

    /// Snapshot of the current policy.
    pub fn policy(&self) -> NetworkPolicy {
        NetworkPolicy::new(self.policy_net.clone(), self.stats.clone(), self.env.action_bound)
            .expect("trainer-built policy network always has the policy shape")
    }

    /// One full update in the fixed order; see the module docs.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let b = self.cfg.batch_size;
        let bound = self.env.action_bound;
        let batch = sample_batch(&self.dataset, b, self.cfg.p_relabel, &mut self.sampler_rng)?;

        let mut policy_rows = Vec::with_capacity(b * 4);
        let mut next_policy_rows = Vec::with_capacity(b * 4);
        let mut actions = Vec::with_capacity(b * 2);
        let mut rewards = Vec::with_capacity(b);
        for s in &batch {
            let ns = self.stats.state.normalize(&s.state);
            let nn = self.stats.state.normalize(&s.next_state);
            let ng = self.stats.goal.normalize(&s.goal);
            policy_rows.extend([ns[0], ns[1], ng[0], ng[1]]);
            next_policy_rows.extend([nn[0], nn[1], ng[0], ng[1]]);
            actions.extend(s.action);
            rewards.push(s.reward);
        }

        let mut critic_loss = None;
        let mut mean_advantage = None;
        let mut advs = vec![0.0; b];
        let mut spreads = vec![0.0; b];
        let mut now_rows = Vec::new();
        if let Some(critic) = &mut self.critic {
            // Critic rows combine normalized state/goal with raw actions.
            let out_now = self.policy_net.forward_batch(&policy_rows, b)?;
            let out_next = self.policy_net.forward_batch(&next_policy_rows, b)?;
            now_rows.reserve(b * 6);
            let mut q_rows = Vec::with_capacity(b * 6);
            let mut target_rows = Vec::with_capacity(b * 6);
            for i in 0..b {
                let p = &policy_rows[i * 4..(i + 1) * 4];
                let n = &next_policy_rows[i * 4..(i + 1) * 4];
                q_rows.extend([p[0], p[1], actions[2 * i], actions[2 * i + 1], p[2], p[3]]);
                now_rows.extend([
                    p[0],
                    p[1],
                    out_now[2 * i] * bound,
                    out_now[2 * i + 1] * bound,
                    p[2],
                    p[3],
                ]);
                target_rows.extend([
                    n[0],
                    n[1],
                    out_next[2 * i] * bound,
                    out_next[2 * i + 1] * bound,
                    n[2],
                    n[3],
                ]);
            }
            let mut cql_rows = Vec::new();
            let cql = if self.cfg.algorithm == Algorithm::CqlHer {
                let k = self.cfg.cql_k;
                cql_rows.reserve(b * k * 6);
                for i in 0..b {
                    let p = &policy_rows[i * 4..(i + 1) * 4];
                    for _ in 0..k {
                        let ax = self.cql_rng.gen_range(-bound..bound);
                        let ay = self.cql_rng.gen_range(-bound..bound);
                        cql_rows.extend([p[0], p[1], ax, ay, p[2], p[3]]);
                    }
                }
                Some(CqlBatch { random_inputs: &cql_rows, k, alpha: self.cfg.cql_alpha })
            } else {
                None
            };
            let stats = critic.td_update(&CriticBatch {
                q_inputs: &q_rows,
                target_inputs: &target_rows,
                rewards: &rewards,
                batch: b,
                cql,
            })?;
            critic_loss = Some(
                stats.member_losses.iter().sum::<f64>() / stats.member_losses.len() as f64,
            );
            // Advantages and spreads from the just-updated ensemble, at the
            // current policy's actions.
            let est = critic.advantages(&now_rows, &target_rows, &rewards, b)?;
            for (i, e) in est.iter().enumerate() {
                advs[i] = e.a;
            }
            mean_advantage = Some(advs.iter().sum::<f64>() / b as f64);
            let (_, sp) = critic.value_and_spread(&now_rows, b)?;
            spreads = sp;
        }

        let mut gaps = Vec::with_capacity(b);
        for s in &batch {
            let gap = match s.relabel_index {
                Some(j) => Some(j.checked_sub(s.original_index).ok_or_else(|| {
                    Error::index(format!(
                        "relabel source {} precedes transition {}",
                        j, s.original_index
                    ))
                })?),
                None => None,
            };
            gaps.push(gap);
        }
        let w = self.weight_engine.batch_weights(
            &advs,
            &spreads,
            &gaps,
            self.env.discount,
            self.step,
            self.cfg.total_updates,
        )?;

        let policy_loss = match self.cfg.algorithm.objective() {
            PolicyObjective::Imitation => {
                let (loss, grads) = policy_loss_and_grads(
                    &self.policy_net,
                    &policy_rows,
                    &actions,
                    &w.total,
                    bound,
                )?;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "policy loss is not finite at update {}",
                        self.step
                    )));
                }
                self.policy_optim.step(&mut self.policy_net, &grads, self.cfg.policy_lr)?;
                loss
            }
            PolicyObjective::CriticMax => {
                let critic = self.critic.as_ref().expect("critic-max algorithms own a critic");
                let n = critic.n_members();
                // d(-mean Q)/d(action slots), summed over members.
                let upstream = vec![-1.0 / (b as f64 * n as f64); b];
                let mut d_action = vec![0.0; b * 2];
                for m in 0..n {
                    let (_, dx) =
                        critic.members()[m].backward_batch_with_input_grad(&now_rows, b, &upstream)?;
                    for i in 0..b {
                        d_action[2 * i] += dx[i * 6 + 2];
                        d_action[2 * i + 1] += dx[i * 6 + 3];
                    }
                }
                let mut policy_upstream = vec![0.0; b * 2];
                for (u, d) in policy_upstream.iter_mut().zip(&d_action) {
                    *u = d * bound;
                }
                let grads = self.policy_net.backward_batch(&policy_rows, b, &policy_upstream)?;
                let v = critic.value(&now_rows, b)?;
                let loss = -v.iter().sum::<f64>() / b as f64;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "value objective is not finite at update {}",
                        self.step
                    )));
                }
                self.policy_optim.step(&mut self.policy_net, &grads, self.cfg.policy_lr)?;
                loss
            }
        };
        if let Some(cl) = critic_loss {
            if !cl.is_finite() {
                return Err(Error::numeric(format!(
                    "critic loss is not finite at update {}",
                    self.step
                )));
            }
        }

        let stats = StepStats {
            step: self.step,
            policy_loss,
            critic_loss,
            mean_advantage,
            mean_eaw: w.eaw.iter().sum::<f64>() / b as f64,
            mean_uw: w.uw.iter().sum::<f64>() / b as f64,
            frac_selected: w.frac_selected,
            threshold: w.threshold,
            alpha: w.alpha,
        };
        self.step += 1;
        Ok(stats)
    }

    fn quick_eval(&self) -> Result<(f64, f64)> {
        let policy = self.policy();
        let report = evaluate(&self.env, &policy, self.cfg.seed, self.cfg.eval_goals)?;
        Ok((report.r10.success_rate, report.r20.success_rate))
    }

    /// Run the configured number of updates, optionally streaming NDJSON
    /// log rows into `sink`. The final row always carries an evaluation.
    pub fn train(&mut self, mut sink: Option<&mut dyn Write>) -> Result<TrainSummary> {
        let total = self.cfg.total_updates;
        let mut rows = Vec::new();
        let mut final_policy_loss = f64::NAN;
        let mut final_critic_loss = None;
        while self.step < total {
            let stats = self.train_step()?;
            let done = stats.step + 1; // completed updates after this step
            final_policy_loss = stats.policy_loss;
            final_critic_loss = stats.critic_loss;
            let last = done == total;
            let log_due = last || (self.cfg.log_every > 0 && done % self.cfg.log_every == 0);
            let eval_due = last || (self.cfg.eval_every > 0 && done % self.cfg.eval_every == 0);
            if !log_due && !eval_due {
                continue;
            }
            let (eval_r10, eval_r20) = if eval_due {
                let (a, b) = self.quick_eval()?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            let row = LogRow {
                step: done,
                policy_loss: stats.policy_loss,
                critic_loss: stats.critic_loss,
                mean_advantage: stats.mean_advantage,
                frac_selected: stats.frac_selected,
                mean_uw: stats.mean_uw,
                mean_eaw: stats.mean_eaw,
                eval_r10,
                eval_r20,
            };
            if let Some(out) = sink.as_deref_mut() {
                let line = serde_json::to_string(&row)
                    .map_err(|e| Error::data(format!("log row encode: {e}")))?;
                writeln!(out, "{line}")?;
            }
            rows.push(row);
        }
        Ok(TrainSummary {
            steps: self.step,
            final_policy_loss,
            final_critic_loss,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, DatasetKind};
    use crate::eval::OptimalPolicy;
    use crate::nn::checkpoint;

    fn small_dataset(kind: DatasetKind, seed: u64) -> Dataset {
        generate_dataset(kind, EnvConfig::default(), seed).unwrap()
    }

    fn quick(algorithm: Algorithm, updates: u64) -> TrainConfig {
        TrainConfig {
            total_updates: updates,
            batch_size: 64,
            hidden: vec![32, 32],
            critic_hidden: vec![32, 32],
            log_every: 0,
            eval_every: 0,
            ..TrainConfig::preset(algorithm, 7)
        }
    }

    #[test]
    fn presets_encode_the_component_ladder() {
        use Algorithm::*;
        let c = |a: Algorithm| TrainConfig::preset(a, 0).weights.components;
        assert_eq!(c(Bc), WeightComponents::NONE);
        assert_eq!(c(Gcsl), WeightComponents::NONE);
        assert_eq!(c(MarwilHer), WeightComponents { eaw: true, ..WeightComponents::NONE });
        assert_eq!(
            c(Wgcsl),
            WeightComponents { eaw: true, dsw: true, ..WeightComponents::NONE }
        );
        assert_eq!(
            c(Goat),
            WeightComponents { eaw: true, dsw: true, uw: true, drw: false }
        );
        assert_eq!(c(Goat), c(GoatTau));
        assert_eq!(c(DdpgHer), WeightComponents::NONE);
        assert_eq!(TrainConfig::preset(Bc, 0).p_relabel, 0.0);
        assert_eq!(TrainConfig::preset(Gcsl, 0).p_relabel, 1.0);
        assert_eq!(TrainConfig::preset(Goat, 0).n_members, 5);
        assert_eq!(TrainConfig::preset(Wgcsl, 0).n_members, 1);
        assert_eq!(TrainConfig::preset(GoatTau, 0).expectile_tau, Some(0.1));
        assert_eq!(TrainConfig::preset(CqlHer, 0).cql_alpha, 1.0);
        assert_eq!(TrainConfig::preset(DdpgHer, 0).cql_alpha, 0.0);
        assert!(!Bc.uses_critic() && !Gcsl.uses_critic());
        assert!(MarwilHer.uses_critic() && Goat.uses_critic() && DdpgHer.uses_critic());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(Algorithm::from_name(a.name()).unwrap(), a);
        }
        assert!(Algorithm::from_name("gato").is_err());
    }

    #[test]
    fn critic_free_algorithms_have_no_ensemble() {
        let ds = small_dataset(DatasetKind::expert(3), 1);
        for a in [Algorithm::Bc, Algorithm::Gcsl] {
            let t = Trainer::new(ds.clone(), quick(a, 1)).unwrap();
            assert!(t.critic().is_none(), "{a} must not build a critic");
        }
        let t = Trainer::new(ds, quick(Algorithm::Wgcsl, 1)).unwrap();
        assert_eq!(t.critic().unwrap().n_members(), 1);
    }

    #[test]
    fn policy_loss_zero_when_outputs_match_actions() {
        let net =
            Network::new(&[4, 8, 2], Activation::Relu, OutputActivation::Tanh, 5).unwrap();
        let rows: Vec<f64> = (0..4 * 4).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = net.forward_batch(&rows, 4).unwrap();
        let weights = vec![1.0; 4];
        let loss = policy_loss(&net, &rows, &out, &weights, 1.0).unwrap();
        assert_eq!(loss, 0.0, "matching targets give exactly zero loss");
    }

    #[test]
    fn policy_loss_uniform_weights_reduce_to_plain_mse() {
        let net =
            Network::new(&[4, 8, 2], Activation::Relu, OutputActivation::Tanh, 6).unwrap();
        let rows: Vec<f64> = (0..3 * 4).map(|i| (i as f64 * 0.51).cos()).collect();
        let actions = vec![0.3, -0.2, 0.1, 0.9, -0.5, 0.0];
        let weights = vec![1.0; 3];
        let loss = policy_loss(&net, &rows, &actions, &weights, 1.0).unwrap();
        let out = net.forward_batch(&rows, 3).unwrap();
        let mut mse = 0.0;
        for i in 0..6 {
            let e = out[i] - actions[i];
            mse += e * e;
        }
        mse /= 3.0;
        assert!((loss - mse).abs() < 1e-15);
    }

    #[test]
    fn policy_loss_scales_linearly_in_the_weights() {
        let net =
            Network::new(&[4, 8, 2], Activation::Relu, OutputActivation::Tanh, 8).unwrap();
        let rows: Vec<f64> = (0..5 * 4).map(|i| (i as f64 * 0.13).sin()).collect();
        let actions: Vec<f64> = (0..5 * 2).map(|i| (i as f64 * 0.7).cos() * 0.5).collect();
        let w1 = vec![0.8; 5];
        let w2: Vec<f64> = w1.iter().map(|w| 2.0 * w).collect();
        let (l1, g1) = policy_loss_and_grads(&net, &rows, &actions, &w1, 1.0).unwrap();
        let (l2, mut g2) = policy_loss_and_grads(&net, &rows, &actions, &w2, 1.0).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12, "doubled weights double the loss");
        g2.scaled_add(&g1, -2.0);
        assert!(g2.max_abs() < 1e-12, "doubled weights double every gradient entry");
    }

    #[test]
    fn policy_loss_rejects_bad_weights() {
        let net =
            Network::new(&[4, 8, 2], Activation::Relu, OutputActivation::Tanh, 9).unwrap();
        let rows = vec![0.0; 4];
        let actions = vec![0.0; 2];
        assert!(policy_loss_and_grads(&net, &rows, &actions, &[0.0], 1.0).is_err());
        assert!(policy_loss_and_grads(&net, &rows, &actions, &[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn imitation_loss_is_zero_for_the_expert_on_its_own_data() {
        let ds = small_dataset(DatasetKind::expert(5), 3);
        let mut rng = stream_rng(1, 0xAB);
        let samples = sample_batch(&ds, 200, 0.0, &mut rng).unwrap();
        let expert = OptimalPolicy { env: ds.env.clone() };
        let loss = empirical_imitation_loss(&expert, &samples);
        assert!(loss < 1e-6, "expert actions are its own actions, loss {loss}");
    }

    #[test]
    fn imitation_loss_of_standing_still_on_expert_data_is_large() {
        let ds = small_dataset(DatasetKind::expert(5), 3);
        let mut rng = stream_rng(2, 0xAB);
        let mut samples = sample_batch(&ds, 400, 0.0, &mut rng).unwrap();
        // Keep transitions where the goal is still far: there the expert's
        // larger action component saturates at the bound.
        samples.retain(|s| crate::env::dist(s.state, s.goal) >= 2.0);
        assert!(samples.len() >= 50, "expert trajectories spend early steps far from the goal");
        let loss = empirical_imitation_loss(&crate::eval::ZeroPolicy, &samples);
        assert!(loss >= 0.5, "expert actions saturate toward distant goals, loss {loss}");
    }

    #[test]
    fn bc_fits_clean_expert_data() {
        let ds = small_dataset(DatasetKind::expert(10), 11);
        let mut cfg = quick(Algorithm::Bc, 1500);
        cfg.batch_size = 256;
        cfg.policy_lr = 1e-3;
        let mut t = Trainer::new(ds.clone(), cfg).unwrap();
        let summary = t.train(None).unwrap();
        assert!(
            summary.final_policy_loss < 1e-2,
            "clean expert data is fittable, final loss {}",
            summary.final_policy_loss
        );
        let mut rng = stream_rng(3, 0xAB);
        let samples = sample_batch(&ds, 500, 0.0, &mut rng).unwrap();
        let loss = empirical_imitation_loss(&t.policy(), &samples);
        assert!(loss < 2e-2, "held-in imitation loss {loss}");
    }

    #[test]
    fn bc_loss_trend_is_mostly_nonincreasing() {
        let ds = small_dataset(DatasetKind::expert(10), 12);
        let mut cfg = quick(Algorithm::Bc, 1000);
        cfg.batch_size = 256;
        let mut t = Trainer::new(ds.clone(), cfg).unwrap();
        let mut rng = stream_rng(4, 0xAB);
        let probe = sample_batch(&ds, 300, 0.0, &mut rng).unwrap();
        let mut curve = Vec::new();
        for _ in 0..10 {
            for _ in 0..100 {
                t.train_step().unwrap();
            }
            curve.push(empirical_imitation_loss(&t.policy(), &probe));
        }
        let violations = curve.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(violations <= 1, "loss curve {curve:?} rose {violations} times");
    }

    #[test]
    fn same_config_and_seed_give_identical_artifacts() {
        let ds = small_dataset(DatasetKind::non_expert(5), 21);
        let cfg = quick(Algorithm::Goat, 30);
        let mut a = Trainer::new(ds.clone(), cfg.clone()).unwrap();
        let mut b = Trainer::new(ds, cfg).unwrap();
        a.train(None).unwrap();
        b.train(None).unwrap();
        assert_eq!(
            a.policy().to_bytes().unwrap(),
            b.policy().to_bytes().unwrap(),
            "policy checkpoints must be byte-identical"
        );
        let ca = a.critic().unwrap();
        let cb = b.critic().unwrap();
        for m in 0..ca.n_members() {
            assert_eq!(
                checkpoint::to_bytes(&ca.members()[m]),
                checkpoint::to_bytes(&cb.members()[m]),
                "critic member {m} diverged"
            );
        }
    }

    #[test]
    fn relabeling_off_makes_gcsl_collapse_to_bc() {
        let ds = small_dataset(DatasetKind::non_expert(5), 22);
        let bc = quick(Algorithm::Bc, 120);
        let mut gcsl = quick(Algorithm::Gcsl, 120);
        gcsl.p_relabel = 0.0;
        let mut a = Trainer::new(ds.clone(), bc).unwrap();
        let mut b = Trainer::new(ds, gcsl).unwrap();
        a.train(None).unwrap();
        b.train(None).unwrap();
        assert_eq!(a.policy().to_bytes().unwrap(), b.policy().to_bytes().unwrap());
    }

    #[test]
    fn advantage_weighting_off_makes_marwil_collapse_to_gcsl() {
        let ds = small_dataset(DatasetKind::non_expert(5), 23);
        let gcsl = quick(Algorithm::Gcsl, 80);
        let mut marwil = quick(Algorithm::MarwilHer, 80);
        marwil.weights.components.eaw = false;
        let mut a = Trainer::new(ds.clone(), gcsl).unwrap();
        let mut b = Trainer::new(ds, marwil).unwrap();
        a.train(None).unwrap();
        b.train(None).unwrap();
        assert_eq!(
            a.policy().to_bytes().unwrap(),
            b.policy().to_bytes().unwrap(),
            "with its one extra factor disabled the ladder steps coincide"
        );
    }

    #[test]
    fn uncertainty_off_single_member_makes_goat_collapse_to_wgcsl() {
        let ds = small_dataset(DatasetKind::non_expert(5), 24);
        let wgcsl = quick(Algorithm::Wgcsl, 80);
        let mut goat = quick(Algorithm::Goat, 80);
        goat.weights.components.uw = false;
        goat.n_members = 1;
        let mut a = Trainer::new(ds.clone(), wgcsl).unwrap();
        let mut b = Trainer::new(ds, goat).unwrap();
        a.train(None).unwrap();
        b.train(None).unwrap();
        assert_eq!(a.policy().to_bytes().unwrap(), b.policy().to_bytes().unwrap());
    }

    #[test]
    fn zero_penalty_makes_cql_collapse_to_ddpg() {
        let ds = small_dataset(DatasetKind::non_expert(5), 25);
        let ddpg = quick(Algorithm::DdpgHer, 60);
        let mut cql = quick(Algorithm::CqlHer, 60);
        cql.cql_alpha = 0.0;
        let mut a = Trainer::new(ds.clone(), ddpg).unwrap();
        let mut b = Trainer::new(ds, cql).unwrap();
        a.train(None).unwrap();
        b.train(None).unwrap();
        assert_eq!(a.policy().to_bytes().unwrap(), b.policy().to_bytes().unwrap());
        assert_eq!(
            checkpoint::to_bytes(&a.critic().unwrap().members()[0]),
            checkpoint::to_bytes(&b.critic().unwrap().members()[0]),
            "a zero-weight penalty must not move the critic"
        );
    }

    #[test]
    fn training_log_rows_follow_the_cadence() {
        let ds = small_dataset(DatasetKind::expert(3), 26);
        let mut cfg = quick(Algorithm::Wgcsl, 30);
        cfg.log_every = 10;
        cfg.eval_every = 15;
        cfg.eval_goals = 5;
        let mut t = Trainer::new(ds, cfg).unwrap();
        let mut buf = Vec::new();
        let summary = t.train(Some(&mut buf)).unwrap();
        // Rows at 10, 15, 20, 30; evaluations at 15 and 30.
        let steps: Vec<u64> = summary.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![10, 15, 20, 30]);
        assert!(summary.rows[0].eval_r10.is_none());
        assert!(summary.rows[1].eval_r10.is_some());
        assert!(summary.rows[3].eval_r10.is_some(), "the final row always evaluates");
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["step", "policy_loss", "critic_loss", "mean_A", "frac_selected", "mean_uw", "eval_R10", "eval_R20"] {
            assert!(first.get(key).is_some(), "log row missing key {key}");
        }
    }

    #[test]
    fn exploding_critic_aborts_with_a_numeric_error() {
        let ds = small_dataset(DatasetKind::non_expert(3), 27);
        let mut cfg = quick(Algorithm::DdpgHer, 20);
        // Adam keeps per-step movement near the learning rate, so the rate
        // itself must be large enough to overflow a later forward pass.
        cfg.critic_lr = 1e150;
        let mut t = Trainer::new(ds, cfg).unwrap();
        let mut saw_error = false;
        for _ in 0..20 {
            match t.train_step() {
                Ok(_) => continue,
                Err(Error::Numeric(msg)) => {
                    saw_error = true;
                    assert!(!msg.is_empty());
                    break;
                }
                Err(e) => panic!("expected a numeric abort, got {e}"),
            }
        }
        assert!(saw_error, "a 1e150 learning rate must blow up within 20 updates");
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        assert!(TrainConfig { total_updates: 0, ..TrainConfig::preset(Algorithm::Bc, 0) }
            .validate()
            .is_err());
        assert!(TrainConfig { p_relabel: 1.5, ..TrainConfig::preset(Algorithm::Gcsl, 0) }
            .validate()
            .is_err());
        assert!(TrainConfig { n_members: 0, ..TrainConfig::preset(Algorithm::Goat, 0) }
            .validate()
            .is_err());
        assert!(TrainConfig { cql_k: 0, ..TrainConfig::preset(Algorithm::CqlHer, 0) }
            .validate()
            .is_err());
    }
}

//! Ensemble action-value critic with clipped TD targets.
//!
//! Each of the `N` members owns an online network, a target copy, and an
//! optimizer. A TD update regresses member `i` toward
//! `y_i = clip(r + discount * Qhat_i(s', a', g), 0, 1/(1-discount))`
//! where `a'` is the (frozen) policy action at the next state and `Qhat_i`
//! is member `i`'s target network. The regression loss is either plain
//! squared error or the asymmetric expectile loss; targets are constants,
//! so no gradient flows through them. Target networks are refreshed by a
//! hard copy every `target_interval` updates.
//!
//! Critic inputs are rows `[state, action, goal]` (states and goals already
//! normalized by the caller); members differ only in their init seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Network, OutputActivation};
use crate::rng::{derive_seed, labels};

/// Asymmetric squared loss: `|tau - [u < 0]| * u^2`. At `tau = 0.5` it is
/// symmetric; `tau < 0.5` penalizes overestimation (`u < 0`) harder.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// Derivative of [`expectile_loss`] in `u` (away from the kink at 0).
pub fn expectile_loss_grad(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    2.0 * w * u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub n_members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// `None` uses the plain squared TD loss; `Some(tau)` the expectile loss.
    pub tau: Option<f64>,
    /// Hard target refresh period, in updates.
    pub target_interval: u64,
    pub lr: f64,
    pub discount: f64,
    pub seed: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            n_members: 5,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            tau: None,
            target_interval: 50,
            lr: 5e-4,
            discount: 0.98,
            seed: 0,
        }
    }
}

impl CriticConfig {
    fn validate(&self) -> Result<()> {
        if self.n_members == 0 {
            return Err(Error::config("critic needs at least one member"));
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config(format!("bad critic hidden sizes {:?}", self.hidden)));
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::config(format!("expectile tau must lie in (0,1), got {tau}")));
            }
        }
        if self.target_interval == 0 {
            return Err(Error::config("target interval must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("critic lr must be positive, got {}", self.lr)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config(format!("discount must lie in (0,1), got {}", self.discount)));
        }
        Ok(())
    }
}

/// Inputs for one TD update. All rows are `batch x input_dim` with layout
/// `[state, action, goal]`.
pub struct CriticBatch<'a> {
    /// Dataset action rows: `[s, a_data, g]`.
    pub q_inputs: &'a [f64],
    /// Bootstrap rows: `[s', pi(s', g), g]`.
    pub target_inputs: &'a [f64],
    pub rewards: &'a [f64],
    pub batch: usize,
    /// Optional conservative penalty on out-of-data actions.
    pub cql: Option<CqlBatch<'a>>,
}

/// Conservative-penalty inputs: for every batch row, `k` rows
/// `[s, a_random, g]`, grouped sample-major. Adds
/// `alpha * (logsumexp_k Q(s, a_k, g) - Q(s, a_data, g))` to the loss.
pub struct CqlBatch<'a> {
    pub random_inputs: &'a [f64],
    pub k: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct CriticUpdateStats {
    /// Mean TD loss per member.
    pub member_losses: Vec<f64>,
    /// Mean clipped TD target across members and batch.
    pub mean_target: f64,
    /// Mean conservative penalty per member (zero when disabled).
    pub mean_penalty: f64,
}

/// Per-sample advantage decomposition `a = r + discount*v(s') - v(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageEstimate {
    pub a: f64,
    pub v_s: f64,
    pub v_s_next: f64,
    pub r: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleCritic {
    cfg: CriticConfig,
    members: Vec<Network>,
    targets: Vec<Network>,
    optim: Vec<AdamState>,
    updates: u64,
}

impl EnsembleCritic {
    pub const INPUT_DIM: usize = 6;

    pub fn new(cfg: CriticConfig) -> Result<EnsembleCritic> {
        cfg.validate()?;
        let mut sizes = vec![Self::INPUT_DIM];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let mut members = Vec::with_capacity(cfg.n_members);
        let mut optim = Vec::with_capacity(cfg.n_members);
        for i in 0..cfg.n_members {
            let seed = derive_seed(cfg.seed, labels::CRITIC_INIT + i as u64);
            let net =
                Network::new(&sizes, cfg.activation, OutputActivation::Identity, seed)?;
            optim.push(AdamState::new(&net, AdamConfig::default())?);
            members.push(net);
        }
        let targets = members.clone();
        Ok(EnsembleCritic { cfg, members, targets, optim, updates: 0 })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }
    pub fn n_members(&self) -> usize {
        self.members.len()
    }
    pub fn update_count(&self) -> u64 {
        self.updates
    }
    pub fn members(&self) -> &[Network] {
        &self.members
    }
    pub fn targets(&self) -> &[Network] {
        &self.targets
    }
    #[cfg(test)]
    pub(crate) fn set_member(&mut self, i: usize, net: Network) {
        self.optim[i] = AdamState::new(&net, AdamConfig::default()).unwrap();
        self.members[i] = net;
    }
    #[cfg(test)]
    pub(crate) fn set_target(&mut self, i: usize, net: Network) {
        self.targets[i] = net;
    }

    /// Largest representable clipped return, `1/(1-discount)`.
    pub fn value_cap(&self) -> f64 {
        1.0 / (1.0 - self.cfg.discount)
    }

    /// Hard-copy online parameters into the target networks.
    pub fn sync_targets(&mut self) {
        self.targets = self.members.clone();
    }

    fn check_rows(&self, name: &str, rows: &[f64], batch: usize) -> Result<()> {
        if rows.len() != batch * Self::INPUT_DIM {
            return Err(Error::shape(format!(
                "{name} length {} != batch {batch} x {}",
                rows.len(),
                Self::INPUT_DIM
            )));
        }
        Ok(())
    }

    /// One TD regression step for every member, followed by a hard target
    /// refresh when the update counter reaches the interval. Returns
    /// per-member mean losses; non-finite losses abort with a numeric error.
    pub fn td_update(&mut self, batch: &CriticBatch) -> Result<CriticUpdateStats> {
        let b = batch.batch;
        if b == 0 {
            return Err(Error::shape("batch size must be positive"));
        }
        self.check_rows("q_inputs", batch.q_inputs, b)?;
        self.check_rows("target_inputs", batch.target_inputs, b)?;
        if batch.rewards.len() != b {
            return Err(Error::shape(format!(
                "rewards length {} != batch {b}",
                batch.rewards.len()
            )));
        }
        if let Some(cql) = &batch.cql {
            if cql.k == 0 {
                return Err(Error::config("conservative penalty needs at least one action"));
            }
            if !(cql.alpha >= 0.0) || !cql.alpha.is_finite() {
                return Err(Error::config(format!("penalty weight must be >= 0, got {}", cql.alpha)));
            }
            self.check_rows("random_inputs", cql.random_inputs, b * cql.k)?;
        }
        let cap = self.value_cap();
        let gamma = self.cfg.discount;
        let tau = self.cfg.tau;
        let inv_b = 1.0 / b as f64;

        let mut member_losses = Vec::with_capacity(self.members.len());
        let mut target_sum = 0.0;
        let mut penalty_sum = 0.0;
        for i in 0..self.members.len() {
            // Constant bootstrap targets from this member's target network.
            let qhat = self.targets[i].forward_batch(batch.target_inputs, b)?;
            let y: Vec<f64> = batch
                .rewards
                .iter()
                .zip(&qhat)
                .map(|(&r, &q)| (r + gamma * q).clamp(0.0, cap))
                .collect();
            target_sum += y.iter().sum::<f64>() * inv_b;

            let mut loss_acc = 0.0;
            let (_, mut grads) =
                self.members[i].forward_backward_batch(batch.q_inputs, b, |q| {
                    let mut upstream = Vec::with_capacity(b);
                    for (&yv, &qv) in y.iter().zip(q) {
                        let u = yv - qv;
                        match tau {
                            None => {
                                loss_acc += u * u;
                                upstream.push(-2.0 * u * inv_b);
                            }
                            Some(tau) => {
                                loss_acc += expectile_loss(u, tau);
                                // d/dq = -d/du
                                upstream.push(-expectile_loss_grad(u, tau) * inv_b);
                            }
                        }
                    }
                    upstream
                })?;
            let mean_loss = loss_acc * inv_b;
            if !mean_loss.is_finite() {
                return Err(Error::numeric(format!(
                    "member {i} TD loss is not finite at update {}",
                    self.updates
                )));
            }

            if let Some(cql) = &batch.cql {
                let k = cql.k;
                let q_rand = self.members[i].forward_batch(cql.random_inputs, b * k)?;
                // Per sample: logsumexp over its k random-action values.
                let mut soft = vec![0.0; b * k];
                let mut lse_sum = 0.0;
                for s in 0..b {
                    let row = &q_rand[s * k..(s + 1) * k];
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let mut denom = 0.0;
                    for &v in row {
                        denom += (v - max).exp();
                    }
                    lse_sum += max + denom.ln();
                    for (j, &v) in row.iter().enumerate() {
                        soft[s * k + j] = (v - max).exp() / denom;
                    }
                }
                let q_data = self.members[i].forward_batch(batch.q_inputs, b)?;
                let data_mean = q_data.iter().sum::<f64>() * inv_b;
                let penalty = cql.alpha * (lse_sum * inv_b - data_mean);
                if !penalty.is_finite() {
                    return Err(Error::numeric(format!(
                        "member {i} conservative penalty is not finite"
                    )));
                }
                penalty_sum += penalty;
                // d(penalty)/dQ(s, a_k) = alpha * softmax / batch
                let up_rand: Vec<f64> =
                    soft.iter().map(|&w| cql.alpha * w * inv_b).collect();
                let g_rand =
                    self.members[i].backward_batch(cql.random_inputs, b * k, &up_rand)?;
                grads.scaled_add(&g_rand, 1.0);
                // d(penalty)/dQ(s, a_data) = -alpha / batch
                let up_data = vec![-cql.alpha * inv_b; b];
                let g_data = self.members[i].backward_batch(batch.q_inputs, b, &up_data)?;
                grads.scaled_add(&g_data, 1.0);
            }

            self.optim[i].step(&mut self.members[i], &grads, self.cfg.lr)?;
            member_losses.push(mean_loss);
        }
        self.updates += 1;
        if self.updates % self.cfg.target_interval == 0 {
            self.sync_targets();
        }
        let n = self.members.len() as f64;
        Ok(CriticUpdateStats {
            member_losses,
            mean_target: target_sum / n,
            mean_penalty: penalty_sum / n,
        })
    }

    /// Member `i`'s action values on `[s, a, g]` rows.
    pub fn member_q(&self, i: usize, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        if i >= self.members.len() {
            return Err(Error::index(format!("member {i} of {}", self.members.len())));
        }
        self.check_rows("inputs", inputs, batch)?;
        self.members[i].forward_batch(inputs, batch)
    }

    /// Ensemble mean `V` and population spread `Std` at the given rows
    /// (the spread divides by `N`, not `N - 1`).
    pub fn value_and_spread(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_rows("inputs", inputs, batch)?;
        let n = self.members.len();
        let mut all = Vec::with_capacity(n);
        for member in &self.members {
            all.push(member.forward_batch(inputs, batch)?);
        }
        let mut v = vec![0.0; batch];
        let mut std = vec![0.0; batch];
        for s in 0..batch {
            let mut mean = 0.0;
            for q in &all {
                mean += q[s];
            }
            mean /= n as f64;
            let mut var = 0.0;
            for q in &all {
                let d = q[s] - mean;
                var += d * d;
            }
            v[s] = mean;
            std[s] = (var / n as f64).sqrt();
        }
        Ok((v, std))
    }

    /// Ensemble mean value only.
    pub fn value(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.value_and_spread(inputs, batch)?.0)
    }

    /// Advantages `a = r + discount * V(s') - V(s)` on policy-action rows:
    /// `now_inputs` are `[s, pi(s,g), g]`, `next_inputs` are `[s', pi(s',g), g]`.
    pub fn advantages(
        &self,
        now_inputs: &[f64],
        next_inputs: &[f64],
        rewards: &[f64],
        batch: usize,
    ) -> Result<Vec<AdvantageEstimate>> {
        if rewards.len() != batch {
            return Err(Error::shape(format!("rewards length {} != batch {batch}", rewards.len())));
        }
        let v_s = self.value(now_inputs, batch)?;
        let v_next = self.value(next_inputs, batch)?;
        let gamma = self.cfg.discount;
        Ok((0..batch)
            .map(|s| AdvantageEstimate {
                a: rewards[s] + gamma * v_next[s] - v_s[s],
                v_s: v_s[s],
                v_s_next: v_next[s],
                r: rewards[s],
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn constant_net(value: f64) -> Network {
        // 6 -> 1 affine with zero weights and bias = value.
        Network::from_parts(
            vec![6, 1],
            vec![vec![0.0; 6]],
            vec![vec![value]],
            vec![],
            OutputActivation::Identity,
        )
        .unwrap()
    }

    fn small_cfg(n: usize) -> CriticConfig {
        CriticConfig {
            n_members: n,
            hidden: vec![16, 16],
            target_interval: 1_000_000,
            ..Default::default()
        }
    }

    #[test]
    fn expectile_hand_values() {
        assert!((expectile_loss(2.0, 0.1) - 0.4).abs() < 1e-15);
        assert!((expectile_loss(-2.0, 0.1) - 3.6).abs() < 1e-15);
        assert_eq!(expectile_loss(1.5, 0.5), expectile_loss(-1.5, 0.5));
        assert_eq!(expectile_loss(0.0, 0.3), 0.0);
    }

    #[test]
    fn expectile_penalizes_overestimation_when_tau_below_half() {
        for &tau in &[0.1, 0.3, 0.49] {
            for &u in &[0.5, 1.0, 3.0] {
                assert!(
                    expectile_loss(-u, tau) > expectile_loss(u, tau),
                    "tau {tau} u {u}: negative residuals must cost more"
                );
            }
        }
    }

    #[test]
    fn expectile_gradient_matches_finite_differences() {
        let mut rng = stream_rng(1, 0xE1);
        let mut checked = 0;
        while checked < 100 {
            let u: f64 = rng.gen_range(-3.0..3.0);
            if u.abs() < 1e-3 {
                continue; // kink
            }
            let tau: f64 = rng.gen_range(0.05..0.95);
            let h = 1e-6 * u.abs().max(1.0);
            let fd = (expectile_loss(u + h, tau) - expectile_loss(u - h, tau)) / (2.0 * h);
            let g = expectile_loss_grad(u, tau);
            let rel = (fd - g).abs() / (fd.abs() + g.abs()).max(1e-8);
            assert!(rel < 1e-5, "u={u} tau={tau}: fd {fd} vs grad {g}");
            checked += 1;
        }
    }

    #[test]
    fn td_target_is_reward_under_zero_targets() {
        let mut critic = EnsembleCritic::new(small_cfg(2)).unwrap();
        for i in 0..2 {
            critic.set_member(i, constant_net(0.0));
            critic.set_target(i, constant_net(0.0));
        }
        let b = 2;
        let rows = vec![0.0; b * 6];
        let stats = critic
            .td_update(&CriticBatch {
                q_inputs: &rows,
                target_inputs: &rows,
                rewards: &[0.0, 1.0],
                batch: b,
                cql: None,
            })
            .unwrap();
        assert!((stats.mean_target - 0.5).abs() < 1e-12, "targets are exactly the rewards");
        // Initial Q is 0, so mean squared residual is (0 + 1) / 2.
        assert!((stats.member_losses[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn td_target_is_clipped_at_the_value_cap() {
        let mut critic = EnsembleCritic::new(small_cfg(1)).unwrap();
        critic.set_member(0, constant_net(0.0));
        critic.set_target(0, constant_net(100.0));
        let rows = vec![0.0; 6];
        let stats = critic
            .td_update(&CriticBatch {
                q_inputs: &rows,
                target_inputs: &rows,
                rewards: &[1.0],
                batch: 1,
                cql: None,
            })
            .unwrap();
        // min(1 + 0.98*100, 1/(1-0.98)) = 50 up to float rounding.
        assert!((stats.mean_target - 50.0).abs() < 1e-9, "clipped target {}", stats.mean_target);
        assert!(stats.mean_target <= critic.value_cap());
    }

    #[test]
    fn repeated_updates_on_fixed_target_drive_loss_down() {
        let mut critic = EnsembleCritic::new(small_cfg(1)).unwrap();
        critic.set_target(0, constant_net(0.0));
        let mut rng = stream_rng(3, 0xE2);
        let b = 8;
        let q_inputs: Vec<f64> = (0..b * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target_inputs = vec![0.0; b * 6];
        let rewards = vec![1.0; b];
        let mut last = f64::INFINITY;
        for _ in 0..600 {
            let stats = critic
                .td_update(&CriticBatch {
                    q_inputs: &q_inputs,
                    target_inputs: &target_inputs,
                    rewards: &rewards,
                    batch: b,
                    cql: None,
                })
                .unwrap();
            last = stats.member_losses[0];
        }
        assert!(last < 1e-4, "regression to a constant target stalled at {last}");
    }

    #[test]
    fn value_and_spread_hand_values() {
        let mut critic = EnsembleCritic::new(small_cfg(2)).unwrap();
        critic.set_member(0, constant_net(1.0));
        critic.set_member(1, constant_net(3.0));
        let rows = vec![0.5; 6];
        let (v, s) = critic.value_and_spread(&rows, 1).unwrap();
        assert_eq!(v[0], 2.0);
        assert_eq!(s[0], 1.0, "population spread of {{1,3}} is 1");
    }

    #[test]
    fn advantages_match_algebra_for_constant_members() {
        let mut critic = EnsembleCritic::new(small_cfg(3)).unwrap();
        for i in 0..3 {
            critic.set_member(i, constant_net(2.0));
        }
        let rows = vec![0.0; 6];
        let adv = critic.advantages(&rows, &rows, &[1.0], 1).unwrap();
        // a = 1 + 0.98*2 - 2 = 0.96
        assert!((adv[0].a - 0.96).abs() < 1e-12);
        assert_eq!(adv[0].v_s, 2.0);
        assert_eq!(adv[0].v_s_next, 2.0);
        assert_eq!(adv[0].r, 1.0);
    }

    #[test]
    fn fresh_ensemble_members_disagree() {
        let critic = EnsembleCritic::new(CriticConfig { n_members: 5, ..Default::default() })
            .unwrap();
        let mut rng = stream_rng(5, 0xE3);
        let rows: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, spread) = critic.value_and_spread(&rows, 1).unwrap();
        assert!(spread[0] > 0.0, "independent inits must disagree somewhere");
    }

    #[test]
    fn targets_sync_on_schedule() {
        let cfg = CriticConfig { n_members: 2, target_interval: 3, hidden: vec![8], ..Default::default() };
        let mut critic = EnsembleCritic::new(cfg).unwrap();
        let rows = vec![0.1; 2 * 6];
        let batch = CriticBatch {
            q_inputs: &rows,
            target_inputs: &rows,
            rewards: &[1.0, 0.0],
            batch: 2,
            cql: None,
        };
        critic.td_update(&batch).unwrap();
        assert_ne!(critic.members()[0], critic.targets()[0], "no sync after one update");
        critic.td_update(&batch).unwrap();
        critic.td_update(&batch).unwrap();
        assert_eq!(critic.members()[0], critic.targets()[0], "hard sync at the interval");
        assert_eq!(critic.members()[1], critic.targets()[1]);
    }

    #[test]
    fn conservative_penalty_pushes_random_actions_below_data_actions() {
        let mut critic = EnsembleCritic::new(CriticConfig {
            n_members: 1,
            hidden: vec![16, 16],
            target_interval: 1_000_000,
            ..Default::default()
        })
        .unwrap();
        let mut rng = stream_rng(7, 0xE4);
        let b = 16;
        let k = 10;
        let mut q_inputs = Vec::with_capacity(b * 6);
        let mut rand_inputs = Vec::with_capacity(b * k * 6);
        for _ in 0..b {
            let s: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a_data = [0.3, -0.2];
            q_inputs.extend_from_slice(&s);
            q_inputs.extend_from_slice(&a_data);
            q_inputs.extend_from_slice(&g);
            for _ in 0..k {
                let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                rand_inputs.extend_from_slice(&s);
                rand_inputs.extend_from_slice(&a);
                rand_inputs.extend_from_slice(&g);
            }
        }
        let target_inputs = vec![0.0; b * 6];
        let rewards = vec![0.0; b];
        critic.set_target(0, constant_net(0.0));
        let mut first_penalty = None;
        for _ in 0..300 {
            let stats = critic
                .td_update(&CriticBatch {
                    q_inputs: &q_inputs,
                    target_inputs: &target_inputs,
                    rewards: &rewards,
                    batch: b,
                    cql: Some(CqlBatch { random_inputs: &rand_inputs, k, alpha: 1.0 }),
                })
                .unwrap();
            first_penalty.get_or_insert(stats.mean_penalty);
        }
        let q_data = critic.member_q(0, &q_inputs, b).unwrap();
        let q_rand = critic.member_q(0, &rand_inputs, b * k).unwrap();
        let mean_data = q_data.iter().sum::<f64>() / q_data.len() as f64;
        let mean_rand = q_rand.iter().sum::<f64>() / q_rand.len() as f64;
        assert!(
            mean_rand < mean_data,
            "penalty should depress unseen actions: data {mean_data} rand {mean_rand}"
        );
        // With an untrained symmetric net the first penalty is close to
        // alpha * ln(k), the logsumexp of k near-equal values minus the mean.
        let lnk = (k as f64).ln();
        assert!(
            (first_penalty.unwrap() - lnk).abs() < 0.5,
            "initial penalty {} should sit near ln({k}) = {lnk}",
            first_penalty.unwrap()
        );
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        assert!(EnsembleCritic::new(CriticConfig { n_members: 0, ..Default::default() }).is_err());
        assert!(EnsembleCritic::new(CriticConfig { tau: Some(1.0), ..Default::default() }).is_err());
        assert!(EnsembleCritic::new(CriticConfig { target_interval: 0, ..Default::default() })
            .is_err());
        assert!(EnsembleCritic::new(CriticConfig { discount: 1.0, ..Default::default() }).is_err());
    }
}

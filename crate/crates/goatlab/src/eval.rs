//! Goal-conditioned rollouts, evaluation reports, and coverage maps.
//!
//! A rollout runs the closed-loop system until the first rewarded step and
//! stops there; the undiscounted return credits every remaining step of the
//! horizon, so arriving at action index `t` scores `horizon - t`. Reports
//! split goals into the half-plane the behavior data covered (training-like)
//! and everything else (extrapolation), and a coverage grid sweeps goals over
//! a square for plotting.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{dist, sample_eval_goals, EnvConfig, Point};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Network};
use crate::replay::DatasetStats;
use crate::rng::derive_seed;

/// A deterministic goal-conditioned controller.
pub trait Policy {
    /// Action for `state` pursuing `goal`, already inside the action bound.
    fn act(&self, state: Point, goal: Point) -> Point;
}

/// Straight-line controller: per-component clamped step toward the goal.
pub struct OptimalPolicy {
    pub env: EnvConfig,
}

impl Policy for OptimalPolicy {
    fn act(&self, state: Point, goal: Point) -> Point {
        self.env.optimal_action(state, goal)
    }
}

/// Stands still. Useful as a floor in tests.
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, _state: Point, _goal: Point) -> Point {
        [0.0, 0.0]
    }
}

/// Learned controller: normalized `[state, goal]` through a tanh-headed
/// network, scaled to the action bound.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPolicy {
    net: Network,
    stats: DatasetStats,
    action_bound: f64,
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    schema: String,
    version: u32,
    action_bound: f64,
    stats: DatasetStats,
}

const POLICY_MAGIC: &[u8; 6] = b"GLPOL\0";
const POLICY_SCHEMA: &str = "pointreach-policy";
const POLICY_VERSION: u32 = 1;

impl NetworkPolicy {
    pub const INPUT_DIM: usize = 4;
    pub const OUTPUT_DIM: usize = 2;

    pub fn new(net: Network, stats: DatasetStats, action_bound: f64) -> Result<NetworkPolicy> {
        let sizes = net.layer_sizes();
        if sizes.first() != Some(&Self::INPUT_DIM) || sizes.last() != Some(&Self::OUTPUT_DIM) {
            return Err(Error::shape(format!(
                "policy network must map {} inputs to {} outputs, got {:?}",
                Self::INPUT_DIM,
                Self::OUTPUT_DIM,
                sizes
            )));
        }
        if !(action_bound > 0.0) {
            return Err(Error::config(format!("action bound must be positive, got {action_bound}")));
        }
        Ok(NetworkPolicy { net, stats, action_bound })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }
    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }
    pub fn stats(&self) -> &DatasetStats {
        &self.stats
    }
    pub fn action_bound(&self) -> f64 {
        self.action_bound
    }

    /// Network input row for a `(state, goal)` pair.
    pub fn input_row(&self, state: Point, goal: Point) -> [f64; 4] {
        let s = self.stats.state.normalize(&state);
        let g = self.stats.goal.normalize(&goal);
        [s[0], s[1], g[0], g[1]]
    }

    /// Raw network output in `[-1, 1]^2` for a prepared input row.
    pub fn raw_output(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(row)
    }

    /// One container file: policy metadata (JSON) followed by the network
    /// checkpoint, both length-prefixed. Byte-stable for identical policies.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = PolicyMeta {
            schema: POLICY_SCHEMA.to_string(),
            version: POLICY_VERSION,
            action_bound: self.action_bound,
            stats: self.stats.clone(),
        };
        let meta_bytes = serde_json::to_vec(&meta)
            .map_err(|e| Error::data(format!("policy metadata encode: {e}")))?;
        let net_bytes = checkpoint::to_bytes(&self.net);
        let mut out = Vec::with_capacity(14 + meta_bytes.len() + net_bytes.len());
        out.extend_from_slice(POLICY_MAGIC);
        out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta_bytes);
        out.extend_from_slice(&(net_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&net_bytes);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<NetworkPolicy> {
        let take = |bytes: &[u8], at: usize, n: usize| -> Result<Vec<u8>> {
            bytes
                .get(at..at + n)
                .map(<[u8]>::to_vec)
                .ok_or_else(|| Error::data("policy file truncated"))
        };
        if take(bytes, 0, 6)? != POLICY_MAGIC {
            return Err(Error::data("not a policy file (bad magic)"));
        }
        let meta_len = u32::from_le_bytes(take(bytes, 6, 4)?.try_into().unwrap()) as usize;
        let meta_bytes = take(bytes, 10, meta_len)?;
        let meta: PolicyMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::data(format!("policy metadata decode: {e}")))?;
        if meta.schema != POLICY_SCHEMA {
            return Err(Error::data(format!("unexpected policy schema {}", meta.schema)));
        }
        if meta.version != POLICY_VERSION {
            return Err(Error::data(format!("unsupported policy version {}", meta.version)));
        }
        let at = 10 + meta_len;
        let net_len = u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap()) as usize;
        let net_bytes = take(bytes, at + 4, net_len)?;
        if bytes.len() != at + 4 + net_len {
            return Err(Error::data("trailing bytes after policy payload"));
        }
        let net = checkpoint::from_bytes(&net_bytes)?;
        NetworkPolicy::new(net, meta.stats, meta.action_bound)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes()?)?)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<NetworkPolicy> {
        NetworkPolicy::from_bytes(&std::fs::read(path)?)
    }
}

impl Policy for NetworkPolicy {
    fn act(&self, state: Point, goal: Point) -> Point {
        let row = self.input_row(state, goal);
        let out = self.net.forward(&row).expect("policy network rejects its own input shape");
        [out[0] * self.action_bound, out[1] * self.action_bound]
    }
}

/// One closed-loop episode, stopped at the first rewarded step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub goal: Point,
    /// Visited states, `states[0]` the start; length `actions.len() + 1`.
    pub states: Vec<Point>,
    pub actions: Vec<Point>,
    pub success: bool,
    /// Index of the first action whose post-step state was rewarded.
    pub arrival: Option<usize>,
    /// Distance to the goal at the last visited state.
    pub final_distance: f64,
}

impl Rollout {
    /// Undiscounted return under stay-at-goal semantics: arriving at action
    /// index `t` leaves `horizon - t` rewarded steps.
    pub fn return_stay(&self, horizon: usize) -> f64 {
        match self.arrival {
            Some(t) => (horizon - t) as f64,
            None => 0.0,
        }
    }

    /// Discounted return under the same semantics:
    /// `sum_{k=t}^{horizon-1} discount^k`.
    pub fn discounted_return_stay(&self, horizon: usize, discount: f64) -> f64 {
        match self.arrival {
            Some(t) => {
                discount.powi(t as i32) * (1.0 - discount.powi((horizon - t) as i32))
                    / (1.0 - discount)
            }
            None => 0.0,
        }
    }

    /// Return when the episode simply ends at the first success: the single
    /// collected reward, so 1 or 0.
    pub fn return_stop(&self) -> f64 {
        if self.success {
            1.0
        } else {
            0.0
        }
    }
}

/// Run the policy from the environment start state toward `goal`, stopping
/// at the first success or after the horizon.
pub fn rollout(env: &EnvConfig, policy: &dyn Policy, goal: Point) -> Rollout {
    rollout_from(env, policy, env.start_state(), goal)
}

/// Same as [`rollout`] but from an arbitrary start state.
pub fn rollout_from(env: &EnvConfig, policy: &dyn Policy, start: Point, goal: Point) -> Rollout {
    let mut s = start;
    let mut states = vec![s];
    let mut actions = Vec::new();
    let mut arrival = None;
    for t in 0..env.horizon {
        let a = policy.act(s, goal);
        let s_next = env.step(s, a);
        actions.push(a);
        states.push(s_next);
        s = s_next;
        if env.reward(s_next, goal) == 1.0 {
            arrival = Some(t);
            break;
        }
    }
    Rollout {
        goal,
        final_distance: dist(s, goal),
        success: arrival.is_some(),
        arrival,
        states,
        actions,
    }
}

/// Aggregates over one set of goals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalSetReport {
    pub n_goals: usize,
    pub success_rate: f64,
    /// Mean undiscounted stay-at-goal return (failures contribute 0).
    pub mean_return: f64,
    /// Mean stop-at-success return, i.e. the success rate again.
    pub mean_return_stop: f64,
    pub mean_discounted_return: f64,
    /// Mean arrival index over successful episodes only.
    pub mean_arrival: Option<f64>,
    pub mean_final_distance: f64,
}

/// Outcome of a single evaluation goal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub goal: Point,
    /// Which goal set the goal came from (`"r10"` or `"r20"`).
    pub set: String,
    pub success: bool,
    pub arrival: Option<usize>,
    pub return_stay: f64,
    pub return_stop: f64,
    pub discounted_return: f64,
    pub final_distance: f64,
}

/// Full evaluation over both goal circles, with training-like versus
/// extrapolation splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n_goals_per_set: usize,
    /// All goals on the inner circle.
    pub r10: GoalSetReport,
    /// All goals on the outer circle.
    pub r20: GoalSetReport,
    /// Inner-circle goals in the half-plane the behavior data covered.
    pub iid_r10_upper: GoalSetReport,
    /// Inner-circle goals in the uncovered half-plane.
    pub ood_r10_lower: GoalSetReport,
    /// Every goal outside the covered half-plane, both circles.
    pub ood_all: GoalSetReport,
    pub outcomes: Vec<GoalOutcome>,
}

fn aggregate(outcomes: &[&GoalOutcome]) -> GoalSetReport {
    let n = outcomes.len();
    if n == 0 {
        return GoalSetReport {
            n_goals: 0,
            success_rate: 0.0,
            mean_return: 0.0,
            mean_return_stop: 0.0,
            mean_discounted_return: 0.0,
            mean_arrival: None,
            mean_final_distance: 0.0,
        };
    }
    let nf = n as f64;
    let successes: Vec<&&GoalOutcome> = outcomes.iter().filter(|o| o.success).collect();
    let mean_arrival = if successes.is_empty() {
        None
    } else {
        Some(
            successes.iter().map(|o| o.arrival.unwrap() as f64).sum::<f64>()
                / successes.len() as f64,
        )
    };
    GoalSetReport {
        n_goals: n,
        success_rate: successes.len() as f64 / nf,
        mean_return: outcomes.iter().map(|o| o.return_stay).sum::<f64>() / nf,
        mean_return_stop: outcomes.iter().map(|o| o.return_stop).sum::<f64>() / nf,
        mean_discounted_return: outcomes.iter().map(|o| o.discounted_return).sum::<f64>() / nf,
        mean_arrival,
        mean_final_distance: outcomes.iter().map(|o| o.final_distance).sum::<f64>() / nf,
    }
}

/// Evaluate on `n_per_set` goals of each circle. Goal draws depend only on
/// `seed`, so reports are reproducible.
pub fn evaluate(
    env: &EnvConfig,
    policy: &dyn Policy,
    seed: u64,
    n_per_set: usize,
) -> Result<EvalReport> {
    if n_per_set == 0 {
        return Err(Error::config("evaluation needs at least one goal per set"));
    }
    let inner = sample_eval_goals(env.train_goal_radius, n_per_set, derive_seed(seed, 10));
    let outer = sample_eval_goals(2.0 * env.train_goal_radius, n_per_set, derive_seed(seed, 20));
    let mut outcomes = Vec::with_capacity(2 * n_per_set);
    for (set, goals) in [("r10", &inner), ("r20", &outer)] {
        for &goal in goals {
            let r = rollout(env, policy, goal);
            outcomes.push(GoalOutcome {
                goal,
                set: set.to_string(),
                success: r.success,
                arrival: r.arrival,
                return_stay: r.return_stay(env.horizon),
                return_stop: r.return_stop(),
                discounted_return: r.discounted_return_stay(env.horizon, env.discount),
                final_distance: r.final_distance,
            });
        }
    }
    let inner_all: Vec<&GoalOutcome> = outcomes.iter().filter(|o| o.set == "r10").collect();
    let outer_all: Vec<&GoalOutcome> = outcomes.iter().filter(|o| o.set == "r20").collect();
    let iid: Vec<&GoalOutcome> =
        inner_all.iter().copied().filter(|o| o.goal[1] >= 0.0).collect();
    let lower: Vec<&GoalOutcome> =
        inner_all.iter().copied().filter(|o| o.goal[1] < 0.0).collect();
    let ood_all: Vec<&GoalOutcome> =
        lower.iter().copied().chain(outer_all.iter().copied()).collect();
    Ok(EvalReport {
        seed,
        n_goals_per_set: n_per_set,
        r10: aggregate(&inner_all),
        r20: aggregate(&outer_all),
        iid_r10_upper: aggregate(&iid),
        ood_r10_lower: aggregate(&lower),
        ood_all: aggregate(&ood_all),
        outcomes,
    })
}

pub fn save_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::data(format!("report encode: {e}")))?;
    Ok(std::fs::write(path, text + "\n")?)
}

/// Success map over a square grid of goals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub lo: f64,
    pub hi: f64,
    pub n_side: usize,
    pub env: EnvConfig,
    pub cells: Vec<CoverageCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageCell {
    pub x: f64,
    pub y: f64,
    pub success: bool,
    /// Arrival index, `-1` on failure.
    pub arrival: i64,
    pub return_stay: f64,
}

/// Sweep goals over `[lo, hi]^2` on an `n_side`-per-axis lattice and record
/// each rollout outcome.
pub fn coverage_grid(
    env: &EnvConfig,
    policy: &dyn Policy,
    lo: f64,
    hi: f64,
    n_side: usize,
) -> Result<CoverageGrid> {
    if n_side < 2 {
        return Err(Error::config("coverage grid needs at least 2 points per side"));
    }
    if !(hi > lo) {
        return Err(Error::config(format!("bad coverage range [{lo}, {hi}]")));
    }
    let mut cells = Vec::with_capacity(n_side * n_side);
    let step = (hi - lo) / (n_side - 1) as f64;
    for iy in 0..n_side {
        let y = lo + step * iy as f64;
        for ix in 0..n_side {
            let x = lo + step * ix as f64;
            let r = rollout(env, policy, [x, y]);
            cells.push(CoverageCell {
                x,
                y,
                success: r.success,
                arrival: r.arrival.map_or(-1, |t| t as i64),
                return_stay: r.return_stay(env.horizon),
            });
        }
    }
    Ok(CoverageGrid { lo, hi, n_side, env: env.clone(), cells })
}

impl CoverageGrid {
    pub fn success_fraction(&self) -> f64 {
        self.cells.iter().filter(|c| c.success).count() as f64 / self.cells.len() as f64
    }

    /// One CSV row per cell plus a JSON sidecar (same stem, `.json`) with
    /// the grid parameters.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,y,success,arrival,return_stay")?;
        for c in &self.cells {
            writeln!(f, "{},{},{},{},{}", c.x, c.y, c.success as u8, c.arrival, c.return_stay)?;
        }
        f.into_inner().map_err(|e| Error::data(format!("coverage flush: {e}")))?;
        let sidecar = serde_json::json!({
            "schema": "coverage-grid",
            "version": 1,
            "lo": self.lo,
            "hi": self.hi,
            "n_side": self.n_side,
            "env": self.env,
            "success_fraction": self.success_fraction(),
        });
        let meta_path = path.with_extension("json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&sidecar).unwrap() + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Point;
    use crate::nn::{Activation, OutputActivation};

    fn env() -> EnvConfig {
        EnvConfig::default()
    }

    /// Independent arrival-time model: per-component residuals shrink by at
    /// most 1 per step, so the first success is the smallest `k` with
    /// `max(0,|gx|-k)^2 + max(0,|gy|-k)^2 <= radius^2`.
    fn predicted_arrival(env: &EnvConfig, goal: Point) -> Option<usize> {
        for k in 0..=env.horizon {
            let rx = (goal[0].abs() - k as f64).max(0.0);
            let ry = (goal[1].abs() - k as f64).max(0.0);
            if (rx * rx + ry * ry).sqrt() <= env.success_radius {
                // k actions were needed; the successful one has index k-1.
                return if k == 0 { Some(0) } else { Some(k - 1) };
            }
        }
        None
    }

    #[test]
    fn optimal_rollout_matches_independent_arrival_model() {
        let env = env();
        let policy = OptimalPolicy { env: env.clone() };
        for &radius in &[10.0, 20.0] {
            for goal in sample_eval_goals(radius, 50, 99) {
                let r = rollout(&env, &policy, goal);
                assert!(r.success, "straight-line control must reach {goal:?}");
                let want = predicted_arrival(&env, goal).unwrap();
                // Goal at distance >= 1 from the start: first possible
                // success is after at least one action, so index k-1 >= 0.
                assert_eq!(
                    r.arrival,
                    Some(want),
                    "arrival mismatch for {goal:?} at radius {radius}"
                );
            }
        }
    }

    #[test]
    fn rollout_stops_at_first_success() {
        let env = env();
        let policy = OptimalPolicy { env: env.clone() };
        let r = rollout(&env, &policy, [10.0, 0.0]);
        // 10 steps of unit speed close an axis-aligned distance-10 gap.
        assert_eq!(r.arrival, Some(9));
        assert_eq!(r.actions.len(), 10, "no actions after the rewarded one");
        assert_eq!(r.states.len(), 11);
        assert!((r.return_stay(env.horizon) - 41.0).abs() < 1e-12);
        assert!(r.final_distance <= env.success_radius);
    }

    #[test]
    fn zero_policy_fails_on_far_goals_and_trivially_succeeds_at_start() {
        let env = env();
        let far = rollout(&env, &ZeroPolicy, [10.0, 0.0]);
        assert!(!far.success);
        assert_eq!(far.return_stay(env.horizon), 0.0);
        assert_eq!(far.actions.len(), env.horizon);
        let near = rollout(&env, &ZeroPolicy, [0.1, 0.0]);
        assert_eq!(near.arrival, Some(0), "standing still inside the goal ball is a success");
        assert_eq!(near.return_stay(env.horizon), env.horizon as f64);
    }

    #[test]
    fn rollout_from_custom_start_and_stop_return() {
        let env = env();
        let policy = OptimalPolicy { env: env.clone() };
        let r = rollout_from(&env, &policy, [9.0, 0.0], [10.0, 0.0]);
        assert_eq!(r.arrival, Some(0), "one unit step closes a distance-1 gap");
        assert_eq!(r.return_stop(), 1.0);
        let fail = rollout_from(&env, &ZeroPolicy, [-60.0, 0.0], [10.0, 0.0]);
        assert_eq!(fail.return_stop(), 0.0);
    }

    #[test]
    fn discounted_return_is_the_tail_geometric_sum() {
        let env = env();
        let r = rollout(&env, &OptimalPolicy { env: env.clone() }, [10.0, 0.0]);
        let t = r.arrival.unwrap();
        let mut expect = 0.0;
        for k in t..env.horizon {
            expect += env.discount.powi(k as i32);
        }
        let got = r.discounted_return_stay(env.horizon, env.discount);
        assert!((got - expect).abs() < 1e-12, "closed form {got} vs direct sum {expect}");
    }

    #[test]
    fn evaluate_splits_partition_the_goal_sets() {
        let env = env();
        let report = evaluate(&env, &OptimalPolicy { env: env.clone() }, 5, 40).unwrap();
        assert_eq!(report.r10.n_goals, 40);
        assert_eq!(report.r20.n_goals, 40);
        assert_eq!(
            report.iid_r10_upper.n_goals + report.ood_r10_lower.n_goals,
            40,
            "half-plane split must partition the inner circle"
        );
        assert_eq!(report.ood_all.n_goals, report.ood_r10_lower.n_goals + 40);
        assert_eq!(report.outcomes.len(), 80);
        assert_eq!(report.r10.success_rate, 1.0);
        assert_eq!(report.r20.success_rate, 1.0);
        assert_eq!(
            report.r10.mean_return_stop, report.r10.success_rate,
            "stop-return collapses to the success rate"
        );
        // Axis-aligned distance-10 goals arrive at index 9; diagonal ones
        // move both components at once and arrive as early as index 6.
        let a10 = report.r10.mean_arrival.unwrap();
        let a20 = report.r20.mean_arrival.unwrap();
        assert!((6.0..=9.0).contains(&a10), "inner-circle arrival {a10}");
        assert!((13.0..=19.0).contains(&a20), "outer-circle arrival {a20}");
        assert!((41.0..=44.0).contains(&report.r10.mean_return), "{}", report.r10.mean_return);
        assert!((31.0..=37.0).contains(&report.r20.mean_return), "{}", report.r20.mean_return);
    }

    #[test]
    fn evaluate_is_deterministic_in_the_seed() {
        let env = env();
        let policy = OptimalPolicy { env: env.clone() };
        let a = evaluate(&env, &policy, 7, 20).unwrap();
        let b = evaluate(&env, &policy, 7, 20).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = evaluate(&env, &policy, 8, 20).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap(),
            "different seeds draw different goals"
        );
    }

    fn tiny_policy() -> NetworkPolicy {
        let net = Network::new(&[4, 8, 2], Activation::Tanh, OutputActivation::Tanh, 3).unwrap();
        let ds = crate::env::generate_dataset(
            crate::env::DatasetKind::expert(3),
            EnvConfig::default(),
            1,
        )
        .unwrap();
        let stats = DatasetStats::fit(&ds).unwrap();
        NetworkPolicy::new(net, stats, 1.0).unwrap()
    }

    #[test]
    fn network_policy_round_trips_through_bytes() {
        let p = tiny_policy();
        let bytes = p.to_bytes().unwrap();
        let q = NetworkPolicy::from_bytes(&bytes).unwrap();
        assert_eq!(p, q, "decode must invert encode exactly");
        let s = [0.3, -0.7];
        let g = [5.0, 2.0];
        assert_eq!(p.act(s, g), q.act(s, g));
        assert_eq!(bytes, q.to_bytes().unwrap(), "re-encode is byte-identical");
    }

    #[test]
    fn network_policy_rejects_corrupt_bytes() {
        let p = tiny_policy();
        let mut bytes = p.to_bytes().unwrap();
        assert!(NetworkPolicy::from_bytes(&bytes[..bytes.len() - 3]).is_err(), "truncation");
        bytes[0] = b'X';
        assert!(NetworkPolicy::from_bytes(&bytes).is_err(), "bad magic");
        let mut extra = p.to_bytes().unwrap();
        extra.push(0);
        assert!(NetworkPolicy::from_bytes(&extra).is_err(), "trailing bytes");
    }

    #[test]
    fn network_policy_actions_respect_the_bound() {
        let p = tiny_policy();
        for &g in &[[10.0, 0.0], [-20.0, 5.0], [0.0, 0.0]] {
            let a = p.act([0.0, 0.0], g);
            assert!(a[0].abs() <= 1.0 && a[1].abs() <= 1.0, "tanh head keeps actions bounded");
        }
    }

    #[test]
    fn network_policy_shape_validation() {
        let bad = Network::new(&[3, 2], Activation::Tanh, OutputActivation::Tanh, 0).unwrap();
        let ds = crate::env::generate_dataset(
            crate::env::DatasetKind::expert(2),
            EnvConfig::default(),
            1,
        )
        .unwrap();
        let stats = DatasetStats::fit(&ds).unwrap();
        assert!(NetworkPolicy::new(bad, stats, 1.0).is_err());
    }

    #[test]
    fn coverage_grid_counts_and_csv_shape() {
        let env = env();
        let grid = coverage_grid(&env, &OptimalPolicy { env: env.clone() }, -25.0, 25.0, 5).unwrap();
        assert_eq!(grid.cells.len(), 25);
        // Straight-line control covers every goal within horizon * speed.
        assert_eq!(grid.success_fraction(), 1.0);
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("coverage.csv");
        grid.write_csv(&csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 26, "header plus one row per cell");
        assert_eq!(lines[0], "x,y,success,arrival,return_stay");
        assert!(dir.path().join("coverage.json").exists(), "sidecar metadata");
    }
}

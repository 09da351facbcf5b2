//! Point-mass goal-reaching environment and offline dataset generation.
//!
//! State and goal both live in the plane; an action is a displacement whose
//! components are clipped to the action bound before being applied. Reward
//! is 1 exactly when the post-step state lies within the success radius of
//! the goal (inclusive), else 0. The optimal policy is known in closed form,
//! which is what makes the task useful as a laboratory: behavior datasets,
//! evaluation goals, and ground truth all come from a few lines of math.
//!
//! Behavior data starts every episode at the origin with a goal on the
//! upper semicircle of the training radius. Evaluation goals cover full
//! circles, so the lower semicircle and larger radii probe generalization
//! beyond the data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, labels, stream_rng};

/// A planar point; used for states, goals, and actions alike.
pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Environment constants. Defaults reproduce the reference setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Transitions per episode.
    pub horizon: usize,
    /// Inclusive distance threshold for success.
    pub success_radius: f64,
    /// Per-component action clip.
    pub action_bound: f64,
    /// Radius of the circle behavior goals are drawn from.
    pub train_goal_radius: f64,
    /// Discount used by critics and return bounds.
    pub discount: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: 50,
            success_radius: 0.5,
            action_bound: 1.0,
            train_goal_radius: 10.0,
            discount: 0.98,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if !(self.success_radius > 0.0) || !self.success_radius.is_finite() {
            return Err(Error::config(format!(
                "success radius must be positive, got {}",
                self.success_radius
            )));
        }
        if !(self.action_bound > 0.0) || !self.action_bound.is_finite() {
            return Err(Error::config(format!(
                "action bound must be positive, got {}",
                self.action_bound
            )));
        }
        if !(self.train_goal_radius > 0.0) || !self.train_goal_radius.is_finite() {
            return Err(Error::config(format!(
                "training goal radius must be positive, got {}",
                self.train_goal_radius
            )));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config(format!(
                "discount must lie in (0,1), got {}",
                self.discount
            )));
        }
        Ok(())
    }

    /// Upper bound on any clipped discounted return, `1/(1-discount)`.
    pub fn value_cap(&self) -> f64 {
        1.0 / (1.0 - self.discount)
    }

    /// Every episode starts at the origin.
    pub fn start_state(&self) -> Point {
        [0.0, 0.0]
    }

    /// Apply an action: each component is clipped to the bound, then added.
    pub fn step(&self, s: Point, a: Point) -> Point {
        let b = self.action_bound;
        [s[0] + a[0].clamp(-b, b), s[1] + a[1].clamp(-b, b)]
    }

    /// Sparse reward on the post-step state; the threshold is inclusive.
    pub fn reward(&self, s_next: Point, goal: Point) -> f64 {
        if dist(s_next, goal) <= self.success_radius {
            1.0
        } else {
            0.0
        }
    }

    /// Greedy shortest-path action: move straight at the goal, saturating
    /// each component at the bound.
    pub fn optimal_action(&self, s: Point, goal: Point) -> Point {
        let b = self.action_bound;
        [(goal[0] - s[0]).clamp(-b, b), (goal[1] - s[1]).clamp(-b, b)]
    }
}

/// One recorded episode. `states` has `horizon + 1` entries; `actions` and
/// `rewards` have `horizon`. `rewards[t]` grades `states[t+1]` against the
/// episode goal. Actions are stored as executed, i.e. after clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub goal: Point,
    pub states: Vec<Point>,
    pub actions: Vec<Point>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    /// Goals reachable by relabeling: the post-step states `s_1..s_T`.
    pub fn achieved_goals(&self) -> &[Point] {
        &self.states[1..]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Which behavior policy generated a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Optimal actions throughout.
    Expert { n_traj: usize },
    /// Optimal actions perturbed by per-component Gaussian noise, with the
    /// whole action replaced by a uniform random one at rate `p_random`.
    NonExpert { n_traj: usize, sigma: f64, p_random: f64 },
}

impl DatasetKind {
    pub fn expert(n_traj: usize) -> Self {
        DatasetKind::Expert { n_traj }
    }

    /// Noisy behavior with the reference noise scales.
    pub fn non_expert(n_traj: usize) -> Self {
        DatasetKind::NonExpert { n_traj, sigma: 0.2, p_random: 0.3 }
    }

    pub fn n_traj(&self) -> usize {
        match *self {
            DatasetKind::Expert { n_traj } => n_traj,
            DatasetKind::NonExpert { n_traj, .. } => n_traj,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DatasetKind::Expert { .. } => "expert",
            DatasetKind::NonExpert { .. } => "non_expert",
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_traj() == 0 {
            return Err(Error::config("dataset must contain at least one trajectory"));
        }
        if let DatasetKind::NonExpert { sigma, p_random, .. } = *self {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::config(format!("noise sigma must be non-negative, got {sigma}")));
            }
            if !(0.0..=1.0).contains(&p_random) {
                return Err(Error::config(format!(
                    "random-action probability must lie in [0,1], got {p_random}"
                )));
            }
        }
        Ok(())
    }
}

/// An offline dataset: the environment it was collected in plus episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env: EnvConfig,
    pub kind: DatasetKind,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

/// Compact description used by the CLI and logs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub kind: String,
    pub n_traj: usize,
    pub horizon: usize,
    pub transitions: usize,
    /// Bounding box of all achieved goals: `[min_x, min_y, max_x, max_y]`.
    pub achieved_goal_bbox: [f64; 4],
    pub mean_reward: f64,
}

impl Dataset {
    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut reward_sum = 0.0;
        for traj in &self.trajectories {
            for g in traj.achieved_goals() {
                bbox[0] = bbox[0].min(g[0]);
                bbox[1] = bbox[1].min(g[1]);
                bbox[2] = bbox[2].max(g[0]);
                bbox[3] = bbox[3].max(g[1]);
            }
            reward_sum += traj.rewards.iter().sum::<f64>();
        }
        DatasetSummary {
            kind: self.kind.label().to_string(),
            n_traj: self.trajectories.len(),
            horizon: self.env.horizon,
            transitions: self.n_transitions(),
            achieved_goal_bbox: bbox,
            mean_reward: reward_sum / self.n_transitions() as f64,
        }
    }
}

/// Roll out the behavior policy for every episode. Each trajectory draws
/// from its own derived random stream, so the result does not depend on
/// generation order and is byte-stable for a given `(kind, env, seed)`.
pub fn generate_dataset(kind: DatasetKind, env: EnvConfig, seed: u64) -> Result<Dataset> {
    env.validate()?;
    kind.validate()?;
    let base = derive_seed(seed, labels::DATASET);
    let mut trajectories = Vec::with_capacity(kind.n_traj());
    for idx in 0..kind.n_traj() {
        let mut rng = stream_rng(base, idx as u64);
        // Behavior goals sit on the upper semicircle.
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let r = env.train_goal_radius;
        let goal = [r * theta.cos(), r * theta.sin()];
        let mut states = Vec::with_capacity(env.horizon + 1);
        let mut actions = Vec::with_capacity(env.horizon);
        let mut rewards = Vec::with_capacity(env.horizon);
        let mut s: Point = [0.0, 0.0];
        states.push(s);
        for _ in 0..env.horizon {
            let optimal = env.optimal_action(s, goal);
            let raw = match kind {
                DatasetKind::Expert { .. } => optimal,
                DatasetKind::NonExpert { sigma, p_random, .. } => {
                    if rng.gen_range(0.0..1.0) < p_random {
                        let b = env.action_bound;
                        [rng.gen_range(-b..=b), rng.gen_range(-b..=b)]
                    } else {
                        let normal = Normal::new(0.0, sigma)
                            .map_err(|e| Error::config(format!("bad noise sigma: {e}")))?;
                        [optimal[0] + normal.sample(&mut rng), optimal[1] + normal.sample(&mut rng)]
                    }
                }
            };
            let b = env.action_bound;
            let a = [raw[0].clamp(-b, b), raw[1].clamp(-b, b)];
            let s_next = env.step(s, a);
            rewards.push(env.reward(s_next, goal));
            actions.push(a);
            states.push(s_next);
            s = s_next;
        }
        trajectories.push(Trajectory { goal, states, actions, rewards });
    }
    Ok(Dataset { env, kind, seed, trajectories })
}

/// Goals on a full circle of the given radius, angles uniform in `[0, 2pi)`.
pub fn sample_eval_goals(radius: f64, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = stream_rng(seed, labels::EVAL_GOALS);
    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect()
}

const SCHEMA: &str = "pointreach-dataset";
const FORMAT_VERSION: u32 = 1;

/// First line of a dataset file. Field order is the serialization order.
#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    schema: String,
    version: u32,
    kind: DatasetKind,
    seed: u64,
    env: EnvConfig,
}

impl Dataset {
    /// Serialize as newline-delimited JSON: a header line, then one
    /// trajectory per line with stable key order.
    pub fn to_ndjson(&self) -> Result<String> {
        let header = FileHeader {
            schema: SCHEMA.to_string(),
            version: FORMAT_VERSION,
            kind: self.kind,
            seed: self.seed,
            env: self.env,
        };
        let mut out = serde_json::to_string(&header)
            .map_err(|e| Error::data(format!("header serialization failed: {e}")))?;
        out.push('\n');
        for traj in &self.trajectories {
            out.push_str(
                &serde_json::to_string(traj)
                    .map_err(|e| Error::data(format!("trajectory serialization failed: {e}")))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save_ndjson(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_ndjson()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn from_ndjson_lines<I: Iterator<Item = std::io::Result<String>>>(
        mut lines: I,
    ) -> Result<Dataset> {
        let header_line = lines
            .next()
            .ok_or_else(|| Error::data("empty dataset file"))??;
        let header: FileHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::data(format!("bad dataset header: {e}")))?;
        if header.schema != SCHEMA {
            return Err(Error::data(format!("unknown dataset schema {:?}", header.schema)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::data(format!("unsupported dataset version {}", header.version)));
        }
        header.env.validate()?;
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let traj: Trajectory = serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("bad trajectory on line {}: {e}", i + 2)))?;
            validate_trajectory(&traj, &header.env, i + 2)?;
            trajectories.push(traj);
        }
        if trajectories.is_empty() {
            return Err(Error::data("dataset contains no trajectories"));
        }
        Ok(Dataset { env: header.env, kind: header.kind, seed: header.seed, trajectories })
    }

    pub fn load_ndjson(path: impl AsRef<Path>) -> Result<Dataset> {
        let reader = BufReader::new(File::open(path)?);
        Dataset::from_ndjson_lines(reader.lines())
    }
}

/// Structural and semantic checks for one loaded trajectory: lengths,
/// finiteness, action bounds, transition and reward consistency.
fn validate_trajectory(traj: &Trajectory, env: &EnvConfig, line: usize) -> Result<()> {
    let t = env.horizon;
    if traj.states.len() != t + 1 || traj.actions.len() != t || traj.rewards.len() != t {
        return Err(Error::data(format!(
            "line {line}: expected {t} transitions, got states {} actions {} rewards {}",
            traj.states.len(),
            traj.actions.len(),
            traj.rewards.len()
        )));
    }
    let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
    if !finite(&traj.goal) || !traj.states.iter().all(finite) || !traj.actions.iter().all(finite) {
        return Err(Error::data(format!("line {line}: non-finite value in trajectory")));
    }
    let b = env.action_bound;
    for (k, a) in traj.actions.iter().enumerate() {
        if a[0].abs() > b || a[1].abs() > b {
            return Err(Error::data(format!(
                "line {line}: action {k} outside bound {b}: {a:?}"
            )));
        }
    }
    for k in 0..t {
        let expect = env.step(traj.states[k], traj.actions[k]);
        if dist(expect, traj.states[k + 1]) > 1e-9 {
            return Err(Error::data(format!(
                "line {line}: transition {k} inconsistent with dynamics"
            )));
        }
        let r = traj.rewards[k];
        if r != 0.0 && r != 1.0 {
            return Err(Error::data(format!("line {line}: reward {k} not in {{0,1}}: {r}")));
        }
        if r != env.reward(traj.states[k + 1], traj.goal) {
            return Err(Error::data(format!(
                "line {line}: reward {k} inconsistent with goal distance"
            )));
        }
    }
    Ok(())
}

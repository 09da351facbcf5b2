//! Offline sampling machinery: input normalization, bounded statistic
//! queues, and hindsight goal relabeling.
//!
//! Relabeling convention: for a transition at index `t` in a trajectory
//! with `T` transitions, a source index `j` is drawn uniformly from
//! `{t, ..., T-1}` and the new goal is the post-step state `s_{j+1}`. The
//! relabeled reward grades `s_{t+1}` against that goal, so `j = t` always
//! yields reward 1. The stored `relabel_index` is `j`; discount-style
//! weights use the exponent `j - t`.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Dataset, Point, Trajectory};
use crate::error::{Error, Result};

/// Per-dimension affine normalizer fitted once over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    /// Population standard deviation, floored at `1e-6`.
    std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;

impl Normalizer {
    /// Fit from rows of equal dimension (two-pass mean/variance).
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Normalizer>
    where
        I: Iterator<Item = &'a [f64]> + Clone,
    {
        if dim == 0 {
            return Err(Error::config("normalizer dimension must be positive"));
        }
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            if row.len() != dim {
                return Err(Error::shape(format!(
                    "row has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            for (m, &v) in mean.iter_mut().zip(row) {
                if !v.is_finite() {
                    return Err(Error::numeric(format!("non-finite value in normalizer fit: {v}")));
                }
                *m += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::data("cannot fit a normalizer on zero rows"));
        }
        for m in &mut mean {
            *m /= count as f64;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = x - m;
                *v += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        debug_assert_eq!(out.len(), self.mean.len());
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }
}

/// State and goal normalizers fitted on an offline dataset: states over all
/// visited states, goals over achieved goals plus the desired goals, i.e.
/// everything a training batch can present as a goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub state: Normalizer,
    pub goal: Normalizer,
}

impl DatasetStats {
    pub fn fit(ds: &Dataset) -> Result<DatasetStats> {
        let state_rows: Vec<&[f64]> =
            ds.trajectories.iter().flat_map(|t| t.states.iter().map(|s| &s[..])).collect();
        let goal_rows: Vec<&[f64]> = ds
            .trajectories
            .iter()
            .flat_map(|t| {
                t.achieved_goals().iter().map(|s| &s[..]).chain(std::iter::once(&t.goal[..]))
            })
            .collect();
        Ok(DatasetStats {
            state: Normalizer::fit(state_rows.iter().copied(), 2)?,
            goal: Normalizer::fit(goal_rows.iter().copied(), 2)?,
        })
    }
}

/// Bounded FIFO of scalar statistics with order-statistic queries.
#[derive(Debug, Clone)]
pub struct FifoQueue {
    buf: VecDeque<f64>,
    capacity: usize,
}

impl FifoQueue {
    pub fn new(capacity: usize) -> Result<FifoQueue> {
        if capacity == 0 {
            return Err(Error::config("queue capacity must be positive"));
        }
        Ok(FifoQueue { buf: VecDeque::with_capacity(capacity), capacity })
    }

    /// Append, evicting the oldest entry once full. Non-finite values are
    /// rejected so later order statistics stay well defined.
    pub fn push(&mut self, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::numeric(format!("queue rejects non-finite value {v}")));
        }
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }
    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
    pub fn capacity(&self) -> usize {
        self.capacity
    }
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.buf.iter()
    }

    /// Nearest-rank percentile: the element at sorted index
    /// `ceil(alpha/100 * len) - 1`, clamped to a valid index (so `alpha = 0`
    /// returns the minimum). `alpha` is in percent, `[0, 100]`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if self.buf.is_empty() {
            return Err(Error::state("quantile of an empty queue"));
        }
        if !(0.0..=100.0).contains(&alpha) {
            return Err(Error::config(format!("percentile must lie in [0,100], got {alpha}")));
        }
        let n = self.buf.len();
        let rank = (alpha / 100.0 * n as f64).ceil() as isize - 1;
        let idx = rank.clamp(0, n as isize - 1) as usize;
        let mut scratch: Vec<f64> = self.buf.iter().copied().collect();
        let (_, v, _) = scratch.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).unwrap());
        Ok(*v)
    }

    /// `(min, max)` of the current contents.
    pub fn extremes(&self) -> Result<(f64, f64)> {
        if self.buf.is_empty() {
            return Err(Error::state("extremes of an empty queue"));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.buf {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }
}

/// One training sample, possibly hindsight-relabeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelabeledSample {
    pub state: Point,
    pub action: Point,
    pub goal: Point,
    pub reward: f64,
    pub next_state: Point,
    /// Source transition index `j` of the relabeled goal (`None` when the
    /// original desired goal was kept).
    pub relabel_index: Option<usize>,
    /// Transition index `t` within its trajectory.
    pub original_index: usize,
    pub traj_index: usize,
}

/// Relabel transition `t` of `traj` with a future achieved goal.
pub fn relabel(
    traj: &Trajectory,
    traj_index: usize,
    t: usize,
    env: &crate::env::EnvConfig,
    rng: &mut impl Rng,
) -> Result<RelabeledSample> {
    let horizon = traj.len();
    if t >= horizon {
        return Err(Error::index(format!("transition {t} out of range for horizon {horizon}")));
    }
    let j = rng.gen_range(t..horizon);
    let goal = traj.states[j + 1];
    let next_state = traj.states[t + 1];
    Ok(RelabeledSample {
        state: traj.states[t],
        action: traj.actions[t],
        goal,
        reward: env.reward(next_state, goal),
        next_state,
        relabel_index: Some(j),
        original_index: t,
        traj_index,
    })
}

/// Uniformly sample a minibatch of transitions, relabeling each with
/// probability `p_relabel` (otherwise the desired goal and recorded reward
/// are kept).
pub fn sample_batch(
    ds: &Dataset,
    batch_size: usize,
    p_relabel: f64,
    rng: &mut impl Rng,
) -> Result<Vec<RelabeledSample>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if !(0.0..=1.0).contains(&p_relabel) {
        return Err(Error::config(format!(
            "relabel probability must lie in [0,1], got {p_relabel}"
        )));
    }
    if ds.trajectories.is_empty() {
        return Err(Error::data("cannot sample from an empty dataset"));
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let traj_index = rng.gen_range(0..ds.trajectories.len());
        let traj = &ds.trajectories[traj_index];
        let t = rng.gen_range(0..traj.len());
        let sample = if p_relabel > 0.0 && rng.gen_range(0.0..1.0) < p_relabel {
            relabel(traj, traj_index, t, &ds.env, rng)?
        } else {
            RelabeledSample {
                state: traj.states[t],
                action: traj.actions[t],
                goal: traj.goal,
                reward: traj.rewards[t],
                next_state: traj.states[t + 1],
                relabel_index: None,
                original_index: t,
                traj_index,
            }
        };
        out.push(sample);
    }
    Ok(out)
}

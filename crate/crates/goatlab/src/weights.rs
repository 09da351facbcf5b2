//! Per-sample regression weights for advantage-filtered imitation.
//!
//! The policy loss multiplies each sample's squared action error by a
//! product of up to four factors, each independently switchable:
//!
//! * exp-advantage (`eaw`): `min(exp(beta * a), eaw_max)`, evaluated in
//!   log-space so large advantages saturate instead of overflowing;
//! * selection (`dsw`): `1` when the advantage clears a running quantile
//!   threshold, else a small floor `eps_low`. The threshold is the
//!   `alpha`-quantile of a FIFO window of recent advantages, with `alpha`
//!   ramped linearly from 0 to its final value over the first fraction of
//!   training and held at 1 (select everything) until the window has
//!   enough entries;
//! * uncertainty (`uw`): ensemble spread mapped through min-max
//!   normalization over a FIFO window, then `clip(tanh(norm * scale) +
//!   floor, 0, 1)`, so low-disagreement samples still get weight `floor`;
//! * relabel-gap discounting (`drw`): `discount^(j - t)` for a sample
//!   relabeled with the goal achieved `j - t` steps later, off by default.
//!
//! [`WeightEngine::batch_weights`] applies them in a fixed order: the
//! current batch is pushed into the advantage window before the threshold
//! is read, and into the spread window before the extremes are read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::FifoQueue;

/// Which factors multiply into the final weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightComponents {
    pub eaw: bool,
    pub dsw: bool,
    pub uw: bool,
    pub drw: bool,
}

impl WeightComponents {
    pub const NONE: WeightComponents =
        WeightComponents { eaw: false, dsw: false, uw: false, drw: false };

    pub fn none() -> WeightComponents {
        Self::NONE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub components: WeightComponents,
    /// Advantage temperature.
    pub beta: f64,
    /// Cap on the exponential factor.
    pub eaw_max: f64,
    /// Weight of rejected samples.
    pub eps_low: f64,
    /// Final selection quantile, in percent.
    pub alpha_final: f64,
    /// Fraction of training over which the quantile ramps to its final value.
    pub ramp_frac: f64,
    /// Slope inside the tanh of the uncertainty map.
    pub uw_scale: f64,
    /// Additive floor of the uncertainty map.
    pub uw_floor: f64,
    /// Minimum advantage-window size before selection activates.
    pub dsw_warmup: usize,
    /// FIFO capacity of both running windows.
    pub queue_capacity: usize,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            components: WeightComponents::NONE,
            beta: 2.0,
            eaw_max: 10.0,
            eps_low: 0.05,
            alpha_final: 80.0,
            ramp_frac: 0.2,
            uw_scale: 2.0,
            uw_floor: 0.5,
            dsw_warmup: 1000,
            queue_capacity: 50_000,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite()) {
            return Err(Error::config(format!("beta must be finite, got {}", self.beta)));
        }
        if !(self.eaw_max > 0.0) {
            return Err(Error::config(format!("eaw_max must be positive, got {}", self.eaw_max)));
        }
        if !(self.eps_low >= 0.0 && self.eps_low <= 1.0) {
            return Err(Error::config(format!("eps_low must lie in [0,1], got {}", self.eps_low)));
        }
        if !(self.alpha_final >= 0.0 && self.alpha_final <= 100.0) {
            return Err(Error::config(format!(
                "alpha_final is a percentile, got {}",
                self.alpha_final
            )));
        }
        if !(self.ramp_frac >= 0.0 && self.ramp_frac <= 1.0) {
            return Err(Error::config(format!("ramp_frac must lie in [0,1], got {}", self.ramp_frac)));
        }
        if !(self.uw_scale > 0.0) || !(self.uw_floor >= 0.0) {
            return Err(Error::config("uncertainty map needs positive scale and nonnegative floor"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("weight windows need nonzero capacity"));
        }
        Ok(())
    }
}

/// `min(exp(beta * a), cap)` without overflowing for large advantages.
pub fn exp_advantage_weight(a: f64, beta: f64, cap: f64) -> f64 {
    let log_w = beta * a;
    if log_w >= cap.ln() {
        cap
    } else {
        log_w.exp()
    }
}

/// Hard advantage filter with a floor for rejected samples.
pub fn selection_weight(a: f64, threshold: f64, eps_low: f64) -> f64 {
    if a >= threshold {
        1.0
    } else {
        eps_low
    }
}

/// Min-max normalization of an ensemble spread over window extremes,
/// clamped to `[0, 1]`. A degenerate window (all entries equal) maps to 0.
pub fn normalize_spread(std: f64, min: f64, max: f64) -> f64 {
    let range = max - min;
    if range <= 1e-12 {
        0.0
    } else {
        ((std - min) / range).clamp(0.0, 1.0)
    }
}

/// `clip(tanh(norm * scale) + floor, 0, 1)`: rises from `floor` at zero
/// spread toward 1, saturating for high-disagreement samples.
pub fn uncertainty_weight(std_norm: f64, scale: f64, floor: f64) -> f64 {
    ((std_norm * scale).tanh() + floor).clamp(0.0, 1.0)
}

/// `discount^gap` for a goal achieved `gap` steps after the sample.
pub fn discount_relabel_weight(gap: usize, discount: f64) -> f64 {
    discount.powi(gap as i32)
}

/// Selection quantile at `step` of `total` updates: linear from 0 to
/// `alpha_final` over the first `ramp_frac` of training, then flat.
pub fn ramped_alpha(step: u64, total: u64, alpha_final: f64, ramp_frac: f64) -> f64 {
    if total == 0 {
        return alpha_final;
    }
    let ramp_steps = ramp_frac * total as f64;
    if ramp_steps <= 0.0 {
        return alpha_final;
    }
    alpha_final * (step as f64 / ramp_steps).min(1.0)
}

/// Per-sample factors and diagnostics for one batch.
#[derive(Debug, Clone)]
pub struct BatchWeights {
    /// Final per-sample multiplier (product of the enabled factors).
    pub total: Vec<f64>,
    pub eaw: Vec<f64>,
    pub dsw: Vec<f64>,
    pub uw: Vec<f64>,
    pub drw: Vec<f64>,
    /// Advantage threshold used for selection; `None` during warm-up or
    /// when selection is disabled.
    pub threshold: Option<f64>,
    /// Quantile (percent) the threshold was read at.
    pub alpha: f64,
    /// Fraction of the batch at full selection weight.
    pub frac_selected: f64,
}

/// Stateful weight computer owning the two running FIFO windows.
#[derive(Debug, Clone)]
pub struct WeightEngine {
    cfg: WeightConfig,
    adv_window: FifoQueue,
    spread_window: FifoQueue,
}

impl WeightEngine {
    pub fn new(cfg: WeightConfig) -> Result<WeightEngine> {
        cfg.validate()?;
        let adv_window = FifoQueue::new(cfg.queue_capacity)?;
        let spread_window = FifoQueue::new(cfg.queue_capacity)?;
        Ok(WeightEngine { cfg, adv_window, spread_window })
    }

    pub fn config(&self) -> &WeightConfig {
        &self.cfg
    }
    pub fn adv_window_len(&self) -> usize {
        self.adv_window.len()
    }
    pub fn spread_window_len(&self) -> usize {
        self.spread_window.len()
    }

    /// Compute every factor for one batch, updating the running windows.
    ///
    /// `relabel_gaps[i]` is `Some(j - t)` when sample `i` was relabeled with
    /// the goal achieved at step `j >= t`, `None` otherwise. `step`/`total`
    /// drive the selection-quantile ramp.
    pub fn batch_weights(
        &mut self,
        advantages: &[f64],
        spreads: &[f64],
        relabel_gaps: &[Option<usize>],
        discount: f64,
        step: u64,
        total: u64,
    ) -> Result<BatchWeights> {
        let b = advantages.len();
        if spreads.len() != b || relabel_gaps.len() != b {
            return Err(Error::shape(format!(
                "weight inputs disagree: {} advantages, {} spreads, {} gaps",
                b,
                spreads.len(),
                relabel_gaps.len()
            )));
        }
        if b == 0 {
            return Err(Error::shape("weight batch must be nonempty"));
        }
        let c = self.cfg.components;

        let eaw: Vec<f64> = if c.eaw {
            advantages
                .iter()
                .map(|&a| exp_advantage_weight(a, self.cfg.beta, self.cfg.eaw_max))
                .collect()
        } else {
            vec![1.0; b]
        };

        let alpha = ramped_alpha(step, total, self.cfg.alpha_final, self.cfg.ramp_frac);
        let mut threshold = None;
        let dsw: Vec<f64> = if c.dsw {
            for &a in advantages {
                self.adv_window.push(a)?;
            }
            if self.adv_window.len() >= self.cfg.dsw_warmup {
                let thr = self.adv_window.quantile(alpha)?;
                threshold = Some(thr);
                advantages
                    .iter()
                    .map(|&a| selection_weight(a, thr, self.cfg.eps_low))
                    .collect()
            } else {
                vec![1.0; b]
            }
        } else {
            vec![1.0; b]
        };
        let frac_selected =
            dsw.iter().filter(|&&w| w >= 1.0).count() as f64 / b as f64;

        let uw: Vec<f64> = if c.uw {
            for &s in spreads {
                self.spread_window.push(s)?;
            }
            let (min, max) = self.spread_window.extremes()?;
            spreads
                .iter()
                .map(|&s| {
                    uncertainty_weight(
                        normalize_spread(s, min, max),
                        self.cfg.uw_scale,
                        self.cfg.uw_floor,
                    )
                })
                .collect()
        } else {
            vec![1.0; b]
        };

        let mut drw = vec![1.0; b];
        if c.drw {
            for (i, gap) in relabel_gaps.iter().enumerate() {
                if let Some(g) = gap {
                    drw[i] = discount_relabel_weight(*g, discount);
                }
            }
        }

        let total_w: Vec<f64> =
            (0..b).map(|i| eaw[i] * dsw[i] * uw[i] * drw[i]).collect();
        for (i, &w) in total_w.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::numeric(format!(
                    "sample {i} weight {w} (eaw {} dsw {} uw {} drw {})",
                    eaw[i], dsw[i], uw[i], drw[i]
                )));
            }
        }
        Ok(BatchWeights { total: total_w, eaw, dsw, uw, drw, threshold, alpha, frac_selected })
    }
}

//! Offline goal-conditioned RL laboratory on an analytic 2D reaching task.
//!
//! The crate trains a ladder of offline agents (plain and relabeled behavior
//! cloning, advantage-weighted variants, an ensemble-weighted learner, and
//! value-pessimistic baselines) on datasets generated from a point-mass
//! environment whose optimal policy is known in closed form. A separate
//! module verifies worst-case distribution-shift bounds for capped
//! re-weighting families against brute-force enumeration.

pub mod agents;
pub mod critic;
pub mod divergence;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod run;
pub mod weights;

pub use error::{Error, Result};

//! Robust meta-learning with ranked-range task selection.
//!
//! The crate trains small dense meta-models over pools of synthetic few-shot
//! tasks whose quality is deliberately heterogeneous: clean tasks, tasks with
//! corrupted labels or targets, and out-of-distribution outlier tasks. The
//! task-level objective averages a ranked range of per-task query losses,
//! which drops both the easiest tasks and the most suspicious ones. Two scalar
//! trackers follow the range boundaries by subgradient steps, and a
//! statistic-guided variant derives fixed selection thresholds from a
//! log-normal fit of the loss distribution after a warm-up phase.
//!
//! Modules:
//! - [`netcore`]: dense models split into shared and task-specific blocks,
//!   with hand-rolled gradients for both.
//! - [`rankedrange`]: the ranked-range loss, its hinge reformulation, tracker
//!   subgradients and selection masks.
//! - [`taskgen`]: seeded generation of clean, noisy and outlier task pools.
//! - [`metatrain`]: the training engines and their logs and checkpoints.
//! - [`evalmetrics`]: fast-adaptation reports, exclusion frequencies,
//!   separation scores and histogram data.
//! - [`cli`]: config parsing and the experiment subcommands.

pub mod cli;
pub mod evalmetrics;
pub mod metatrain;
pub mod netcore;
pub mod rankedrange;
pub mod seed;
pub mod taskgen;

//! Zone-level delayed-matching simulation and learning toolkit for
//! ride-hailing dispatch.
//!
//! The crate provides, bottom to top:
//!
//! - [`netgraph`]: zoned road networks and a one-time static route set;
//! - [`mfd`]: flow/density aggregation into zone-hour speeds and an hourly
//!   origin-destination travel-time table, plus perturbation scenarios;
//! - [`env`]: the zone-level supply/demand simulator with binary
//!   hold/match actions per zone;
//! - [`reward`]: incremental wait costs with a congestion-modulated pickup
//!   weight and an online adaptive constraint multiplier;
//! - [`nn`]: a minimal f64 reverse-mode autodiff engine;
//! - [`policy`]: the sparse mixture-of-experts actor-critic encoder;
//! - [`train`]: rollouts, GAE, PPO/GRPO updates, heuristic baselines and
//!   evaluation;
//! - [`cli`]: configuration, experiment drivers and report emission behind
//!   the `dispatch-sim` binary.

pub mod error;
pub mod nn;
pub mod netgraph;
pub mod mfd;
pub mod reward;
pub mod env;
pub mod policy;
pub mod train;
pub mod presets;
pub mod cli;

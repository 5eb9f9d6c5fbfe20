//! Centralized-critic / decentralized-actor coordination for model-driven
//! multi-agent systems.
//!
//! A central three-role critic (an exploration-biased proposer, an
//! exploitation-biased proposer, and an assessor) drafts and reconciles one
//! suggestion per agent; decentralized actors confirm their suggestions with
//! deterministic checks and push feedback upstream when a suggestion fails.
//! Two benchmark environments are built in — integer resource allocation
//! under a squeezed-Gaussian system reward, and grid object transport in a
//! cell-move and a corner-lattice variant — along with scripted and replay
//! backends, comparison baselines, and a metrics pipeline with bit-exact
//! transcript replay.

#![forbid(unsafe_code)]

pub mod actor;
pub mod backend;
pub mod core;
pub mod critic;
pub mod env_grid;
pub mod env_gs;
pub mod memory;
pub mod orchestrator;
pub mod rng;
pub mod scenario;
pub mod transcript;

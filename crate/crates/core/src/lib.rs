//! Coordinated multi-user channel access with UCB learning.
//!
//! Independent users share `K` channels. Each learns her own channel
//! reward means through UCB indices, and the population coordinates channel
//! swaps through a signalling-only super-frame protocol until it settles in
//! an exchange-stable configuration.
//!
//! Modules, bottom-up:
//! - [`model`] and [`rng`]: reward matrices, Bernoulli rewards, seeded streams.
//! - [`protocol`]: super-frame calendar and shared-medium resolution.
//! - [`agent`]: the per-user policy.
//! - [`engine`]: the slot-level simulation loop.
//! - [`oracle`], [`metrics`], [`theory`]: verification and analysis.

pub mod agent;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};

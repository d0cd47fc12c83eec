//! Deterministic simulator and theory calculators for federated prompt
//! learning on a synthetic orthogonal-feature model.
//!
//! A frozen linear encoder maps learnable prompt vectors into a latent
//! space spanned by an orthogonal feature bank (one globally shared
//! task-relevant direction, `S` client-local task-relevant directions,
//! `L` task-irrelevant noise directions). Clients run full-batch descent
//! on a global prompt (aggregated each round) and a local prompt (kept
//! private), classify by the margin of a mixed text feature, and every
//! learned prompt decomposes exactly into feature coefficients.
//!
//! The crate has three layers:
//!
//! * simulation: [`bank`], [`data`], [`encoder`], [`train`]
//! * analysis: [`decomp`], [`theory`], [`eval`]
//! * harness: [`config`], [`io`], [`verify`], [`seed`]

pub mod bank;
pub mod config;
pub mod data;
pub mod decomp;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod seed;
pub mod sentinel;
pub mod theory;
pub mod train;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

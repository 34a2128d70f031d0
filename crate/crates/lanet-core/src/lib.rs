//! Desk-scale multimodal trajectory prediction.
//!
//! The pipeline: a [`scene`] (agents plus a vector map) is encoded by the
//! [`map_encoder`] and [`agent_encoder`] into viewpoint-invariant embeddings;
//! the [`decoder`] proposes and refines K trajectory modes per target agent,
//! pruning agent-map interactions through the learnable [`caip`] module; the
//! [`objective`] trains everything end to end against a Laplace-mixture
//! likelihood, and [`metrics`] scores the forecasts.
//!
//! All differentiable computation runs on the [`nn`] substrate, a small
//! recorded-graph engine with finite-difference verification.

pub mod agent_encoder;
pub mod caip;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod map_encoder;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod scene;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha12Rng::seed_from_u64(seed)
}

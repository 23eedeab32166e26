//! Deterministic federated-learning simulator.
//!
//! The crate bundles a small dense-network substrate ([`nn`]), synthetic
//! feature-skew federations ([`data`]), the client/server wire protocol with
//! byte-exact accounting ([`protocol`]), the federated training algorithms
//! ([`algo`]), manifold diagnostics ([`geometry`]) and a feature-inversion
//! privacy evaluator ([`privacy`]).

pub mod algo;
pub mod data;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod privacy;
pub mod protocol;
pub mod seeding;

pub use error::{Error, Result};
pub use nn::{NetworkSpec, Parameters, Tensor};

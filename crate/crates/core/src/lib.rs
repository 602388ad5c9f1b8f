//! Load balancing for flow networks under time-varying demand and supply.
//!
//! The crate synthesizes per-edge controllers for a network of storage nodes
//! `ẋ = f(x) + Bλ + P d(t)`, where `B` is the incidence matrix of a connected
//! graph, `λ` are controlled edge flows, and the demand/supply vector `d(t)`
//! is generated by a known neutrally stable linear exosystem. Each edge
//! measures only the difference of its endpoint states (`z = Bᵀx`) and embeds
//! a copy of the exosystem, so the closed loop rejects constant plus harmonic
//! imbalances and drives all nodes to a common stored value.
//!
//! Pipeline:
//!
//! 1. [`graph`] — incidence matrix, connectivity, spanning-tree edge partition.
//! 2. [`exosystem`] — block-skew generator `ẇ = S w`, `d = Γ w`, closed-form flow.
//! 3. [`synthesis`] — steady-state flows `λʷ = M w`, references, projection basis.
//! 4. [`plant`] — node dynamics variants (linear, gradient, saturated, positive).
//! 5. [`controller`] — internal-model edge controllers, static laws, saturation law.
//! 6. [`engine`] — fixed-step closed-loop integration and certificate checks.
//! 7. [`suites`] — seeded randomized verification suites over all of the above.

// Validation deliberately writes `!(x > 0.0)` instead of `x <= 0.0`: the
// negated form also rejects NaN, which must never pass a positivity gate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod engine;
pub mod error;
pub mod exosystem;
pub mod graph;
pub mod plant;
pub mod suites;
pub mod synthesis;

pub use error::{Error, Result};

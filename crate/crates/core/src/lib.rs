//! Event-driven Monte Carlo simulation of spatial Λ-coalescents.
//!
//! Particles perform independent continuous-time simple random walks on a
//! graph; whenever `b` of them share a site, any given `k`-tuple merges at
//! the rate induced by a finite driving measure Λ on `[0,1]`. The crate
//! provides:
//!
//! * [`mechanism`] — the driving measure, merger rates `λ_{b,k}`, total
//!   event rates and exact merger-size sampling;
//! * [`meanfield`] — the non-spatial block-count chain and its statistics;
//! * [`genealogy`] — Ewens sampling formula and the Bernoulli-sum law of
//!   the emigration count;
//! * [`lattice`] — graph substrates and Monte Carlo random-walk oracles;
//! * [`spatial`] — the event-driven spatial engine, coalescing random
//!   walks and the coupling constructions;
//! * [`asymptotics`] — tower/iterated-log utilities, schedules and
//!   power-law fitting.
//!
//! Numeric kernels are generic over the scalar type via [`Real`]; `f64`
//! aliases for the main types are exported at the crate root.

pub mod asymptotics;
pub mod error;
pub mod genealogy;
pub mod lattice;
pub mod meanfield;
pub mod mechanism;
pub mod quad;
pub mod real;
pub mod rng;
pub mod spatial;
pub mod stats;

pub use error::{CoalError, Result};
pub use real::Real;
pub use rng::{replica_rng, replicate, SimRng};

/// Driving measure over `f64`.
pub type LambdaMeasure64 = mechanism::LambdaMeasure<f64>;
/// Pairwise/total rate table over `f64`.
pub type RateTable64 = mechanism::RateTable<f64>;
/// Total-rate cache over `f64`.
pub type RateCache64 = mechanism::RateCache<f64>;
/// Mean-field block-count trajectory over `f64`.
pub type BlockCountTrajectory64 = meanfield::BlockCountTrajectory<f64>;
/// Spatial engine configuration over `f64`.
pub type SpatialConfig64 = spatial::SpatialConfig<f64>;
/// Spatial state snapshot over `f64` runs.
pub type SpatialState64 = spatial::SpatialState;
/// Multi-stage schedule over `f64`.
pub type ScheduleSpec64 = asymptotics::ScheduleSpec<f64>;

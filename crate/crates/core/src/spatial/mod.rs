//! The event-driven spatial Λ-coalescent engine and its variants.
//!
//! A state is a map from occupied site to block count. Each site with `b`
//! blocks carries total rate `λ_b·1{b>=2} + ρ·b`; sites are sampled
//! proportionally through an indexed sum tree updated in O(log #occupied)
//! per event, time advances by an exponential with the system rate, and an
//! event is either a merger (removing `K - 1` blocks, `K` drawn from the
//! merger-size law) or a migration of one block to a uniform neighbor.
//!
//! Submodules:
//! * [`engine`] — counts-only simulation (the default representation);
//! * [`labeled`] — per-particle runs with recorded genealogy, restriction
//!   couplings and flag bookkeeping;
//! * [`origin`] — the killed/frozen origin-block construction coupled to
//!   its mean-field reconstruction;
//! * [`crw`] — instantaneously coalescing random walks;
//! * [`pairs`] — the slowed pair-coalescent used for domination checks;
//! * [`drivers`] — density decay, survivor plateaus and the multi-scale
//!   observation schedule.

pub mod crw;
pub mod drivers;
pub mod engine;
pub mod labeled;
pub mod origin;
pub mod pairs;

mod tree;

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::{GraphSpec, Site};
use crate::mechanism::LambdaMeasure;
use crate::real::Real;

pub use engine::{simulate, simulate_with, EventKind, EventRecord, RunStats, SpatialObserver, StateView};
pub use labeled::{
    restricted_counts, verify_restriction_sandwich, LabeledEventKind, LabeledRun, SandwichReport,
};
pub use origin::{run_origin_block, OriginBlockStats};

/// Boundary policy applied when a block moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Free evolution on the whole graph.
    None,
    /// Blocks landing outside `B(o, R)` are removed.
    KillOutside(u32),
    /// Blocks landing outside `B(o, R)` are retained motionless; they stop
    /// moving and coalescing but stay counted as frozen.
    FreezeOutside(u32),
}

impl Boundary {
    pub(crate) fn radius(&self) -> Option<u32> {
        match self {
            Boundary::None => None,
            Boundary::KillOutside(r) | Boundary::FreezeOutside(r) => Some(*r),
        }
    }
}

/// Configuration of one spatial run.
#[derive(Debug, Clone)]
pub struct SpatialConfig<F: Real> {
    pub graph: GraphSpec,
    pub measure: LambdaMeasure<F>,
    /// Per-block jump rate ρ. Zero is allowed and freezes all motion.
    pub migration_rate: F,
    pub boundary: Boundary,
}

impl<F: Real> SpatialConfig<F> {
    pub fn new(graph: GraphSpec, measure: LambdaMeasure<F>, migration_rate: F) -> Result<Self> {
        if !(migration_rate >= F::zero()) {
            return Err(CoalError::arg("migration rate must be nonnegative"));
        }
        Ok(SpatialConfig {
            graph,
            measure,
            migration_rate,
            boundary: Boundary::None,
        })
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Result<Self> {
        if let Some(r) = boundary.radius() {
            if r < 1 {
                return Err(CoalError::arg("boundary radius must be >= 1"));
            }
        }
        self.boundary = boundary;
        Ok(self)
    }
}

/// Snapshot of per-site block counts (occupied sites only).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpatialState {
    /// Active blocks per site.
    pub counts: BTreeMap<Site, u64>,
    /// Frozen blocks per site (populated only under `FreezeOutside`).
    pub frozen: BTreeMap<Site, u64>,
}

impl SpatialState {
    /// All mass at one site.
    pub fn point(n: u64, site: Site) -> SpatialState {
        let mut counts = BTreeMap::new();
        if n > 0 {
            counts.insert(site, n);
        }
        SpatialState {
            counts,
            frozen: BTreeMap::new(),
        }
    }

    /// One block at each site of `B(o, radius)` independently with
    /// probability `p`.
    pub fn bernoulli_ball<R: Rng + ?Sized>(
        g: &GraphSpec,
        p: f64,
        radius: u32,
        rng: &mut R,
    ) -> SpatialState {
        let mut counts = BTreeMap::new();
        for site in g.ball_sites(radius) {
            if rng.random::<f64>() < p {
                counts.insert(site, 1);
            }
        }
        SpatialState {
            counts,
            frozen: BTreeMap::new(),
        }
    }

    /// `count` blocks at every site of `B(o, radius)`.
    pub fn fill_ball(g: &GraphSpec, count: u64, radius: u32) -> SpatialState {
        let mut counts = BTreeMap::new();
        if count > 0 {
            for site in g.ball_sites(radius) {
                counts.insert(site, count);
            }
        }
        SpatialState {
            counts,
            frozen: BTreeMap::new(),
        }
    }

    /// `s` blocks placed i.i.d. uniformly over the sites of `B(o, radius)`.
    pub fn uniform_ball<R: Rng + ?Sized>(
        g: &GraphSpec,
        s: u64,
        radius: u32,
        rng: &mut R,
    ) -> SpatialState {
        let sites = g.ball_sites(radius);
        let mut counts = BTreeMap::new();
        for _ in 0..s {
            let site = sites[rng.random_range(0..sites.len())];
            *counts.entry(site).or_insert(0) += 1;
        }
        SpatialState {
            counts,
            frozen: BTreeMap::new(),
        }
    }

    /// Total number of active blocks.
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn total_frozen(&self) -> u64 {
        self.frozen.values().sum()
    }

    /// Largest graph distance from the origin over occupied sites.
    pub fn max_dist_origin(&self, g: &GraphSpec) -> u32 {
        self.counts
            .keys()
            .chain(self.frozen.keys())
            .map(|s| g.dist_origin(*s))
            .max()
            .unwrap_or(0)
    }
}

//! The origin-block construction: all blocks start at one site, exits are
//! frozen at their landing site, and the run is coupled with the
//! mean-field chain reconstructed from the same event stream.
//!
//! One labeled-by-flag process drives three counts:
//!
//! * `N` — the mean-field block count: every block, exited or not, keeps
//!   coalescing (mergers draw uniform tuples from all blocks; restriction
//!   consistency makes the never-exited sub-process exactly the killed
//!   chain);
//! * `M` — blocks that never left the origin: a mean-field chain whose
//!   blocks are additionally killed at the migration rate;
//! * `Z` — cumulative exits, each landing on a uniform neighbor where it
//!   stays frozen.
//!
//! The sandwich `M(t) <= N(t) <= M(t) + Z(t)` holds per-path by
//! construction and is asserted at every event.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::Site;
use crate::mechanism::RateCache;
use crate::real::{exp_time, Real};

use super::SpatialConfig;

/// One sampled row of the coupled origin-block run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginSample<F: Real> {
    pub t: F,
    /// Never-left-origin block count.
    pub m: u64,
    /// Reconstructed mean-field block count.
    pub n_meanfield: u64,
    /// Cumulative exits.
    pub z: u64,
    /// Exact `∫_0^t N(s) ds` of the reconstructed chain.
    pub int_n: F,
}

/// Paths and landing tallies of one origin-block run.
#[derive(Debug, Clone)]
pub struct OriginBlockStats<F: Real> {
    pub rows: Vec<OriginSample<F>>,
    /// Frozen exit counts per landing site at the horizon.
    pub landings: BTreeMap<Site, u64>,
    /// Per-event violations of `M <= N <= M + Z` (exact check; must be 0).
    pub sandwich_violations: u64,
    pub horizon: F,
}

impl<F: Real> OriginBlockStats<F> {
    pub fn final_row(&self) -> OriginSample<F> {
        *self.rows.last().expect("horizon row always present")
    }
}

/// Run the coupled origin-block construction for `n` blocks at the origin
/// of `config.graph`, sampling the three paths at `sample_times` and at
/// the horizon.
pub fn run_origin_block<F: Real, R: Rng + ?Sized>(
    n: u64,
    horizon: F,
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    sample_times: &[F],
    rng: &mut R,
) -> Result<OriginBlockStats<F>> {
    if n < 1 {
        return Err(CoalError::arg("origin block run needs n >= 1"));
    }
    if !(horizon >= F::zero()) {
        return Err(CoalError::arg("horizon must be nonnegative"));
    }
    if !config.measure.is_kingman() && cache.b_max() < n {
        return Err(CoalError::arg("rate cache smaller than n"));
    }
    let is_kingman = config.measure.is_kingman();
    let kingman_mass = config.measure.atom0_mass();
    let merge_rate = |b: u64| -> F {
        if b < 2 {
            F::zero()
        } else if is_kingman {
            kingman_mass * F::of(b as f64) * F::of((b - 1) as f64) * F::of(0.5)
        } else {
            cache.total(b)
        }
    };
    let rho = config.migration_rate;
    let origin = config.graph.origin();
    let deg = config.graph.degree(origin);

    let mut b = n; // mean-field count
    let mut m = n; // never-left count
    let mut z = 0u64;
    let mut t = F::zero();
    let mut int_n = F::zero();
    let mut landings: BTreeMap<Site, u64> = BTreeMap::new();
    let mut rows = Vec::with_capacity(sample_times.len() + 1);
    let mut violations = 0u64;
    let mut next_sample = 0usize;

    loop {
        let rate = merge_rate(b) + rho * F::of(m as f64);
        let t_next = if rate > F::zero() {
            t + exp_time(rate, rng)
        } else {
            F::infinity()
        };
        while next_sample < sample_times.len()
            && sample_times[next_sample] < t_next
            && sample_times[next_sample] <= horizon
        {
            let st = sample_times[next_sample];
            rows.push(OriginSample {
                t: st,
                m,
                n_meanfield: b,
                z,
                int_n: int_n + F::of(b as f64) * (st - t),
            });
            next_sample += 1;
        }
        if t_next > horizon {
            int_n += F::of(b as f64) * (horizon - t);
            break;
        }
        int_n += F::of(b as f64) * (t_next - t);
        t = t_next;

        let u = F::sample_unit(rng) * rate;
        if u < merge_rate(b) {
            // mean-field merger: k uniform blocks out of b, of which a
            // hypergeometric number j were never-left
            let k = if is_kingman {
                2
            } else {
                cache.sample_merger_size(b, rng)?
            };
            let mut j = 0u64;
            let mut active_left = m;
            let mut pool = b;
            for _ in 0..k {
                if F::sample_unit(rng) * F::of(pool as f64) < F::of(active_left as f64) {
                    j += 1;
                    active_left -= 1;
                }
                pool -= 1;
            }
            b -= k - 1;
            if j >= 2 {
                // the restriction to never-left blocks sees a j-merger
                m -= j - 1;
            }
        } else {
            // one never-left block exits to a uniform neighbor and freezes
            m -= 1;
            z += 1;
            let nb = config.graph.neighbor(origin, rng.random_range(0..deg));
            *landings.entry(nb).or_insert(0) += 1;
        }
        if !(m <= b && b <= m + z) {
            violations += 1;
        }
    }

    while next_sample < sample_times.len() && sample_times[next_sample] <= horizon {
        rows.push(OriginSample {
            t: sample_times[next_sample],
            m,
            n_meanfield: b,
            z,
            int_n,
        });
        next_sample += 1;
    }
    rows.push(OriginSample {
        t: horizon,
        m,
        n_meanfield: b,
        z,
        int_n,
    });
    Ok(OriginBlockStats {
        rows,
        landings,
        sandwich_violations: violations,
        horizon,
    })
}

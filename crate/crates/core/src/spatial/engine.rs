//! Counts-only event-driven simulation.
//!
//! The default representation: merger rates at a site depend only on the
//! block count there, so every count-measurable statistic needs nothing
//! more. Per event exactly one of {merger removing K-1 blocks, migration
//! moving one block} happens; the total decreases only at mergers.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::{GraphSpec, Site};
use crate::mechanism::RateCache;
use crate::real::{exp_time, Real};

use super::tree::RateTree;
use super::{Boundary, SpatialConfig, SpatialState};

/// What happened at one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// `group` blocks at `site` merged into one.
    Merger { site: Site, group: u64 },
    Move { from: Site, to: Site },
    /// Block moved past a `KillOutside` boundary and was removed.
    Killed { from: Site, to: Site },
    /// Block moved past a `FreezeOutside` boundary and was retained
    /// motionless.
    Frozen { from: Site, to: Site },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord<F: Real> {
    pub t: F,
    pub kind: EventKind,
}

/// Read-only view of the running state handed to observers.
pub struct StateView<'a> {
    sites: &'a [Site],
    counts: &'a [u64],
    frozen: &'a HashMap<Site, u64>,
    pub total_active: u64,
    pub total_frozen: u64,
    pub graph: &'a GraphSpec,
}

impl StateView<'_> {
    pub fn count_at(&self, site: Site) -> u64 {
        self.sites
            .iter()
            .position(|s| *s == site)
            .map(|i| self.counts[i])
            .unwrap_or(0)
    }

    /// Occupied sites with counts, sorted by site for determinism.
    pub fn occupied_sorted(&self) -> Vec<(Site, u64)> {
        let mut v: Vec<(Site, u64)> = self
            .sites
            .iter()
            .copied()
            .zip(self.counts.iter().copied())
            .filter(|(_, c)| *c > 0)
            .collect();
        v.sort_unstable_by_key(|(s, _)| *s);
        v
    }

    pub fn occupied_site_count(&self) -> usize {
        self.counts.iter().filter(|c| **c > 0).count()
    }

    /// Largest origin distance over occupied (active or frozen) sites.
    pub fn max_dist_origin(&self) -> u32 {
        self.sites
            .iter()
            .zip(self.counts)
            .filter(|(_, c)| **c > 0)
            .map(|(s, _)| self.graph.dist_origin(*s))
            .chain(self.frozen.keys().map(|s| self.graph.dist_origin(*s)))
            .max()
            .unwrap_or(0)
    }

    /// Active blocks within graph distance `r` of the origin.
    pub fn count_within(&self, r: u32) -> u64 {
        self.sites
            .iter()
            .zip(self.counts)
            .filter(|(s, _)| self.graph.dist_origin(**s) <= r)
            .map(|(_, c)| *c)
            .sum()
    }
}

/// Observer callbacks: per event and at requested sample times.
pub trait SpatialObserver<F: Real> {
    fn on_event(&mut self, _ev: &EventRecord<F>, _view: &StateView<'_>) {}
    fn on_sample(&mut self, _t: F, _view: &StateView<'_>) {}
}

/// Aggregate facts about one finished run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats<F: Real> {
    pub events: u64,
    pub mergers: u64,
    pub migrations: u64,
    pub last_merger_time: Option<F>,
    pub final_time: F,
}

struct Slots<F: Real> {
    index: HashMap<Site, u32>,
    sites: Vec<Site>,
    counts: Vec<u64>,
    tree: RateTree<F>,
}

impl<F: Real> Slots<F> {
    fn new() -> Self {
        Slots {
            index: HashMap::new(),
            sites: Vec::new(),
            counts: Vec::new(),
            tree: RateTree::new(),
        }
    }

    fn insert_or_add(&mut self, site: Site, delta: u64, rate_of: impl Fn(u64) -> F) {
        match self.index.get(&site) {
            Some(&slot) => {
                let slot = slot as usize;
                self.counts[slot] += delta;
                self.tree.set(slot, rate_of(self.counts[slot]));
            }
            None => {
                let slot = self.sites.len() as u32;
                self.index.insert(site, slot);
                self.sites.push(site);
                self.counts.push(delta);
                self.tree.push(rate_of(delta));
            }
        }
    }

    fn decrease(&mut self, slot: usize, delta: u64, rate_of: impl Fn(u64) -> F) {
        debug_assert!(self.counts[slot] >= delta);
        self.counts[slot] -= delta;
        if self.counts[slot] == 0 {
            self.remove_slot(slot);
        } else {
            self.tree.set(slot, rate_of(self.counts[slot]));
        }
    }

    fn remove_slot(&mut self, slot: usize) {
        let last = self.sites.len() - 1;
        let site = self.sites[slot];
        self.index.remove(&site);
        if slot != last {
            let moved_site = self.sites[last];
            let moved_count = self.counts[last];
            let moved_rate = self.tree.get(last);
            self.sites[slot] = moved_site;
            self.counts[slot] = moved_count;
            self.tree.set(slot, moved_rate);
            self.index.insert(moved_site, slot as u32);
        }
        self.tree.set(last, F::zero());
        self.tree.pop();
        self.sites.pop();
        self.counts.pop();
    }
}

/// Exact event-driven simulation with a caller-supplied rate cache.
///
/// `sample_times` must be nondecreasing; observers receive the
/// right-continuous state at each. The cache must cover the initial total
/// count (the count at a single site can never exceed it).
pub fn simulate_with<F: Real, R: Rng + ?Sized>(
    initial: &SpatialState,
    t_end: F,
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    sample_times: &[F],
    observers: &mut [&mut dyn SpatialObserver<F>],
    rng: &mut R,
) -> Result<(SpatialState, RunStats<F>)> {
    if initial.counts.is_empty() {
        return Err(CoalError::arg("initial state must hold >= 1 block"));
    }
    if !(t_end >= F::zero()) {
        return Err(CoalError::arg("horizon must be nonnegative"));
    }
    if sample_times.windows(2).any(|w| w[1] < w[0]) {
        return Err(CoalError::arg("sample times must be nondecreasing"));
    }

    let rho = config.migration_rate;
    let is_kingman = cache.measure().is_kingman();
    let kingman_mass = cache.measure().atom0_mass();
    let merge_rate = |b: u64| -> F {
        if b < 2 {
            return F::zero();
        }
        if is_kingman {
            kingman_mass * F::of(b as f64) * F::of((b - 1) as f64) * F::of(0.5)
        } else {
            cache.total(b)
        }
    };
    let site_rate = move |b: u64| merge_rate(b) + rho * F::of(b as f64);

    let mut slots = Slots::new();
    let mut total_active = 0u64;
    for (&site, &c) in &initial.counts {
        if c > 0 {
            if !config.graph.contains(site) {
                return Err(CoalError::arg(format!("initial site {site:?} not in graph")));
            }
            slots.insert_or_add(site, c, site_rate);
            total_active += c;
        }
    }
    if !is_kingman && cache.b_max() < total_active {
        return Err(CoalError::arg(format!(
            "rate cache covers b <= {}, initial total is {total_active}",
            cache.b_max()
        )));
    }
    let mut frozen: HashMap<Site, u64> = HashMap::new();
    for (&site, &c) in &initial.frozen {
        if c > 0 {
            frozen.insert(site, c);
        }
    }
    let mut total_frozen: u64 = frozen.values().sum();

    let mut stats = RunStats {
        events: 0,
        mergers: 0,
        migrations: 0,
        last_merger_time: None,
        final_time: t_end,
    };
    let mut t = F::zero();
    let mut next_sample = 0usize;

    macro_rules! view {
        () => {
            StateView {
                sites: &slots.sites,
                counts: &slots.counts,
                frozen: &frozen,
                total_active,
                total_frozen,
                graph: &config.graph,
            }
        };
    }
    macro_rules! flush_samples {
        ($upto:expr) => {
            while next_sample < sample_times.len()
                && sample_times[next_sample] < $upto
                && sample_times[next_sample] <= t_end
            {
                let st = sample_times[next_sample];
                let v = view!();
                for obs in observers.iter_mut() {
                    obs.on_sample(st, &v);
                }
                next_sample += 1;
            }
        };
    }

    loop {
        let total_rate = slots.tree.total();
        if total_active == 0 || !(total_rate > F::zero()) {
            break;
        }
        let t_next = t + exp_time(total_rate, rng);
        flush_samples!(t_next);
        if t_next > t_end {
            break;
        }
        t = t_next;
        stats.events += 1;

        let target = F::sample_unit(rng) * total_rate;
        let slot = slots.tree.sample(target);
        let site = slots.sites[slot];
        let b = slots.counts[slot];
        let m_rate = merge_rate(b);
        let u2 = F::sample_unit(rng) * (m_rate + rho * F::of(b as f64));

        let kind = if u2 < m_rate {
            // merger of K blocks at this site
            let k = if is_kingman {
                2
            } else {
                cache.sample_merger_size(b, rng)?
            };
            slots.decrease(slot, k - 1, site_rate);
            total_active -= k - 1;
            stats.mergers += 1;
            stats.last_merger_time = Some(t);
            EventKind::Merger { site, group: k }
        } else {
            stats.migrations += 1;
            let to = config.graph.random_neighbor(site, rng);
            slots.decrease(slot, 1, site_rate);
            match config.boundary {
                Boundary::KillOutside(r) if config.graph.dist_origin(to) > r => {
                    total_active -= 1;
                    EventKind::Killed { from: site, to }
                }
                Boundary::FreezeOutside(r) if config.graph.dist_origin(to) > r => {
                    total_active -= 1;
                    total_frozen += 1;
                    *frozen.entry(to).or_insert(0) += 1;
                    EventKind::Frozen { from: site, to }
                }
                _ => {
                    slots.insert_or_add(to, 1, site_rate);
                    EventKind::Move { from: site, to }
                }
            }
        };

        let ev = EventRecord { t, kind };
        let v = view!();
        for obs in observers.iter_mut() {
            obs.on_event(&ev, &v);
        }
    }

    // no further events: remaining sample times read the final state
    flush_samples!(F::infinity());

    let mut final_counts = std::collections::BTreeMap::new();
    for (site, count) in slots.sites.iter().zip(&slots.counts) {
        if *count > 0 {
            final_counts.insert(*site, *count);
        }
    }
    let mut final_frozen = std::collections::BTreeMap::new();
    for (site, count) in &frozen {
        final_frozen.insert(*site, *count);
    }
    Ok((
        SpatialState {
            counts: final_counts,
            frozen: final_frozen,
        },
        stats,
    ))
}

/// As [`simulate_with`], building the rate cache from the configuration.
pub fn simulate<F: Real, R: Rng + ?Sized>(
    initial: &SpatialState,
    t_end: F,
    config: &SpatialConfig<F>,
    sample_times: &[F],
    observers: &mut [&mut dyn SpatialObserver<F>],
    rng: &mut R,
) -> Result<(SpatialState, RunStats<F>)> {
    let cache = config.measure.rate_cache(initial.total().max(2))?;
    simulate_with(initial, t_end, config, &cache, sample_times, observers, rng)
}

/// Observer recording the total active count at every sample time.
#[derive(Debug)]
pub struct TotalsAtTimes<F: Real> {
    pub rows: Vec<(F, u64)>,
}

impl<F: Real> Default for TotalsAtTimes<F> {
    fn default() -> Self {
        TotalsAtTimes { rows: Vec::new() }
    }
}

impl<F: Real> SpatialObserver<F> for TotalsAtTimes<F> {
    fn on_sample(&mut self, t: F, view: &StateView<'_>) {
        self.rows.push((t, view.total_active));
    }
}

/// Observer recording occupied-site count and occupied-ball radius.
#[derive(Debug)]
pub struct BallOccupancy<F: Real> {
    pub rows: Vec<(F, usize, u32)>,
}

impl<F: Real> Default for BallOccupancy<F> {
    fn default() -> Self {
        BallOccupancy { rows: Vec::new() }
    }
}

impl<F: Real> SpatialObserver<F> for BallOccupancy<F> {
    fn on_sample(&mut self, t: F, view: &StateView<'_>) {
        self.rows
            .push((t, view.occupied_site_count(), view.max_dist_origin()));
    }
}

/// Observer recording counts at a fixed list of sites.
#[derive(Debug)]
pub struct CountsAtSites<F: Real> {
    pub sites: Vec<Site>,
    pub rows: Vec<(F, Vec<u64>)>,
}

impl<F: Real> CountsAtSites<F> {
    pub fn new(sites: Vec<Site>) -> Self {
        CountsAtSites {
            sites,
            rows: Vec::new(),
        }
    }
}

impl<F: Real> SpatialObserver<F> for CountsAtSites<F> {
    fn on_sample(&mut self, t: F, view: &StateView<'_>) {
        let counts = self.sites.iter().map(|s| view.count_at(*s)).collect();
        self.rows.push((t, counts));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::LambdaMeasure;
    use crate::rng::{replica_rng, replicate};
    use crate::stats;

    fn kingman_config(graph: GraphSpec, rho: f64) -> SpatialConfig<f64> {
        SpatialConfig::new(graph, LambdaMeasure::kingman(1.0).unwrap(), rho).unwrap()
    }

    #[test]
    fn single_particle_walks_forever() {
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 1.0);
        let mut totals = TotalsAtTimes::default();
        let mut rng = replica_rng(1, 0);
        let (state, stats) = simulate(
            &SpatialState::point(1, Site::ORIGIN),
            50.0,
            &config,
            &[10.0, 25.0, 50.0],
            &mut [&mut totals],
            &mut rng,
        )
        .unwrap();
        assert_eq!(state.total(), 1);
        assert_eq!(stats.mergers, 0);
        assert!(totals.rows.iter().all(|(_, n)| *n == 1));
        assert!(stats.migrations > 10);
    }

    #[test]
    fn single_particle_displacement() {
        // the lone particle is a rate-rho walk
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 1.0);
        let t = 100.0;
        let vals: Vec<f64> = replicate(20_000, 2, |_, rng| {
            let (state, _) = simulate(
                &SpatialState::point(1, Site::ORIGIN),
                t,
                &config,
                &[],
                &mut [],
                rng,
            )
            .unwrap();
            state.counts.keys().next().unwrap().norm2_sq()
        });
        let mean = stats::mean(&vals);
        assert!((mean - t).abs() / t < 0.05, "mean square displacement {mean}");
    }

    #[test]
    fn two_particles_merge_at_unit_rate() {
        // rho = 0: co-located pair merges at Exp(1)
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 0.0);
        let times: Vec<f64> = replicate(100_000, 3, |_, rng| {
            let (_, stats) = simulate(
                &SpatialState::point(2, Site::ORIGIN),
                50.0,
                &config,
                &[],
                &mut [],
                rng,
            )
            .unwrap();
            stats.last_merger_time.expect("must merge by t=50")
        });
        let s = stats::Summary::from_values(&times);
        assert!((s.mean - 1.0).abs() < 3.0 * s.stderr, "mean {}", s.mean);
    }

    #[test]
    fn conservation_per_event() {
        // every event is one merger (total drops by group-1) or one move
        struct Conserve {
            last_total: u64,
        }
        impl SpatialObserver<f64> for Conserve {
            fn on_event(&mut self, ev: &EventRecord<f64>, view: &StateView<'_>) {
                let now = view.total_active + view.total_frozen;
                match ev.kind {
                    EventKind::Merger { group, .. } => {
                        assert_eq!(now, self.last_total - (group - 1));
                    }
                    EventKind::Killed { .. } => assert_eq!(now, self.last_total - 1),
                    _ => assert_eq!(now, self.last_total),
                }
                self.last_total = now;
            }
        }
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 1.0);
        let mut obs = Conserve { last_total: 200 };
        let mut rng = replica_rng(4, 0);
        simulate(
            &SpatialState::point(200, Site::ORIGIN),
            5.0,
            &config,
            &[],
            &mut [&mut obs],
            &mut rng,
        )
        .unwrap();
    }

    #[test]
    fn low_migration_matches_meanfield() {
        // rho -> 0: N*(1) distribution equals the mean-field N(1)
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 1e-6);
        let n = 1000u64;
        let spatial: Vec<f64> = replicate(2000, 5, |_, rng| {
            let (state, _) = simulate(
                &SpatialState::point(n, Site::ORIGIN),
                1.0,
                &config,
                &[],
                &mut [],
                rng,
            )
            .unwrap();
            state.total() as f64
        });
        let m = LambdaMeasure::kingman(1.0).unwrap();
        let meanfield: Vec<f64> = replicate(2000, 6, |_, rng| {
            crate::meanfield::count_at_time(n, 1.0, &m, &None, rng).unwrap() as f64
        });
        let (_, p) = stats::ks_two_sample(&spatial, &meanfield);
        assert!(p >= 0.01, "two-sample test rejected: p = {p}");
    }

    #[test]
    fn kill_boundary_removes_blocks() {
        let config = kingman_config(GraphSpec::zd(1).unwrap(), 1.0)
            .with_boundary(Boundary::KillOutside(2))
            .unwrap();
        let mut rng = replica_rng(7, 0);
        let (state, _) = simulate(
            &SpatialState::point(50, Site::ORIGIN),
            200.0,
            &config,
            &[],
            &mut [],
            &mut rng,
        )
        .unwrap();
        // everything either merged or walked out and was killed
        for site in state.counts.keys() {
            assert!(config.graph.dist_origin(*site) <= 2);
        }
        assert!(state.frozen.is_empty());
        assert!(state.total() <= 1, "total {}", state.total());
    }

    #[test]
    fn freeze_boundary_retains_blocks() {
        let config = kingman_config(GraphSpec::zd(1).unwrap(), 1.0)
            .with_boundary(Boundary::FreezeOutside(2))
            .unwrap();
        let mut rng = replica_rng(8, 0);
        let (state, _) = simulate(
            &SpatialState::point(30, Site::ORIGIN),
            100.0,
            &config,
            &[],
            &mut [],
            &mut rng,
        )
        .unwrap();
        assert!(state.total_frozen() > 0);
        for site in state.frozen.keys() {
            assert_eq!(config.graph.dist_origin(*site), 3);
        }
    }

    #[test]
    fn sample_times_read_right_continuous_state() {
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 0.0);
        let mut totals = TotalsAtTimes::default();
        let mut rng = replica_rng(9, 0);
        let (_, stats) = simulate(
            &SpatialState::point(2, Site::ORIGIN),
            1000.0,
            &config,
            &[0.0, 1000.0],
            &mut [&mut totals],
            &mut rng,
        )
        .unwrap();
        assert_eq!(totals.rows[0], (0.0, 2));
        assert_eq!(totals.rows[1], (1000.0, 1));
        assert_eq!(stats.mergers, 1);
    }

    #[test]
    fn rejects_empty_initial_state() {
        let config = kingman_config(GraphSpec::zd(2).unwrap(), 1.0);
        let mut rng = replica_rng(10, 0);
        let r = simulate(
            &SpatialState::default(),
            1.0,
            &config,
            &[],
            &mut [],
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn beta_spatial_runs() {
        let config = SpatialConfig::new(
            GraphSpec::zd(2).unwrap(),
            LambdaMeasure::beta(1.5).unwrap(),
            1.0,
        )
        .unwrap();
        let mut rng = replica_rng(11, 0);
        let (state, stats) = simulate(
            &SpatialState::point(5000, Site::ORIGIN),
            1.0,
            &config,
            &[],
            &mut [],
            &mut rng,
        )
        .unwrap();
        assert!(stats.mergers > 0);
        assert!(state.total() < 5000);
        assert!(state.total() >= 1);
    }
}

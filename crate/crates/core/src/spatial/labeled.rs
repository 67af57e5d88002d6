//! Labeled runs: per-particle trajectories with recorded genealogy.
//!
//! Blocks carry the minimal label of their constituents (the label rule of
//! the direct Poisson construction), so a block's id is stable and the
//! recorded event stream determines the whole labeled path. Restriction
//! couplings replay that stream: restricting to the particles that
//! intersect a class `B` of a partition yields, deterministically and
//! per-path, the spatial coalescent started from `B` alone.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::Site;
use crate::meanfield::BlockCountTrajectory;
use crate::mechanism::RateCache;
use crate::real::{exp_time, Real};

use super::tree::RateTree;
use super::{Boundary, SpatialConfig};

/// One live or absorbed block.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub site: Site,
    pub alive: bool,
    pub frozen: bool,
    /// Driver-interpreted flag bits; merged blocks OR their flags.
    pub flags: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabeledEventKind {
    Move {
        block: u32,
        from: Site,
        to: Site,
    },
    /// The blocks `absorbed` merged into `survivor` at `site`.
    Merge {
        site: Site,
        survivor: u32,
        absorbed: Vec<u32>,
    },
    /// Block crossed the boundary; `removed` distinguishes kill from freeze.
    Exit {
        block: u32,
        from: Site,
        to: Site,
        removed: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent<F: Real> {
    pub t: F,
    pub kind: LabeledEventKind,
}

/// A recorded labeled trajectory: initial sites by label plus the full
/// event stream.
#[derive(Debug, Clone)]
pub struct LabeledRun<F: Real> {
    pub initial_sites: Vec<Site>,
    pub t_end: F,
    pub events: Vec<LabeledEvent<F>>,
}

impl<F: Real> LabeledRun<F> {
    pub fn n(&self) -> u32 {
        self.initial_sites.len() as u32
    }
}

/// Event-driven simulation of the labeled spatial coalescent.
pub struct LabeledEngine<'a, F: Real> {
    config: &'a SpatialConfig<F>,
    cache: &'a RateCache<F>,
    pub blocks: Vec<Block>,
    /// Slot-compressed occupied sites; lists hold block ids.
    site_index: HashMap<Site, u32>,
    slot_sites: Vec<Site>,
    slot_lists: Vec<Vec<u32>>,
    tree: RateTree<F>,
    pub t: F,
    pub total_alive: u64,
    pub total_frozen: u64,
    pub mergers: u64,
    record: Option<Vec<LabeledEvent<F>>>,
}

impl<'a, F: Real> LabeledEngine<'a, F> {
    /// Start with one block per entry of `initial_sites`; label = index.
    pub fn new(
        initial_sites: &[Site],
        config: &'a SpatialConfig<F>,
        cache: &'a RateCache<F>,
        record: bool,
    ) -> Result<Self> {
        if initial_sites.is_empty() {
            return Err(CoalError::arg("labeled run needs >= 1 block"));
        }
        if !config.measure.is_kingman() && cache.b_max() < initial_sites.len() as u64 {
            return Err(CoalError::arg("rate cache smaller than initial count"));
        }
        let mut engine = LabeledEngine {
            config,
            cache,
            blocks: Vec::with_capacity(initial_sites.len()),
            site_index: HashMap::new(),
            slot_sites: Vec::new(),
            slot_lists: Vec::new(),
            tree: RateTree::new(),
            t: F::zero(),
            total_alive: initial_sites.len() as u64,
            total_frozen: 0,
            mergers: 0,
            record: record.then(Vec::new),
        };
        for (label, &site) in initial_sites.iter().enumerate() {
            if !config.graph.contains(site) {
                return Err(CoalError::arg(format!("initial site {site:?} not in graph")));
            }
            engine.blocks.push(Block {
                site,
                alive: true,
                frozen: false,
                flags: 0,
            });
            engine.add_to_site(site, label as u32);
        }
        Ok(engine)
    }

    fn site_rate(&self, b: u64) -> F {
        let merge = if b >= 2 {
            if self.config.measure.is_kingman() {
                self.config.measure.atom0_mass()
                    * F::of(b as f64)
                    * F::of((b - 1) as f64)
                    * F::of(0.5)
            } else {
                self.cache.total(b)
            }
        } else {
            F::zero()
        };
        merge + self.config.migration_rate * F::of(b as f64)
    }

    fn add_to_site(&mut self, site: Site, block: u32) {
        match self.site_index.get(&site) {
            Some(&slot) => {
                let slot = slot as usize;
                self.slot_lists[slot].push(block);
                let rate = self.site_rate(self.slot_lists[slot].len() as u64);
                self.tree.set(slot, rate);
            }
            None => {
                let slot = self.slot_sites.len() as u32;
                self.site_index.insert(site, slot);
                self.slot_sites.push(site);
                self.slot_lists.push(vec![block]);
                self.tree.push(self.site_rate(1));
            }
        }
    }

    fn after_removal(&mut self, slot: usize) {
        if self.slot_lists[slot].is_empty() {
            let last = self.slot_sites.len() - 1;
            let site = self.slot_sites[slot];
            self.site_index.remove(&site);
            if slot != last {
                let moved_site = self.slot_sites[last];
                self.slot_sites[slot] = moved_site;
                self.slot_lists.swap(slot, last);
                let rate = self.tree.get(last);
                self.tree.set(slot, rate);
                self.site_index.insert(moved_site, slot as u32);
            }
            self.tree.set(last, F::zero());
            self.tree.pop();
            self.slot_sites.pop();
            self.slot_lists.pop();
        } else {
            let rate = self.site_rate(self.slot_lists[slot].len() as u64);
            self.tree.set(slot, rate);
        }
    }

    /// Blocks currently at `site` (empty when unoccupied).
    pub fn blocks_at(&self, site: Site) -> &[u32] {
        match self.site_index.get(&site) {
            Some(&slot) => &self.slot_lists[slot as usize],
            None => &[],
        }
    }

    /// Advance until `t_end`. The hook runs after every applied event and
    /// may mutate block flags.
    pub fn run_until<R: Rng + ?Sized>(
        &mut self,
        t_end: F,
        rng: &mut R,
        hook: &mut impl FnMut(&mut [Block], &LabeledEvent<F>),
    ) -> Result<()> {
        if t_end < self.t {
            return Err(CoalError::arg("horizon precedes current time"));
        }
        loop {
            let total_rate = self.tree.total();
            if self.total_alive == 0 || !(total_rate > F::zero()) {
                self.t = t_end;
                return Ok(());
            }
            let t_next = self.t + exp_time(total_rate, rng);
            if t_next > t_end {
                self.t = t_end;
                return Ok(());
            }
            self.t = t_next;

            let target = F::sample_unit(rng) * total_rate;
            let slot = self.tree.sample(target);
            let site = self.slot_sites[slot];
            let b = self.slot_lists[slot].len() as u64;
            let merge_rate = self.site_rate(b) - self.config.migration_rate * F::of(b as f64);
            let u2 = F::sample_unit(rng)
                * (merge_rate + self.config.migration_rate * F::of(b as f64));

            let event = if u2 < merge_rate {
                self.mergers += 1;
                let k = if self.config.measure.is_kingman() {
                    2
                } else {
                    self.cache.sample_merger_size(b, rng)?
                } as usize;
                // uniform k-subset via partial shuffle
                let list = &mut self.slot_lists[slot];
                for i in 0..k {
                    let j = rng.random_range(i..list.len());
                    list.swap(i, j);
                }
                let participants: Vec<u32> = list[0..k].to_vec();
                let survivor = *participants.iter().min().unwrap();
                for i in (0..k).rev() {
                    list.swap_remove(i);
                }
                list.push(survivor);
                let mut flags = 0u8;
                for &p in &participants {
                    flags |= self.blocks[p as usize].flags;
                }
                let absorbed: Vec<u32> = participants
                    .iter()
                    .copied()
                    .filter(|&p| p != survivor)
                    .collect();
                for &p in &absorbed {
                    self.blocks[p as usize].alive = false;
                }
                self.blocks[survivor as usize].flags = flags;
                self.total_alive -= absorbed.len() as u64;
                self.after_removal(slot);
                LabeledEvent {
                    t: self.t,
                    kind: LabeledEventKind::Merge {
                        site,
                        survivor,
                        absorbed,
                    },
                }
            } else {
                let list = &mut self.slot_lists[slot];
                let pos = rng.random_range(0..list.len());
                let block = list.swap_remove(pos);
                let to = self.config.graph.random_neighbor(site, rng);
                self.after_removal(slot);
                let outside = self
                    .config
                    .boundary
                    .radius()
                    .is_some_and(|r| self.config.graph.dist_origin(to) > r);
                if outside {
                    let removed = matches!(self.config.boundary, Boundary::KillOutside(_));
                    let blk = &mut self.blocks[block as usize];
                    blk.site = to;
                    if removed {
                        blk.alive = false;
                    } else {
                        blk.frozen = true;
                        self.total_frozen += 1;
                    }
                    self.total_alive -= 1;
                    LabeledEvent {
                        t: self.t,
                        kind: LabeledEventKind::Exit {
                            block,
                            from: site,
                            to,
                            removed,
                        },
                    }
                } else {
                    self.blocks[block as usize].site = to;
                    self.add_to_site(to, block);
                    LabeledEvent {
                        t: self.t,
                        kind: LabeledEventKind::Move {
                            block,
                            from: site,
                            to,
                        },
                    }
                }
            };

            hook(&mut self.blocks, &event);
            if let Some(rec) = &mut self.record {
                rec.push(event);
            }
        }
    }

    /// Finish recording and hand back the run.
    pub fn into_run(self, initial_sites: Vec<Site>) -> LabeledRun<F> {
        LabeledRun {
            initial_sites,
            t_end: self.t,
            events: self.record.unwrap_or_default(),
        }
    }
}

/// Convenience: simulate a recorded labeled run.
pub fn record_labeled_run<F: Real, R: Rng + ?Sized>(
    initial_sites: Vec<Site>,
    t_end: F,
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    rng: &mut R,
) -> Result<LabeledRun<F>> {
    let mut engine = LabeledEngine::new(&initial_sites, config, cache, true)?;
    engine.run_until(t_end, rng, &mut |_, _| {})?;
    Ok(engine.into_run(initial_sites))
}

/// Replay state: which class ids each live block intersects.
struct Replay {
    site_of: HashMap<u32, Site>,
    classes_of: HashMap<u32, Vec<u16>>,
    blocks_at: HashMap<Site, Vec<u32>>,
}

impl Replay {
    fn new<F: Real>(run: &LabeledRun<F>, class_of_label: &[u16]) -> Replay {
        let mut site_of = HashMap::new();
        let mut classes_of = HashMap::new();
        let mut blocks_at: HashMap<Site, Vec<u32>> = HashMap::new();
        for (label, &site) in run.initial_sites.iter().enumerate() {
            let label = label as u32;
            site_of.insert(label, site);
            classes_of.insert(label, vec![class_of_label[label as usize]]);
            blocks_at.entry(site).or_default().push(label);
        }
        Replay {
            site_of,
            classes_of,
            blocks_at,
        }
    }

    fn detach(&mut self, block: u32) -> Site {
        let site = self.site_of[&block];
        let list = self.blocks_at.get_mut(&site).expect("occupied site");
        let pos = list.iter().position(|&b| b == block).expect("block at site");
        list.swap_remove(pos);
        if list.is_empty() {
            self.blocks_at.remove(&site);
        }
        site
    }
}

fn class_lookup<F: Real>(run: &LabeledRun<F>, classes: &[Vec<u32>]) -> Result<Vec<u16>> {
    if classes.is_empty() || classes.len() > u16::MAX as usize {
        return Err(CoalError::arg("partition must have between 1 and 65535 classes"));
    }
    let n = run.initial_sites.len();
    let mut lookup = vec![u16::MAX; n];
    for (ci, class) in classes.iter().enumerate() {
        for &label in class {
            if label as usize >= n {
                return Err(CoalError::arg(format!("label {label} outside 0..{n}")));
            }
            if lookup[label as usize] != u16::MAX {
                return Err(CoalError::arg(format!("label {label} in two classes")));
            }
            lookup[label as usize] = ci as u16;
        }
    }
    if lookup.iter().any(|&c| c == u16::MAX) {
        return Err(CoalError::arg("partition must cover every label"));
    }
    Ok(lookup)
}

/// Deterministic restriction of a recorded run to each class of a
/// partition of the labels.
///
/// Returns one block-count trajectory per class: the path of the spatial
/// coalescent that starts from the class's particles alone, extracted
/// per-path from the full run.
pub fn restricted_counts<F: Real>(
    run: &LabeledRun<F>,
    classes: &[Vec<u32>],
) -> Result<Vec<BlockCountTrajectory<F>>> {
    let lookup = class_lookup(run, classes)?;
    let mut replay = Replay::new(run, &lookup);
    let mut counts: Vec<u64> = vec![0; classes.len()];
    for &c in &lookup {
        counts[c as usize] += 1;
    }
    let mut trajs: Vec<Vec<(F, u64)>> = vec![Vec::new(); classes.len()];

    for ev in &run.events {
        match &ev.kind {
            LabeledEventKind::Move { block, to, .. } => {
                replay.detach(*block);
                replay.site_of.insert(*block, *to);
                replay.blocks_at.entry(*to).or_default().push(*block);
            }
            LabeledEventKind::Exit { block, to, removed, .. } => {
                replay.detach(*block);
                if *removed {
                    // a killed block leaves each restricted process too
                    for &c in &replay.classes_of[block] {
                        counts[c as usize] -= 1;
                        trajs[c as usize].push((ev.t, counts[c as usize]));
                    }
                    replay.site_of.remove(block);
                    replay.classes_of.remove(block);
                } else {
                    replay.site_of.insert(*block, *to);
                }
            }
            LabeledEventKind::Merge {
                survivor, absorbed, ..
            } => {
                // per class: j participants intersecting it merge into one
                let mut union: Vec<u16> = replay.classes_of[survivor].clone();
                let mut per_class: HashMap<u16, u64> = HashMap::new();
                for &c in &replay.classes_of[survivor] {
                    *per_class.entry(c).or_insert(0) += 1;
                }
                for a in absorbed {
                    replay.detach(*a);
                    for &c in &replay.classes_of[a] {
                        *per_class.entry(c).or_insert(0) += 1;
                        if !union.contains(&c) {
                            union.push(c);
                        }
                    }
                    replay.site_of.remove(a);
                    replay.classes_of.remove(a);
                }
                union.sort_unstable();
                let mut touched: Vec<u16> = per_class
                    .iter()
                    .filter(|(_, j)| **j >= 2)
                    .map(|(c, _)| *c)
                    .collect();
                touched.sort_unstable();
                for c in touched {
                    let j = per_class[&c];
                    counts[c as usize] -= j - 1;
                    trajs[c as usize].push((ev.t, counts[c as usize]));
                }
                replay.classes_of.insert(*survivor, union);
            }
        }
    }

    Ok(classes
        .iter()
        .zip(trajs)
        .map(|(class, events)| BlockCountTrajectory::from_parts(class.len() as u64, run.t_end, events))
        .collect())
}

/// Outcome of the per-path sandwich verification.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SandwichReport {
    pub checks: u64,
    pub violations: u64,
}

/// Verify, at every event and affected site, the per-path restriction
/// sandwich: for every class `B` and site `v`,
/// `X^B_v(t) <= X_v(t) <= Σ_i X^{B_i}_v(t)`. Exact assertion, no tolerance.
pub fn verify_restriction_sandwich<F: Real>(
    run: &LabeledRun<F>,
    classes: &[Vec<u32>],
) -> Result<SandwichReport> {
    let lookup = class_lookup(run, classes)?;
    let mut replay = Replay::new(run, &lookup);
    let mut report = SandwichReport::default();

    let check_site = |replay: &Replay, site: Site, report: &mut SandwichReport| {
        let blocks = match replay.blocks_at.get(&site) {
            Some(b) => b,
            None => return,
        };
        let full = blocks.len() as u64;
        let mut sum_over_classes = 0u64;
        let mut per_class: HashMap<u16, u64> = HashMap::new();
        for b in blocks {
            let cls = &replay.classes_of[b];
            sum_over_classes += cls.len() as u64;
            for &c in cls {
                *per_class.entry(c).or_insert(0) += 1;
            }
        }
        report.checks += 1;
        for (_, x_b) in per_class {
            if x_b > full {
                report.violations += 1;
            }
        }
        if full > sum_over_classes {
            report.violations += 1;
        }
    };

    let initial_sites: Vec<Site> = {
        let mut s: Vec<Site> = run.initial_sites.clone();
        s.sort_unstable();
        s.dedup();
        s
    };
    for site in initial_sites {
        check_site(&replay, site, &mut report);
    }

    for ev in &run.events {
        match &ev.kind {
            LabeledEventKind::Move { block, from, to } => {
                replay.detach(*block);
                replay.site_of.insert(*block, *to);
                replay.blocks_at.entry(*to).or_default().push(*block);
                check_site(&replay, *from, &mut report);
                check_site(&replay, *to, &mut report);
            }
            LabeledEventKind::Exit { block, from, to, removed } => {
                replay.detach(*block);
                if *removed {
                    replay.site_of.remove(block);
                    replay.classes_of.remove(block);
                } else {
                    replay.site_of.insert(*block, *to);
                }
                check_site(&replay, *from, &mut report);
            }
            LabeledEventKind::Merge {
                site,
                survivor,
                absorbed,
            } => {
                let mut union: Vec<u16> = replay.classes_of[survivor].clone();
                for a in absorbed {
                    replay.detach(*a);
                    for &c in &replay.classes_of[a] {
                        if !union.contains(&c) {
                            union.push(c);
                        }
                    }
                    replay.site_of.remove(a);
                    replay.classes_of.remove(a);
                }
                union.sort_unstable();
                replay.classes_of.insert(*survivor, union);
                check_site(&replay, *site, &mut report);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::GraphSpec;
    use crate::mechanism::LambdaMeasure;
    use crate::rng::replica_rng;

    fn config(rho: f64) -> SpatialConfig<f64> {
        SpatialConfig::new(
            GraphSpec::zd(2).unwrap(),
            LambdaMeasure::kingman(1.0).unwrap(),
            rho,
        )
        .unwrap()
    }

    fn run_small(seed: u64, n: usize, t: f64, rho: f64) -> LabeledRun<f64> {
        let cfg = config(rho);
        let cache = cfg.measure.rate_cache(n as u64).unwrap();
        let mut rng = replica_rng(seed, 0);
        record_labeled_run(vec![Site::ORIGIN; n], t, &cfg, &cache, &mut rng).unwrap()
    }

    #[test]
    fn whole_partition_restriction_equals_full_process() {
        let run = run_small(1, 60, 2.0, 0.5);
        let all: Vec<u32> = (0..60).collect();
        let trajs = restricted_counts(&run, &[all]).unwrap();
        // full count after every merger equals the restriction's count
        let mut full = 60u64;
        let mut idx = 0;
        for ev in &run.events {
            if let LabeledEventKind::Merge { absorbed, .. } = &ev.kind {
                full -= absorbed.len() as u64;
                assert_eq!(trajs[0].events()[idx].1, full);
                idx += 1;
            }
        }
        assert_eq!(idx, trajs[0].events().len());
    }

    #[test]
    fn singleton_class_is_one_walker() {
        let run = run_small(2, 40, 3.0, 1.0);
        let mut classes: Vec<Vec<u32>> = vec![(1..40).collect()];
        classes.push(vec![0]);
        let trajs = restricted_counts(&run, &classes).unwrap();
        assert_eq!(trajs[1].initial(), 1);
        assert!(trajs[1].events().is_empty(), "single walker never merges");
        assert_eq!(trajs[1].count_at(3.0).unwrap(), 1);
    }

    #[test]
    fn sandwich_holds_on_random_partitions() {
        for seed in 0..5u64 {
            let run = run_small(3 + seed, 50, 2.0, 1.0);
            let mut rng = replica_rng(100 + seed, 0);
            let r = 4usize;
            let mut classes: Vec<Vec<u32>> = vec![Vec::new(); r];
            for label in 0..50u32 {
                classes[rng.random_range(0..r)].push(label);
            }
            classes.retain(|c| !c.is_empty());
            let report = verify_restriction_sandwich(&run, &classes).unwrap();
            assert_eq!(report.violations, 0, "seed {seed}: {report:?}");
            assert!(report.checks > 0);
        }
    }

    #[test]
    fn restriction_is_monotone_in_class() {
        // block count of a sub-class never exceeds the full restriction
        let run = run_small(9, 80, 1.5, 0.3);
        let small: Vec<u32> = (0..20).collect();
        let large: Vec<u32> = (0..80).collect();
        let t_small = &restricted_counts(&run, &[small]).unwrap()[0];
        let t_large = &restricted_counts(&run, &[large]).unwrap()[0];
        for frac in 0..=30 {
            let t = 1.5 * frac as f64 / 30.0;
            assert!(t_small.count_at(t).unwrap() <= t_large.count_at(t).unwrap());
        }
    }

    #[test]
    fn meanfield_monotone_coupling_in_n() {
        // single-site, rho = 0: the restriction construction couples the
        // chains started from m < n with shared randomness, per-path
        let cfg = config(0.0);
        let cache = cfg.measure.rate_cache(100).unwrap();
        for seed in 0..4u64 {
            let mut rng = replica_rng(20 + seed, 0);
            let run =
                record_labeled_run(vec![Site::ORIGIN; 100], 3.0, &cfg, &cache, &mut rng).unwrap();
            for m in [10u32, 40, 70] {
                let class: Vec<u32> = (0..m).collect();
                let restricted = &restricted_counts(&run, &[class]).unwrap()[0];
                let full = &restricted_counts(&run, &[(0..100).collect()]).unwrap()[0];
                for frac in 0..=20 {
                    let t = 3.0 * frac as f64 / 20.0;
                    assert!(
                        restricted.count_at(t).unwrap() <= full.count_at(t).unwrap(),
                        "seed {seed} m {m} t {t}"
                    );
                }
            }
        }
    }

    #[test]
    fn rejects_bad_partitions() {
        let run = run_small(4, 10, 0.5, 1.0);
        assert!(restricted_counts(&run, &[vec![0, 11]]).is_err());
        assert!(restricted_counts(&run, &[vec![0, 1], vec![1, 2]]).is_err());
        assert!(restricted_counts(&run, &[vec![0, 1]]).is_err(), "must cover");
    }

    #[test]
    fn labels_inherit_minimum() {
        let run = run_small(5, 30, 4.0, 0.2);
        for ev in &run.events {
            if let LabeledEventKind::Merge {
                survivor, absorbed, ..
            } = &ev.kind
            {
                for a in absorbed {
                    assert!(survivor < a, "survivor {survivor} absorbed {a}");
                }
            }
        }
    }
}

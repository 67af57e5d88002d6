//! Instantaneously coalescing random walks.
//!
//! Labeled walkers jump at rate ρ; a walker landing on an occupied site
//! merges immediately and the surviving particle keeps the smaller label.
//! Every site holds at most one particle at all event boundaries. Initial
//! states with several particles on a site are collapsed at time zero
//! (minimal label survives).

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::{GraphSpec, Site};
use crate::real::{exp_time, Real};

#[derive(Debug, Clone, Copy)]
struct Walker {
    label: u32,
    site: Site,
}

/// Outcome of a coalescing-random-walk run.
#[derive(Debug, Clone)]
pub struct CrwResult<F: Real> {
    /// Particle count at each sample time.
    pub rows: Vec<(F, u64)>,
    /// Surviving particles at the horizon, by site.
    pub occupancy: BTreeMap<Site, u32>,
    pub last_merge_time: Option<F>,
    pub horizon: F,
}

impl<F: Real> CrwResult<F> {
    pub fn survivors(&self) -> u64 {
        self.occupancy.len() as u64
    }
}

/// Simulate coalescing random walks from labeled initial positions
/// (label = index).
pub fn simulate_crw<F: Real, R: Rng + ?Sized>(
    initial_sites: &[Site],
    t_end: F,
    graph: &GraphSpec,
    rho: F,
    sample_times: &[F],
    rng: &mut R,
) -> Result<CrwResult<F>> {
    if initial_sites.is_empty() {
        return Err(CoalError::arg("crw needs >= 1 walker"));
    }
    if !(rho > F::zero()) {
        return Err(CoalError::arg("crw needs a positive jump rate"));
    }
    // collapse co-located starters, minimal label survives
    let mut occupancy: HashMap<Site, usize> = HashMap::new();
    let mut walkers: Vec<Walker> = Vec::new();
    let mut last_merge = None;
    for (label, &site) in initial_sites.iter().enumerate() {
        if !graph.contains(site) {
            return Err(CoalError::arg(format!("initial site {site:?} not in graph")));
        }
        match occupancy.get(&site) {
            Some(&idx) => {
                walkers[idx].label = walkers[idx].label.min(label as u32);
                last_merge = Some(F::zero());
            }
            None => {
                occupancy.insert(site, walkers.len());
                walkers.push(Walker {
                    label: label as u32,
                    site,
                });
            }
        }
    }

    let mut t = F::zero();
    let mut rows = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0usize;

    loop {
        let n = walkers.len() as u64;
        let rate = rho * F::of(n as f64);
        let t_next = if n >= 1 && rate > F::zero() {
            t + exp_time(rate, rng)
        } else {
            F::infinity()
        };
        while next_sample < sample_times.len()
            && sample_times[next_sample] < t_next
            && sample_times[next_sample] <= t_end
        {
            rows.push((sample_times[next_sample], n));
            next_sample += 1;
        }
        if t_next > t_end {
            break;
        }
        t = t_next;

        let i = rng.random_range(0..walkers.len());
        let from = walkers[i].site;
        let to = graph.random_neighbor(from, rng);
        occupancy.remove(&from);
        match occupancy.get(&to).copied() {
            Some(j) => {
                // instantaneous merge; smaller label survives at `to`
                walkers[j].label = walkers[j].label.min(walkers[i].label);
                last_merge = Some(t);
                walkers.swap_remove(i);
                if i < walkers.len() {
                    // the former last walker (possibly the occupant of
                    // `to`) now lives in slot i
                    occupancy.insert(walkers[i].site, i);
                }
            }
            None => {
                walkers[i].site = to;
                occupancy.insert(to, i);
            }
        }
    }

    let mut final_occ = BTreeMap::new();
    for w in &walkers {
        final_occ.insert(w.site, w.label);
    }
    Ok(CrwResult {
        rows,
        occupancy: final_occ,
        last_merge_time: last_merge,
        horizon: t_end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replica_rng, replicate};
    use crate::stats;

    #[test]
    fn one_walker_survives_forever() {
        let g = GraphSpec::zd(2).unwrap();
        let mut rng = replica_rng(1, 0);
        let r = simulate_crw(
            &[Site::ORIGIN],
            100.0f64,
            &g,
            1.0,
            &[1.0, 10.0, 100.0],
            &mut rng,
        )
        .unwrap();
        assert!(r.rows.iter().all(|(_, n)| *n == 1));
        assert_eq!(r.survivors(), 1);
        assert!(r.last_merge_time.is_none());
    }

    #[test]
    fn colocated_starters_collapse_at_zero() {
        let g = GraphSpec::zd(2).unwrap();
        let mut rng = replica_rng(2, 0);
        let r = simulate_crw(
            &[Site::ORIGIN, Site::ORIGIN, Site([1, 0, 0, 0])],
            0.0f64,
            &g,
            1.0,
            &[],
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.survivors(), 2);
        assert_eq!(r.occupancy[&Site::ORIGIN], 0, "minimal label survives");
    }

    #[test]
    fn occupancy_is_simple_at_all_times() {
        // at most one particle per site: occupancy map is the walker set
        let g = GraphSpec::torus(2, 8).unwrap();
        for seed in 0..5 {
            let mut rng = replica_rng(3, seed);
            let sites: Vec<Site> = (0..30)
                .map(|_| {
                    Site([
                        rng.random_range(0..8),
                        rng.random_range(0..8),
                        0,
                        0,
                    ])
                })
                .collect();
            let r = simulate_crw(&sites, 20.0f64, &g, 1.0, &[], &mut rng).unwrap();
            // labels unique, sites unique by BTreeMap construction
            let mut labels: Vec<u32> = r.occupancy.values().copied().collect();
            labels.sort_unstable();
            labels.dedup();
            assert_eq!(labels.len(), r.occupancy.len());
        }
    }

    #[test]
    fn d3_survivor_count_scales() {
        // s = a·m^{d-2} walkers uniform in B(o,m): a constant fraction
        // survives, uniformly in m
        let g = GraphSpec::zd(3).unwrap();
        let a = 4.0;
        for (i, m) in [8u32, 16].into_iter().enumerate() {
            let s = (a * m as f64) as usize;
            let ball = g.ball_sites(m);
            let horizon = 40.0 * (m as f64) * (m as f64);
            let survived: Vec<f64> = replicate(60, 40 + i as u64, |_, rng| {
                let starts: Vec<Site> = (0..s)
                    .map(|_| ball[rng.random_range(0..ball.len())])
                    .collect();
                let r = simulate_crw(&starts, horizon, &g, 1.0f64, &[], rng).unwrap();
                r.survivors() as f64
            });
            let frac_ok = survived
                .iter()
                .filter(|&&z| z > a * m as f64 / 4.0)
                .count() as f64
                / survived.len() as f64;
            assert!(frac_ok >= 0.9, "m={m}: fraction {frac_ok}, counts {survived:?}");
        }
    }

    #[test]
    fn negative_correlation_between_sites() {
        // Arratia inequality: E X_x X_y <= E X_x · E X_y (+ noise allowance)
        let g = GraphSpec::torus(2, 16).unwrap();
        let reps = 4000;
        let x = Site([3, 3, 0, 0]);
        let y = Site([10, 12, 0, 0]);
        let pairs: Vec<(f64, f64)> = replicate(reps, 5, |_, rng| {
            let sites: Vec<Site> = (0..60)
                .map(|_| Site([rng.random_range(0..16), rng.random_range(0..16), 0, 0]))
                .collect();
            let r = simulate_crw(&sites, 30.0f64, &g, 1.0, &[], rng).unwrap();
            (
                r.occupancy.contains_key(&x) as u64 as f64,
                r.occupancy.contains_key(&y) as u64 as f64,
            )
        });
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let (cov, se) = stats::covariance_with_stderr(&xs, &ys);
        assert!(cov <= 3.0 * se, "cov {cov} se {se}");
    }
}

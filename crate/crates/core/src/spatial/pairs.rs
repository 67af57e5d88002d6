//! The slowed pair-coalescent used for domination checks.
//!
//! Blocks are partitioned into classes of size one or two; only the two
//! members of a class may merge, at rate `a0` while co-located, and each
//! class merges at most once. Under `λ_n >= a0·n` the true coalescent
//! loses blocks at least as fast, so its count is stochastically dominated
//! by this process.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::lattice::{GraphSpec, Site};
use crate::real::{exp_time, Real};

#[derive(Debug, Clone, Copy)]
struct PairBlock {
    site: Site,
    class: u32,
    alive: bool,
}

/// Count trajectory of the pair process sampled on a grid.
pub fn pair_coalescent_counts<F: Real, R: Rng + ?Sized>(
    initial_sites: &[Site],
    a0: F,
    rho: F,
    graph: &GraphSpec,
    t_end: F,
    sample_times: &[F],
    rng: &mut R,
) -> Result<Vec<(F, u64)>> {
    if initial_sites.is_empty() {
        return Err(CoalError::arg("pair process needs >= 1 block"));
    }
    if !(a0 > F::zero()) || !(rho >= F::zero()) {
        return Err(CoalError::arg("need a0 > 0 and rho >= 0"));
    }
    // consecutive blocks are partners: class c holds blocks 2c, 2c+1
    let mut blocks: Vec<PairBlock> = initial_sites
        .iter()
        .enumerate()
        .map(|(i, &site)| PairBlock {
            site,
            class: (i / 2) as u32,
            alive: true,
        })
        .collect();

    let mut alive: Vec<u32> = (0..blocks.len() as u32).collect();
    let mut alive_pos: Vec<usize> = (0..blocks.len()).collect();
    // classes whose two members are co-located and not yet merged
    let mut hot: Vec<u32> = Vec::new();
    let mut hot_pos: HashMap<u32, usize> = HashMap::new();

    let colocated = |blocks: &[PairBlock], i: usize| -> bool {
        let p = i ^ 1;
        p < blocks.len()
            && blocks[p].alive
            && blocks[i].alive
            && blocks[p].site == blocks[i].site
    };
    for i in (0..blocks.len()).step_by(2) {
        if colocated(&blocks, i) {
            hot_pos.insert(blocks[i].class, hot.len());
            hot.push(blocks[i].class);
        }
    }

    let mut t = F::zero();
    let mut rows = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0usize;

    macro_rules! unhot {
        ($class:expr) => {
            if let Some(pos) = hot_pos.remove(&$class) {
                hot.swap_remove(pos);
                if pos < hot.len() {
                    hot_pos.insert(hot[pos], pos);
                }
            }
        };
    }

    loop {
        let n = alive.len() as u64;
        let rate = rho * F::of(n as f64) + a0 * F::of(hot.len() as f64);
        let t_next = if rate > F::zero() {
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

        let u = F::sample_unit(rng) * rate;
        if u < a0 * F::of(hot.len() as f64) {
            // merge a uniformly chosen co-located pair
            let class = hot[rng.random_range(0..hot.len())];
            unhot!(class);
            let i = (class as usize) * 2;
            let loser = i + 1;
            blocks[loser].alive = false;
            let pos = alive_pos[loser];
            alive.swap_remove(pos);
            if pos < alive.len() {
                alive_pos[alive[pos] as usize] = pos;
            }
        } else {
            // one uniform block walks
            let idx = alive[rng.random_range(0..alive.len())] as usize;
            let class = blocks[idx].class;
            let was_hot = colocated(&blocks, idx);
            blocks[idx].site = graph.random_neighbor(blocks[idx].site, rng);
            let now_hot = colocated(&blocks, idx);
            if was_hot && !now_hot {
                unhot!(class);
            } else if !was_hot && now_hot {
                hot_pos.insert(class, hot.len());
                hot.push(class);
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_rng;

    #[test]
    fn pairs_merge_at_most_once() {
        let g = GraphSpec::zd(2).unwrap();
        let mut rng = replica_rng(1, 0);
        let init = vec![Site::ORIGIN; 20];
        let rows =
            pair_coalescent_counts(&init, 0.5f64, 0.2, &g, 100.0, &[100.0], &mut rng).unwrap();
        let final_n = rows[0].1;
        // ten pairs can lose at most one block each
        assert!(final_n >= 10, "final {final_n}");
    }

    #[test]
    fn counts_nonincreasing() {
        let g = GraphSpec::zd(1).unwrap();
        let mut rng = replica_rng(2, 0);
        let init = vec![Site::ORIGIN; 30];
        let grid: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let rows = pair_coalescent_counts(&init, 0.5f64, 1.0, &g, 20.0, &grid, &mut rng).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }
}

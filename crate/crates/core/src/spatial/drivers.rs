//! Higher-level experiment drivers: density decay in a confined ball,
//! survivor plateaus, and the multi-scale observation schedule.

use rand::Rng;

use crate::asymptotics::{make_schedule, ScheduleKind};
use crate::error::{CoalError, Result};
use crate::lattice::GraphKind;
use crate::mechanism::RateCache;
use crate::real::Real;

use super::engine::{simulate_with, SpatialObserver, StateView, TotalsAtTimes};
use super::labeled::{Block, LabeledEngine, LabeledEvent, LabeledEventKind};
use super::{Boundary, SpatialConfig, SpatialState};

/// Density trajectory with inverse-density increments.
#[derive(Debug, Clone)]
pub struct DensityTrajectory<F: Real> {
    /// `(t, S_t)`: blocks that never left the ball, on the grid.
    pub rows: Vec<(F, u64)>,
    pub radius: u32,
    /// `S_t / R^d` per row.
    pub densities: Vec<(F, F)>,
    /// Increments of `1/density` between consecutive grid points.
    pub inverse_increments: Vec<F>,
}

/// Measure `S_t`, the number of blocks that never left `B(o, R)`, on a
/// time grid. The configuration must confine with `KillOutside(R)` or
/// `FreezeOutside(R)`; under either, every still-active block has never
/// left the ball.
pub fn density_decay<F: Real, R: Rng + ?Sized>(
    initial: &SpatialState,
    t_grid: &[F],
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    rng: &mut R,
) -> Result<DensityTrajectory<F>> {
    let radius = config.boundary.radius().ok_or_else(|| {
        CoalError::arg("density decay needs a KillOutside or FreezeOutside boundary")
    })?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoalError::arg("time grid must be nonempty and increasing"));
    }
    let t_end = *t_grid.last().unwrap();
    let d = match config.graph.kind() {
        GraphKind::ZdLattice { d } => *d as i32,
        _ => {
            return Err(CoalError::arg("density decay is defined on Z^d"));
        }
    };
    let mut totals = TotalsAtTimes::default();
    simulate_with(
        initial,
        t_end,
        config,
        cache,
        t_grid,
        &mut [&mut totals],
        rng,
    )?;
    let volume = F::of((radius as f64).powi(d));
    let densities: Vec<(F, F)> = totals
        .rows
        .iter()
        .map(|&(t, s)| (t, F::of(s as f64) / volume))
        .collect();
    let inverse_increments = densities
        .windows(2)
        .map(|w| {
            let a = if w[0].1 > F::zero() { w[0].1.recip() } else { F::infinity() };
            let b = if w[1].1 > F::zero() { w[1].1.recip() } else { F::infinity() };
            b - a
        })
        .collect();
    Ok(DensityTrajectory {
        rows: totals.rows,
        radius,
        densities,
        inverse_increments,
    })
}

/// Plateau detection outcome for the survivor estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plateau {
    /// No merger in the trailing window; the final count estimates the
    /// number of blocks surviving forever.
    Detected(u64),
    NotDetected,
    /// Plateau semantics need a transient lattice (d >= 3); on recurrent
    /// graphs the count keeps decaying and no finite schedule certifies a
    /// limit.
    NotApplicable,
}

#[derive(Debug, Clone)]
pub struct SurvivorsReport<F: Real> {
    pub rows: Vec<(F, u64)>,
    pub plateau: Plateau,
    pub final_total: u64,
}

/// Track the active count along a schedule and declare a plateau when no
/// merger occurred in the trailing `plateau_window` fraction of the
/// horizon.
pub fn survivors_estimate<F: Real, R: Rng + ?Sized>(
    initial: &SpatialState,
    schedule: &[F],
    plateau_window: F,
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    rng: &mut R,
) -> Result<SurvivorsReport<F>> {
    if schedule.len() < 2 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoalError::arg("schedule must be increasing with >= 2 points"));
    }
    if !(plateau_window > F::zero() && plateau_window < F::one()) {
        return Err(CoalError::arg("plateau window must lie in (0,1)"));
    }
    let lo = schedule[0].max(F::min_positive_value());
    let hi = *schedule.last().unwrap();
    if hi / lo < F::of(100.0) {
        return Err(CoalError::arg("schedule must span at least two decades"));
    }
    let mut totals = TotalsAtTimes::default();
    let (state, stats) = simulate_with(
        initial,
        hi,
        config,
        cache,
        schedule,
        &mut [&mut totals],
        rng,
    )?;
    let transient = matches!(config.graph.kind(), GraphKind::ZdLattice { d } if *d >= 3);
    let plateau = if !transient {
        Plateau::NotApplicable
    } else {
        let cutoff = hi * (F::one() - plateau_window);
        match stats.last_merger_time {
            Some(t) if t > cutoff => Plateau::NotDetected,
            _ => Plateau::Detected(state.total()),
        }
    };
    Ok(SurvivorsReport {
        rows: totals.rows,
        plateau,
        final_total: state.total(),
    })
}

/// Per-stage record of the multi-scale observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats<F: Real> {
    pub stage: u32,
    pub t: F,
    pub radius: F,
    /// Blocks inside `B(o, R_k)` at `t_k`.
    pub inside: u64,
    /// Blocks outside at `t_k`.
    pub outside: u64,
    /// Blocks inside at `t_k` that stayed inside throughout the stage.
    pub stayed_inside: u64,
    /// Blocks inside at `t_k` that exit `B(o, R_{k+1})` before `t_{k+1}`
    /// (filled while running the next stage; zero for the last stage).
    pub exited_next: u64,
}

/// Multi-scale statistics along the long-time schedule.
#[derive(Debug, Clone)]
pub struct MultiScaleStats<F: Real> {
    pub m: u32,
    pub gamma: F,
    /// Initial blocks that exit `B(o, R_1)` before `t_1` (the stage-zero
    /// exit count).
    pub initial_exits: u64,
    pub stages: Vec<StageStats<F>>,
}

const FLAG_LEFT_BALL: u8 = 1;
const FLAG_MARKED: u8 = 2;

/// Run the spatial coalescent from `initial` and record the stage counts
/// of the long-time schedule `t_k = e^{k-K} m^2`,
/// `R_k = γ(m + sqrt(t_k(K+1-k)))`.
pub fn multiscale_observe<F: Real, R: Rng + ?Sized>(
    initial_sites: &[crate::lattice::Site],
    m: u32,
    gamma: F,
    config: &SpatialConfig<F>,
    cache: &RateCache<F>,
    rng: &mut R,
) -> Result<MultiScaleStats<F>> {
    if !matches!(config.boundary, Boundary::None) {
        return Err(CoalError::arg("multi-scale run uses a free boundary"));
    }
    let schedule = make_schedule::<F>(ScheduleKind::LongTime, m, gamma, |_| 0)?;
    let graph = &config.graph;
    let dist = |b: &Block| F::of(graph.dist_origin(b.site) as f64);

    let mut engine = LabeledEngine::new(initial_sites, config, cache, false)?;
    // stage-zero marks: every initial block counts toward Z_0
    for b in engine.blocks.iter_mut() {
        b.flags |= FLAG_MARKED;
    }
    let mut stages: Vec<StageStats<F>> = Vec::with_capacity(schedule.stages.len());
    let mut initial_exits = 0u64;

    for (si, stage) in schedule.stages.iter().enumerate() {
        let radius_now = stage.radius;

        // stage entry: reset the stayed-inside flag; blocks already outside
        // cannot "remain inside throughout"
        for b in engine.blocks.iter_mut().filter(|b| b.alive && !b.frozen) {
            b.flags &= !FLAG_LEFT_BALL;
            if F::of(graph.dist_origin(b.site) as f64) > radius_now {
                b.flags |= FLAG_LEFT_BALL;
            }
        }

        // Blocks marked at the previous stage boundary that cross outside
        // the current radius count once toward the previous stage's exits.
        let mut exits = 0u64;
        let mut hook = |blocks: &mut [Block], ev: &LabeledEvent<F>| {
            if let LabeledEventKind::Move { block, to, .. } = ev.kind {
                let d = F::of(graph.dist_origin(to) as f64);
                let blk = &mut blocks[block as usize];
                if d > radius_now {
                    blk.flags |= FLAG_LEFT_BALL;
                    if blk.flags & FLAG_MARKED != 0 {
                        blk.flags &= !FLAG_MARKED;
                        exits += 1;
                    }
                }
            }
        };
        engine.run_until(stage.time, rng, &mut hook)?;

        if si > 0 {
            stages[si - 1].exited_next = exits;
        } else {
            initial_exits = exits;
        }

        let mut inside = 0u64;
        let mut outside = 0u64;
        let mut stayed = 0u64;
        for b in engine.blocks.iter_mut().filter(|b| b.alive && !b.frozen) {
            let inside_now = dist(b) <= radius_now;
            if inside_now {
                inside += 1;
                if b.flags & FLAG_LEFT_BALL == 0 {
                    stayed += 1;
                }
                b.flags |= FLAG_MARKED;
            } else {
                outside += 1;
                b.flags &= !FLAG_MARKED;
            }
        }
        stages.push(StageStats {
            stage: stage.index,
            t: stage.time,
            radius: radius_now,
            inside,
            outside,
            stayed_inside: stayed,
            exited_next: 0,
        });
    }

    Ok(MultiScaleStats {
        m,
        gamma,
        initial_exits,
        stages,
    })
}

/// Observer asserting the count-conservation law per event (used in tests
/// and available to the harness as a self-check).
#[derive(Debug, Default)]
pub struct ConservationCheck {
    last_total: Option<u64>,
    pub violations: u64,
}

impl<F: Real> SpatialObserver<F> for ConservationCheck {
    fn on_event(&mut self, ev: &super::engine::EventRecord<F>, view: &StateView<'_>) {
        let now = view.total_active + view.total_frozen;
        if let Some(prev) = self.last_total {
            let expect = match ev.kind {
                super::engine::EventKind::Merger { group, .. } => prev - (group - 1),
                super::engine::EventKind::Killed { .. } => prev - 1,
                _ => prev,
            };
            if now != expect {
                self.violations += 1;
            }
        }
        self.last_total = Some(now);
    }
}

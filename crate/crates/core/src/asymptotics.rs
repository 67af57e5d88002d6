//! Deterministic scaling utilities: tower function, iterated logarithms,
//! iterated-map counts, the mean-field density ODE and power-law fitting.

use crate::error::{CoalError, Result};
use crate::real::Real;
use crate::stats;

/// Result of evaluating the tower function, which overflows floating point
/// already at modest heights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tower<F: Real> {
    Value(F),
    /// The requested tower exceeds the floating range; carries the inputs
    /// so schedule code can branch deterministically.
    Overflow { n: u32, x: F },
}

impl<F: Real> Tower<F> {
    pub fn value(self) -> Option<F> {
        match self {
            Tower::Value(v) => Some(v),
            Tower::Overflow { .. } => None,
        }
    }
}

/// `Tow(n, x)`: x exponentiated n times.
pub fn tow<F: Real>(n: u32, x: F) -> Tower<F> {
    let ln_max = F::max_value().ln();
    let mut v = x;
    for _ in 0..n {
        if v > ln_max {
            return Tower::Overflow { n, x };
        }
        v = v.exp();
    }
    Tower::Value(v)
}

/// `log* n`: the least `m >= 1` with `Tow(m, 1) >= n`.
///
/// Computed by iterated logarithms, so it never overflows.
pub fn log_star<F: Real>(n: F) -> Result<u32> {
    if !(n >= F::one()) {
        return Err(CoalError::arg(format!("log* needs n >= 1, got {n}")));
    }
    let mut v = n;
    let mut m = 0u32;
    while v > F::one() {
        v = v.ln();
        m += 1;
    }
    Ok(m.max(1))
}

/// Number of iterations of `f` needed to drive `n` down to `<= 1`.
///
/// `f` must be a contraction toward `[0, 1]` on the visited range; if the
/// value has not reached 1 within `cap` iterations the map is reported as
/// divergent (this also catches maps like `sqrt` that approach 1 from above
/// without ever crossing it).
pub fn f_star<F: Real>(f: impl Fn(F) -> F, n: F, cap: u32) -> Result<u32> {
    let mut v = n;
    let mut expanded = false;
    for m in 0..cap {
        if v <= F::one() {
            return Ok(m.max(1));
        }
        let next = f(v);
        if !next.is_finite() {
            return Err(CoalError::Divergence(format!(
                "iterate became non-finite after {m} steps"
            )));
        }
        if next >= v {
            expanded = true;
        }
        v = next;
    }
    Err(CoalError::Divergence(format!(
        "value {v} still above 1 after {cap} iterations{}",
        if expanded { " (non-contracting map observed)" } else { "" }
    )))
}

/// Default iteration cap for [`f_star`].
pub const F_STAR_CAP: u32 = 1_000_000;

/// Exact solution `ρ(t) = 2/(t + 2/ρ0)` of `dρ/dt = -ρ²/2`.
pub fn ode_density<F: Real>(t: F, rho0: F) -> F {
    debug_assert!(rho0 > F::zero() && t >= F::zero());
    F::of(2.0) / (t + F::of(2.0) / rho0)
}

/// Least-squares power-law fit `y ≈ c x^e` on log-log axes.
///
/// Returns `(exponent, prefactor, r_squared)`.
pub fn fit_power_law<F: Real>(points: &[(F, F)]) -> Result<(F, F, F)> {
    if points.len() < 3 {
        return Err(CoalError::arg("power-law fit needs >= 3 points"));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(x, y) in points {
        if !(x > F::zero() && y > F::zero()) {
            return Err(CoalError::arg("power-law fit needs positive coordinates"));
        }
        xs.push(x.as_f64().ln());
        ys.push(y.as_f64().ln());
    }
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max - min < std::f64::consts::LN_10 {
        return Err(CoalError::arg("x values must span at least one decade"));
    }
    let (intercept, slope, r2) = stats::linear_fit(&xs, &ys);
    Ok((F::of(slope), F::of(intercept.exp()), F::of(r2)))
}

/// Which multi-stage schedule to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Doubling-log cascade: stage `k` observes time `Tow(m-k, V_m^2)^{-3}`
    /// at radius `k`.
    Induction,
    /// Long-horizon stages `t_k = e^{k-K} m^2` with radii
    /// `R_k = γ(m + sqrt(t_k (K+1-k)))`, `K = floor(log log m)`.
    LongTime,
}

/// One observation stage: look at radius `radius` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage<F: Real> {
    pub index: u32,
    pub time: F,
    pub radius: F,
}

/// A full observation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSpec<F: Real> {
    pub kind: ScheduleKind,
    pub m: u32,
    pub gamma: F,
    pub stages: Vec<Stage<F>>,
}

/// Build a schedule. `ball_volume` supplies `V_r` for the induction times.
pub fn make_schedule<F: Real>(
    kind: ScheduleKind,
    m: u32,
    gamma: F,
    ball_volume: impl Fn(u32) -> u64,
) -> Result<ScheduleSpec<F>> {
    if m < 2 {
        return Err(CoalError::arg("schedule needs m >= 2"));
    }
    let stages = match kind {
        ScheduleKind::LongTime => {
            let k_count = (f64::from(m)).ln().ln().floor();
            if !(k_count >= 1.0) {
                return Err(CoalError::arg(format!(
                    "long-time schedule needs floor(log log m) >= 1; m={m} is too small"
                )));
            }
            let k_count = k_count as u32;
            let m2 = F::of(f64::from(m) * f64::from(m));
            (1..=k_count)
                .map(|k| {
                    let time = F::of((f64::from(k) - f64::from(k_count)).exp()) * m2;
                    let spread = time * F::of(f64::from(k_count + 1 - k));
                    let radius = gamma * (F::of(f64::from(m)) + spread.sqrt());
                    Stage {
                        index: k,
                        time,
                        radius,
                    }
                })
                .collect()
        }
        ScheduleKind::Induction => {
            let vm = ball_volume(m);
            let vm2 = F::of((vm as f64) * (vm as f64));
            (0..=m)
                .map(|k| {
                    let time = match tow(m - k, vm2) {
                        // times below the floating range are effectively-zero
                        // stages; desk-scale counts never resolve them
                        Tower::Overflow { .. } => F::zero(),
                        Tower::Value(v) => {
                            let t = v.powi(-3);
                            if t < F::of(1e-300) {
                                F::zero()
                            } else {
                                t
                            }
                        }
                    };
                    Stage {
                        index: k,
                        time,
                        radius: F::of(f64::from(k)),
                    }
                })
                .collect::<Vec<_>>()
        }
    };
    // positive stage times must strictly increase
    let mut prev = F::zero();
    for s in stages.iter().filter(|s| s.time > F::zero()) {
        if s.time <= prev && prev > F::zero() {
            return Err(CoalError::arg("schedule times must be strictly increasing"));
        }
        prev = s.time;
    }
    Ok(ScheduleSpec {
        kind,
        m,
        gamma,
        stages,
    })
}

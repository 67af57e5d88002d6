//! The driving measure Λ and everything derived from it.
//!
//! A finite measure Λ on `[0,1]` with `Λ({1}) = 0` induces the merger rate
//!
//! ```text
//! λ_{b,k} = Λ({0})·1{k=2} + ∫ x^{k-2} (1-x)^{b-k} g(x) dx
//! ```
//!
//! for any k-tuple out of b co-located blocks. This module computes those
//! rates, the total event rate `λ_b = Σ_k C(b,k) λ_{b,k}`, and draws exact
//! samples of the merger size `K` with `P(K=k) ∝ C(b,k) λ_{b,k}`.
//!
//! Total rates are filled by the consistency recursion
//! `λ_{b+1} = λ_b + b·λ_{b+1,2}`, which follows from
//! `λ_{b,k} = λ_{b+1,k} + λ_{b+1,k+1}` and costs O(1) per count, so caches
//! up to b ~ 10^6 are cheap even for Beta measures.

use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::quad::{adaptive_gl, tanh_sinh_unit};
use crate::real::{ln_beta, Real};
use crate::stats;

/// Density part of the measure on `(0, 1)`.
#[derive(Clone)]
pub enum Density<F: Real> {
    /// Piecewise-linear table on a strictly increasing grid in `(0, 1)`.
    Tabulated { xs: Vec<F>, gs: Vec<F> },
    /// Closure receiving `(x, 1-x)`, both computed without cancellation.
    Callable(Arc<dyn Fn(F, F) -> F + Send + Sync>),
}

impl<F: Real> fmt::Debug for Density<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Tabulated { xs, .. } => write!(f, "Tabulated({} points)", xs.len()),
            Density::Callable(_) => write!(f, "Callable"),
        }
    }
}

/// Shape of the driving measure.
#[derive(Clone, Debug)]
pub enum MeasureKind<F: Real> {
    /// Pure atom at zero: the Kingman mechanism.
    KingmanAtom,
    /// Beta(2-α, α) density, α in (0,2). α = 1 is Bolthausen–Sznitman,
    /// α in (1,2) comes down from infinity.
    Beta { alpha: F },
    /// Uniform density on [0,1] (Bolthausen–Sznitman).
    UniformBS,
    /// Arbitrary nonnegative density.
    GeneralDensity { density: Density<F> },
}

/// A finite driving measure Λ with `Λ({1}) = 0`.
///
/// Immutable after construction; the internal total-rate cache is
/// mutex-guarded so concurrent readers observe consistent values.
#[derive(Debug)]
pub struct LambdaMeasure<F: Real> {
    kind: MeasureKind<F>,
    atom0_mass: F,
    continuous_mass: F,
    total_mass: F,
    /// λ_b for b = 0..len, filled by the consistency recursion.
    totals: Mutex<Vec<F>>,
}

impl<F: Real> Clone for LambdaMeasure<F> {
    fn clone(&self) -> Self {
        LambdaMeasure {
            kind: self.kind.clone(),
            atom0_mass: self.atom0_mass,
            continuous_mass: self.continuous_mass,
            total_mass: self.total_mass,
            totals: Mutex::new(self.totals.lock().unwrap().clone()),
        }
    }
}

impl<F: Real> fmt::Display for LambdaMeasure<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MeasureKind::KingmanAtom => write!(f, "kingman(mass={})", self.atom0_mass),
            MeasureKind::Beta { alpha } => write!(f, "beta(alpha={alpha})"),
            MeasureKind::UniformBS => write!(f, "uniform"),
            MeasureKind::GeneralDensity { .. } => write!(f, "density"),
        }?;
        if !self.atom0_mass.is_zero() && !matches!(self.kind, MeasureKind::KingmanAtom) {
            write!(f, "+atom0({})", self.atom0_mass)?;
        }
        Ok(())
    }
}

impl<F: Real> LambdaMeasure<F> {
    /// Kingman mechanism: unit pair-merger rate scaled by `mass`.
    pub fn kingman(mass: F) -> Result<Self> {
        if !(mass > F::zero()) {
            return Err(CoalError::arg("kingman mass must be positive"));
        }
        Ok(Self::assemble(MeasureKind::KingmanAtom, mass, F::zero()))
    }

    /// Beta(2-α, α) mechanism with unit total mass.
    pub fn beta(alpha: F) -> Result<Self> {
        if !(alpha > F::zero() && alpha < F::of(2.0)) {
            return Err(CoalError::arg(format!(
                "beta alpha must lie in (0,2), got {alpha}"
            )));
        }
        Ok(Self::assemble(
            MeasureKind::Beta { alpha },
            F::zero(),
            F::one(),
        ))
    }

    /// Uniform measure on [0,1] (Bolthausen–Sznitman).
    pub fn uniform_bs() -> Self {
        Self::assemble(MeasureKind::UniformBS, F::zero(), F::one())
    }

    /// Density given by a two-column table on a strictly increasing grid in
    /// the open interval `(0, 1)`. Linear interpolation between grid points,
    /// zero outside the grid, so `Λ({1}) = 0` holds by construction.
    pub fn from_density_table(xs: Vec<F>, gs: Vec<F>, atom0_mass: F) -> Result<Self> {
        if xs.len() != gs.len() || xs.len() < 2 {
            return Err(CoalError::arg("density table needs >= 2 matching rows"));
        }
        if atom0_mass < F::zero() {
            return Err(CoalError::arg("atom mass must be nonnegative"));
        }
        if !(xs[0] > F::zero() && *xs.last().unwrap() < F::one()) {
            return Err(CoalError::arg("density grid must lie strictly inside (0,1)"));
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CoalError::arg("density grid must be strictly increasing"));
            }
        }
        if gs.iter().any(|g| !(*g >= F::zero()) || !g.is_finite()) {
            return Err(CoalError::arg("density values must be finite and nonnegative"));
        }
        // exact integral of the piecewise-linear interpolant
        let mut mass = F::zero();
        for i in 0..xs.len() - 1 {
            mass += (gs[i] + gs[i + 1]) * (xs[i + 1] - xs[i]) * F::of(0.5);
        }
        Ok(Self::assemble(
            MeasureKind::GeneralDensity {
                density: Density::Tabulated { xs, gs },
            },
            atom0_mass,
            mass,
        ))
    }

    /// Density given by a closure over `(x, 1-x)`; mass from quadrature.
    pub fn from_density_fn(
        g: Arc<dyn Fn(F, F) -> F + Send + Sync>,
        atom0_mass: F,
    ) -> Result<Self> {
        if atom0_mass < F::zero() {
            return Err(CoalError::arg("atom mass must be nonnegative"));
        }
        let (mass, _) = tanh_sinh_unit(|x, omx| g(x, omx), F::quad_tol(), 12)?;
        Ok(Self::assemble(
            MeasureKind::GeneralDensity {
                density: Density::Callable(g),
            },
            atom0_mass,
            mass,
        ))
    }

    /// Add an extra atom at zero (a Kingman component) to this measure.
    pub fn with_kingman_atom(mut self, mass: F) -> Result<Self> {
        if !(mass >= F::zero()) {
            return Err(CoalError::arg("atom mass must be nonnegative"));
        }
        self.atom0_mass += mass;
        self.total_mass = self.atom0_mass + self.continuous_mass;
        self.totals = Mutex::new(vec![F::zero(), F::zero()]);
        Ok(self)
    }

    fn assemble(kind: MeasureKind<F>, atom0_mass: F, continuous_mass: F) -> Self {
        LambdaMeasure {
            kind,
            atom0_mass,
            continuous_mass,
            total_mass: atom0_mass + continuous_mass,
            totals: Mutex::new(vec![F::zero(), F::zero()]),
        }
    }

    pub fn atom0_mass(&self) -> F {
        self.atom0_mass
    }

    pub fn total_mass(&self) -> F {
        self.total_mass
    }

    pub fn kind(&self) -> &MeasureKind<F> {
        &self.kind
    }

    /// Whether the mean-field coalescent comes down from infinity.
    /// `None` when not determined by the measure's shape alone.
    pub fn comes_down(&self) -> Option<bool> {
        match &self.kind {
            MeasureKind::KingmanAtom => Some(true),
            MeasureKind::Beta { alpha } => Some(*alpha > F::one()),
            MeasureKind::UniformBS => Some(false),
            MeasureKind::GeneralDensity { .. } => {
                if self.atom0_mass > F::zero() {
                    Some(true)
                } else {
                    None
                }
            }
        }
    }

    /// Bolthausen–Sznitman special case.
    pub fn is_bolthausen_sznitman(&self) -> bool {
        match &self.kind {
            MeasureKind::UniformBS => true,
            MeasureKind::Beta { alpha } => *alpha == F::one(),
            _ => false,
        }
    }

    pub fn is_kingman(&self) -> bool {
        matches!(self.kind, MeasureKind::KingmanAtom)
    }

    /// Continuous part of λ_{b,k} (no atom contribution).
    fn continuous_merger_rate(&self, b: u64, k: u64) -> Result<F> {
        let two = F::of(2.0);
        match &self.kind {
            MeasureKind::KingmanAtom => Ok(F::zero()),
            MeasureKind::Beta { alpha } => {
                let kf = F::of(k as f64);
                let bf = F::of(b as f64);
                let ln = ln_beta(kf - *alpha, bf - kf + *alpha) - ln_beta(two - *alpha, *alpha);
                Ok(ln.exp())
            }
            MeasureKind::UniformBS => {
                let kf = F::of(k as f64);
                let bf = F::of(b as f64);
                Ok(ln_beta(kf - F::one(), bf - kf + F::one()).exp())
            }
            MeasureKind::GeneralDensity { density } => {
                let ke = F::of((k - 2) as f64);
                let be = F::of((b - k) as f64);
                integrate_density(density, move |x: F, omx: F| x.powf(ke) * omx.powf(be))
            }
        }
    }

    /// The merger rate λ_{b,k} for 2 <= k <= b.
    pub fn merger_rate(&self, b: u64, k: u64) -> Result<F> {
        if k < 2 || k > b {
            return Err(CoalError::arg(format!(
                "merger rate needs 2 <= k <= b, got b={b}, k={k}"
            )));
        }
        let atom = if k == 2 { self.atom0_mass } else { F::zero() };
        Ok(atom + self.continuous_merger_rate(b, k)?)
    }

    /// λ_{b,2} including the atom; the recursion increment.
    fn pair_rate(&self, b: u64) -> Result<F> {
        Ok(self.atom0_mass + self.continuous_merger_rate(b, 2)?)
    }

    /// Total event rate λ_b = Σ_{k=2}^b C(b,k) λ_{b,k}.
    ///
    /// Cached; filled by the consistency recursion `λ_{b+1} = λ_b + b λ_{b+1,2}`.
    pub fn total_event_rate(&self, b: u64) -> Result<F> {
        if b < 2 {
            return Err(CoalError::arg(format!("total event rate needs b >= 2, got {b}")));
        }
        let mut totals = self.totals.lock().unwrap();
        self.fill_totals(&mut totals, b as usize)?;
        Ok(totals[b as usize])
    }

    fn fill_totals(&self, totals: &mut Vec<F>, b: usize) -> Result<()> {
        if totals.len() <= 2 {
            totals.resize(2, F::zero());
            totals.push(self.pair_rate(2)?);
        }
        while totals.len() <= b {
            let next = totals.len() as u64; // next >= 3
            let prev = totals[totals.len() - 1];
            let inc = F::of((next - 1) as f64) * self.pair_rate(next)?;
            totals.push(prev + inc);
        }
        Ok(())
    }

    /// Pre-fill the total-rate cache up to `b_max` and return a snapshot
    /// that can be shared across replicas without locking.
    pub fn rate_cache(&self, b_max: u64) -> Result<RateCache<F>> {
        let mut totals = self.totals.lock().unwrap();
        self.fill_totals(&mut totals, b_max as usize)?;
        Ok(RateCache {
            totals: totals.clone(),
            measure: self.clone(),
        })
    }

    /// Ratio P(K=k+1)/P(K=k) of the continuous-part merger-size law.
    fn size_ratio(&self, b: u64, k: u64, lam_k: F) -> Result<(F, F)> {
        // returns (ratio, λ^c_{b,k+1})
        let bf = F::of(b as f64);
        let kf = F::of(k as f64);
        let binom = (bf - kf) / (kf + F::one());
        match &self.kind {
            MeasureKind::KingmanAtom => Ok((F::zero(), F::zero())),
            MeasureKind::Beta { alpha } => {
                let r = (kf - *alpha) / (bf - kf - F::one() + *alpha);
                Ok((binom * r, lam_k * r))
            }
            MeasureKind::UniformBS => {
                let r = (kf - F::one()) / (bf - kf);
                Ok((binom * r, lam_k * r))
            }
            MeasureKind::GeneralDensity { .. } => {
                let lam_next = self.continuous_merger_rate(b, k + 1)?;
                if lam_k.is_zero() {
                    return Ok((F::zero(), lam_next));
                }
                Ok((binom * lam_next / lam_k, lam_next))
            }
        }
    }

    /// Exact sample of the merger size `K` with `P(K=k) ∝ C(b,k) λ_{b,k}`.
    ///
    /// Sequential inversion from k = 2 using closed-form probability ratios;
    /// the atom and continuous parts are mixed by their rate shares. The
    /// cumulative comparison is strict, so the draw is a deterministic
    /// function of the RNG stream.
    pub fn sample_merger_size<R: Rng + ?Sized>(&self, b: u64, rng: &mut R) -> Result<u64> {
        let total = if b >= 2 { self.total_event_rate(b)? } else { F::zero() };
        sample_size_with_total(self, b, total, rng)
    }

    /// Least-squares fit of `log λ_b` against `log b`.
    ///
    /// Returns `(prefactor, exponent)` of the power law `λ_b ≈ c b^e`.
    pub fn fit_rate_exponent(&self, bs: &[u64]) -> Result<(F, F)> {
        if bs.len() < 3 {
            return Err(CoalError::arg("rate-exponent fit needs >= 3 counts"));
        }
        let lo = *bs.iter().min().unwrap();
        let hi = *bs.iter().max().unwrap();
        if lo < 2 {
            return Err(CoalError::arg("counts must be >= 2"));
        }
        if (hi as f64) < 10.0 * lo as f64 {
            return Err(CoalError::arg("counts must span at least one decade"));
        }
        let mut xs = Vec::with_capacity(bs.len());
        let mut ys = Vec::with_capacity(bs.len());
        for &b in bs {
            xs.push((b as f64).ln());
            ys.push(self.total_event_rate(b)?.as_f64().ln());
        }
        let (intercept, slope, _r2) = stats::linear_fit(&xs, &ys);
        Ok((F::of(intercept.exp()), F::of(slope)))
    }
}

fn choose2<F: Real>(b: u64) -> F {
    F::of(b as f64) * F::of((b - 1) as f64) * F::of(0.5)
}

fn sample_size_with_total<F: Real, R: Rng + ?Sized>(
    measure: &LambdaMeasure<F>,
    b: u64,
    total: F,
    rng: &mut R,
) -> Result<u64> {
    if b < 2 {
        return Err(CoalError::arg(format!("merger size needs b >= 2, got {b}")));
    }
    if b == 2 || measure.is_kingman() {
        return Ok(2);
    }
    let u = F::sample_unit(rng);
    let atom_part = measure.atom0_mass * choose2::<F>(b);
    let w_atom = atom_part / total;
    if u < w_atom {
        return Ok(2);
    }
    // renormalised uniform for the continuous component
    let u = (u - w_atom) / (F::one() - w_atom);
    let cont_total = total - atom_part;
    let mut lam_k = measure.continuous_merger_rate(b, 2)?;
    let mut p = choose2::<F>(b) * lam_k / cont_total;
    let mut cum = p;
    let mut k = 2u64;
    while u >= cum && k < b {
        let (ratio, lam_next) = measure.size_ratio(b, k, lam_k)?;
        lam_k = lam_next;
        p = p * ratio;
        k += 1;
        cum += p;
        if p.is_zero() {
            break;
        }
    }
    Ok(k.min(b))
}

fn integrate_density<F: Real>(
    density: &Density<F>,
    weight: impl Fn(F, F) -> F + Copy,
) -> Result<F> {
    match density {
        Density::Callable(g) => {
            let (v, _) = tanh_sinh_unit(|x, omx| weight(x, omx) * g(x, omx), F::quad_tol(), 12)?;
            Ok(v)
        }
        Density::Tabulated { xs, gs } => {
            // Per-segment adaptive panels; the interpolant has kinks at the
            // grid points so segments are integrated independently.
            let mut coarse = F::zero();
            for i in 0..xs.len() - 1 {
                let (a, b) = (xs[i], xs[i + 1]);
                let (ga, gb) = (gs[i], gs[i + 1]);
                let f = move |x: F| {
                    let t = (x - a) / (b - a);
                    let g = ga + (gb - ga) * t;
                    weight(x, F::one() - x) * g
                };
                coarse += adaptive_gl(&f, a, b, F::quad_tol())?;
            }
            let budget = (coarse.abs() + F::min_positive_value()) * F::quad_tol()
                / F::of_usize(xs.len());
            let mut acc = F::zero();
            for i in 0..xs.len() - 1 {
                let (a, b) = (xs[i], xs[i + 1]);
                let (ga, gb) = (gs[i], gs[i + 1]);
                let f = move |x: F| {
                    let t = (x - a) / (b - a);
                    let g = ga + (gb - ga) * t;
                    weight(x, F::one() - x) * g
                };
                acc += adaptive_gl(&f, a, b, budget)?;
            }
            Ok(acc)
        }
    }
}

/// Immutable snapshot of total rates up to a fixed count, safe to share
/// across concurrently running replicas.
#[derive(Clone, Debug)]
pub struct RateCache<F: Real> {
    totals: Vec<F>,
    measure: LambdaMeasure<F>,
}

impl<F: Real> RateCache<F> {
    /// Total event rate for `b` blocks; zero below two blocks.
    #[inline]
    pub fn total(&self, b: u64) -> F {
        debug_assert!(
            (b as usize) < self.totals.len(),
            "rate cache built too small: b={b}, len={}",
            self.totals.len()
        );
        self.totals[b as usize]
    }

    pub fn b_max(&self) -> u64 {
        (self.totals.len() - 1) as u64
    }

    pub fn measure(&self) -> &LambdaMeasure<F> {
        &self.measure
    }

    /// Merger-size draw using the cached total for `b`.
    pub fn sample_merger_size<R: Rng + ?Sized>(&self, b: u64, rng: &mut R) -> Result<u64> {
        sample_size_with_total(&self.measure, b, self.total(b), rng)
    }
}

/// Dense triangular table of `ln λ_{b,k}` for 2 <= k <= b <= b_max.
///
/// Small-b working set for consistency checks and enumeration tests; the
/// quadratic storage caps `b_max` at a few thousand.
#[derive(Debug, Clone)]
pub struct RateTable<F: Real> {
    pub b_max: u64,
    ln_rates: Vec<F>,
    /// Lower-linearity constant λ_2 / 2 used by the `λ_b >= a0·b` check.
    pub a0: F,
}

impl<F: Real> RateTable<F> {
    pub fn build(measure: &LambdaMeasure<F>, b_max: u64) -> Result<Self> {
        if b_max < 2 {
            return Err(CoalError::arg("rate table needs b_max >= 2"));
        }
        let entries = ((b_max - 1) * b_max / 2) as usize;
        let mut ln_rates = Vec::with_capacity(entries);
        for b in 2..=b_max {
            for k in 2..=b {
                let r = measure.merger_rate(b, k)?;
                if !(r >= F::zero()) || !r.is_finite() {
                    return Err(CoalError::Numeric {
                        what: format!("rate table entry b={b}, k={k}"),
                        achieved: r.as_f64(),
                        requested: 0.0,
                    });
                }
                ln_rates.push(r.ln());
            }
        }
        let a0 = measure.total_event_rate(2)? * F::of(0.5);
        Ok(RateTable {
            b_max,
            ln_rates,
            a0,
        })
    }

    #[inline]
    fn idx(&self, b: u64, k: u64) -> usize {
        debug_assert!(2 <= k && k <= b && b <= self.b_max);
        (((b - 1) * (b - 2)) / 2 + (k - 2)) as usize
    }

    pub fn ln_rate(&self, b: u64, k: u64) -> F {
        self.ln_rates[self.idx(b, k)]
    }

    pub fn rate(&self, b: u64, k: u64) -> F {
        self.ln_rate(b, k).exp()
    }

    /// Largest relative violation of `λ_{b,k} = λ_{b+1,k} + λ_{b+1,k+1}`
    /// over the tabulated range.
    pub fn max_consistency_error(&self) -> F {
        let mut worst = F::zero();
        for b in 2..self.b_max {
            for k in 2..=b {
                let lhs = self.rate(b, k);
                let rhs = self.rate(b + 1, k) + self.rate(b + 1, k + 1);
                let err = (lhs - rhs).abs() / lhs.abs().max(F::min_positive_value());
                if err > worst {
                    worst = err;
                }
            }
        }
        worst
    }

    /// Verify `λ_b >= a0·b` for all tabulated counts.
    pub fn lower_linearity_holds(&self, measure: &LambdaMeasure<F>) -> Result<bool> {
        for b in 2..=self.b_max {
            if measure.total_event_rate(b)? < self.a0 * F::of(b as f64) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

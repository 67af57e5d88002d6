//! Graph substrates and Monte Carlo random-walk oracles.
//!
//! Supported graphs: the infinite lattices `Z^d` (d <= 4, implicit
//! coordinate arithmetic, no global storage), tori, paths and custom
//! bounded-degree adjacency tables. Balls use graph distance, which on
//! `Z^d` is the l1 norm; Euclidean norms appear only inside the
//! random-walk oracles.

use std::collections::{HashSet, VecDeque};

use rand::Rng;

use crate::error::{CoalError, Result};
use crate::real::{exp_time, Real};
use crate::rng::replicate;

/// A vertex. Lattice kinds use up to four coordinates; path and custom
/// graphs store the vertex id in the first slot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct Site(pub [i32; 4]);

impl Site {
    pub const ORIGIN: Site = Site([0; 4]);

    pub fn id(v: i32) -> Site {
        Site([v, 0, 0, 0])
    }

    /// Colon-joined coordinate key for tabular output.
    pub fn key(&self, dims: usize) -> String {
        self.0[..dims.max(1)]
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(":")
    }

    /// Squared Euclidean norm of the coordinates.
    pub fn norm2_sq(&self) -> f64 {
        self.0.iter().map(|&c| (c as f64) * (c as f64)).sum()
    }
}

#[derive(Debug, Clone)]
pub enum GraphKind {
    ZdLattice { d: usize },
    Torus { d: usize, side: i32 },
    Path { len: usize },
    Custom { adj: Vec<Vec<u32>> },
}

/// Graph substrate: kind, origin and verified degree bound.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    kind: GraphKind,
    origin: Site,
    max_degree: u32,
    /// BFS distances from the origin, for kinds without coordinate formulas.
    custom_dist: Option<Vec<u32>>,
}

impl GraphSpec {
    /// The infinite lattice `Z^d`, 1 <= d <= 4.
    pub fn zd(d: usize) -> Result<GraphSpec> {
        if !(1..=4).contains(&d) {
            return Err(CoalError::arg("lattice dimension must be in 1..=4"));
        }
        Ok(GraphSpec {
            kind: GraphKind::ZdLattice { d },
            origin: Site::ORIGIN,
            max_degree: (2 * d) as u32,
            custom_dist: None,
        })
    }

    /// The d-dimensional torus with the given side, side >= 3.
    pub fn torus(d: usize, side: i32) -> Result<GraphSpec> {
        if !(1..=4).contains(&d) {
            return Err(CoalError::arg("torus dimension must be in 1..=4"));
        }
        if side < 3 {
            return Err(CoalError::arg("torus side must be >= 3"));
        }
        Ok(GraphSpec {
            kind: GraphKind::Torus { d, side },
            origin: Site::ORIGIN,
            max_degree: (2 * d) as u32,
            custom_dist: None,
        })
    }

    /// Path on `len` vertices `0..len`, origin at vertex 0.
    pub fn path(len: usize) -> Result<GraphSpec> {
        if len < 2 {
            return Err(CoalError::arg("path needs >= 2 vertices"));
        }
        Ok(GraphSpec {
            kind: GraphKind::Path { len },
            origin: Site::ORIGIN,
            max_degree: 2,
            custom_dist: None,
        })
    }

    /// Custom graph from an undirected edge list over `0..n_vertices`.
    pub fn custom(n_vertices: usize, edges: &[(u32, u32)]) -> Result<GraphSpec> {
        if n_vertices == 0 {
            return Err(CoalError::arg("custom graph needs >= 1 vertex"));
        }
        let mut adj = vec![Vec::new(); n_vertices];
        for &(u, v) in edges {
            if u as usize >= n_vertices || v as usize >= n_vertices {
                return Err(CoalError::arg(format!("edge ({u},{v}) out of range")));
            }
            if u == v {
                return Err(CoalError::arg("self-loops are not allowed"));
            }
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
            if list.is_empty() {
                return Err(CoalError::arg("custom graph has an isolated vertex"));
            }
        }
        let max_degree = adj.iter().map(|l| l.len() as u32).max().unwrap();
        let mut g = GraphSpec {
            kind: GraphKind::Custom { adj },
            origin: Site::ORIGIN,
            max_degree,
            custom_dist: None,
        };
        g.custom_dist = Some(g.bfs_distances());
        Ok(g)
    }

    /// Parse a "u v" edge-list text, 0-indexed, one edge per line.
    pub fn custom_from_edge_list(text: &str) -> Result<GraphSpec> {
        let mut edges = Vec::new();
        let mut max_id = 0u32;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<u32> {
                tok.ok_or_else(|| CoalError::arg(format!("edge list line {}: expected 'u v'", lineno + 1)))?
                    .parse::<u32>()
                    .map_err(|_| CoalError::arg(format!("edge list line {}: bad vertex id", lineno + 1)))
            };
            let u = parse(parts.next())?;
            let v = parse(parts.next())?;
            max_id = max_id.max(u).max(v);
            edges.push((u, v));
        }
        if edges.is_empty() {
            return Err(CoalError::arg("edge list is empty"));
        }
        GraphSpec::custom(max_id as usize + 1, &edges)
    }

    fn bfs_distances(&self) -> Vec<u32> {
        let n = match &self.kind {
            GraphKind::Custom { adj } => adj.len(),
            _ => unreachable!(),
        };
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        dist[self.origin.0[0] as usize] = 0;
        queue.push_back(self.origin.0[0] as u32);
        while let Some(u) = queue.pop_front() {
            let du = dist[u as usize];
            if let GraphKind::Custom { adj } = &self.kind {
                for &v in &adj[u as usize] {
                    if dist[v as usize] == u32::MAX {
                        dist[v as usize] = du + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    pub fn origin(&self) -> Site {
        self.origin
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    /// Number of coordinates that carry information.
    pub fn dims(&self) -> usize {
        match &self.kind {
            GraphKind::ZdLattice { d } | GraphKind::Torus { d, .. } => *d,
            GraphKind::Path { .. } | GraphKind::Custom { .. } => 1,
        }
    }

    pub fn contains(&self, v: Site) -> bool {
        match &self.kind {
            GraphKind::ZdLattice { d } => v.0[*d..].iter().all(|&c| c == 0),
            GraphKind::Torus { d, side } => {
                v.0[..*d].iter().all(|&c| (0..*side).contains(&c))
                    && v.0[*d..].iter().all(|&c| c == 0)
            }
            GraphKind::Path { len } => {
                (0..*len as i32).contains(&v.0[0]) && v.0[1..].iter().all(|&c| c == 0)
            }
            GraphKind::Custom { adj } => {
                (0..adj.len() as i32).contains(&v.0[0]) && v.0[1..].iter().all(|&c| c == 0)
            }
        }
    }

    pub fn degree(&self, v: Site) -> u32 {
        match &self.kind {
            GraphKind::ZdLattice { d } => (2 * d) as u32,
            GraphKind::Torus { d, .. } => (2 * d) as u32,
            GraphKind::Path { len } => {
                if v.0[0] == 0 || v.0[0] == *len as i32 - 1 {
                    1
                } else {
                    2
                }
            }
            GraphKind::Custom { adj } => adj[v.0[0] as usize].len() as u32,
        }
    }

    /// The `j`-th neighbor of `v`, `j < degree(v)`.
    pub fn neighbor(&self, v: Site, j: u32) -> Site {
        match &self.kind {
            GraphKind::ZdLattice { .. } => {
                let axis = (j / 2) as usize;
                let step = if j % 2 == 0 { 1 } else { -1 };
                let mut w = v;
                w.0[axis] += step;
                w
            }
            GraphKind::Torus { side, .. } => {
                let axis = (j / 2) as usize;
                let step = if j % 2 == 0 { 1 } else { -1 };
                let mut w = v;
                w.0[axis] = (w.0[axis] + step).rem_euclid(*side);
                w
            }
            GraphKind::Path { len } => {
                let id = v.0[0];
                let nb = if id == 0 {
                    1
                } else if id == *len as i32 - 1 {
                    id - 1
                } else if j == 0 {
                    id - 1
                } else {
                    id + 1
                };
                Site::id(nb)
            }
            GraphKind::Custom { adj } => Site::id(adj[v.0[0] as usize][j as usize] as i32),
        }
    }

    /// Adjacency list of `v`.
    pub fn neighbors(&self, v: Site) -> Result<Vec<Site>> {
        if !self.contains(v) {
            return Err(CoalError::arg(format!("site {v:?} not in graph")));
        }
        Ok((0..self.degree(v)).map(|j| self.neighbor(v, j)).collect())
    }

    /// Uniform neighbor draw.
    #[inline]
    pub fn random_neighbor<R: Rng + ?Sized>(&self, v: Site, rng: &mut R) -> Site {
        let deg = self.degree(v);
        let j = rng.random_range(0..deg);
        self.neighbor(v, j)
    }

    /// Graph distance from the origin.
    pub fn dist_origin(&self, v: Site) -> u32 {
        match &self.kind {
            GraphKind::ZdLattice { d } => v.0[..*d].iter().map(|c| c.unsigned_abs()).sum(),
            GraphKind::Torus { d, side } => v.0[..*d]
                .iter()
                .map(|&c| {
                    let a = c.rem_euclid(*side).unsigned_abs();
                    a.min(*side as u32 - a)
                })
                .sum(),
            GraphKind::Path { .. } => v.0[0].unsigned_abs(),
            GraphKind::Custom { .. } => self.custom_dist.as_ref().expect("custom distances")
                [v.0[0] as usize],
        }
    }

    /// Sites within graph distance `r` of the origin, sorted.
    pub fn ball_sites(&self, r: u32) -> Vec<Site> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::new();
        seen.insert(self.origin);
        queue.push_back((self.origin, 0u32));
        let mut out = vec![self.origin];
        while let Some((v, d)) = queue.pop_front() {
            if d == r {
                continue;
            }
            for j in 0..self.degree(v) {
                let w = self.neighbor(v, j);
                if seen.insert(w) {
                    out.push(w);
                    queue.push_back((w, d + 1));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Volume of the graph-distance ball `B(o, r)`.
    pub fn ball_volume(&self, r: u32) -> u64 {
        self.ball_sites(r).len() as u64
    }
}

/// Continuous-time simple random walk step loop: runs until the horizon,
/// calling `visit` after every jump; `visit` may stop the walk early.
fn run_walk<F: Real, R: Rng + ?Sized>(
    g: &GraphSpec,
    start: Site,
    rate: F,
    horizon: F,
    rng: &mut R,
    mut visit: impl FnMut(F, Site) -> bool,
) {
    let mut site = start;
    let mut t = F::zero();
    loop {
        t += exp_time(rate, rng);
        if t > horizon {
            return;
        }
        site = g.random_neighbor(site, rng);
        if visit(t, site) {
            return;
        }
    }
}

/// Monte Carlo estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
    /// Horizon actually used, reported because finite horizons proxy for
    /// infinite ones in the transient regime.
    pub horizon: f64,
}

fn binomial_estimate(hits: usize, replicas: usize, horizon: f64) -> McEstimate {
    let p = hits as f64 / replicas as f64;
    McEstimate {
        estimate: p,
        stderr: (p * (1.0 - p) / replicas as f64).sqrt(),
        replicas,
        horizon,
    }
}

/// Probability that two independent rate-1 walks started uniform in
/// `B(o, m)` occupy the same site at the same time before the horizon.
///
/// Implemented through the difference walk: on a translation-invariant
/// graph the difference of two independent rate-1 walks is a rate-2 walk,
/// and meeting is the difference hitting the origin. Requires a lattice or
/// torus.
pub fn rw_meeting_prob<F: Real>(
    g: &GraphSpec,
    m: u32,
    horizon: F,
    replicas: usize,
    root_seed: u64,
) -> Result<McEstimate> {
    match g.kind() {
        GraphKind::ZdLattice { .. } | GraphKind::Torus { .. } => {}
        _ => {
            return Err(CoalError::arg(
                "meeting oracle needs a translation-invariant graph (zd or torus)",
            ))
        }
    }
    if replicas == 0 {
        return Err(CoalError::arg("need replicas >= 1"));
    }
    let ball = g.ball_sites(m);
    let d = g.dims();
    let side = match g.kind() {
        GraphKind::Torus { side, .. } => Some(*side),
        _ => None,
    };
    let rate = F::of(2.0);
    let hits = replicate(replicas, root_seed, |_, rng| {
        let a = ball[rng.random_range(0..ball.len())];
        let b = ball[rng.random_range(0..ball.len())];
        let mut diff = Site::ORIGIN;
        for i in 0..d {
            let c = a.0[i] - b.0[i];
            diff.0[i] = match side {
                Some(s) => c.rem_euclid(s),
                None => c,
            };
        }
        if diff == Site::ORIGIN {
            return true;
        }
        let mut met = false;
        run_walk(g, diff, rate, horizon, rng, |_, s| {
            if s == Site::ORIGIN {
                met = true;
                true
            } else {
                false
            }
        });
        met
    });
    let n_hits = hits.iter().filter(|h| **h).count();
    Ok(binomial_estimate(n_hits, replicas, horizon.as_f64()))
}

/// Start specification for the hitting oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkStart {
    At(Site),
    /// Uniform over `B(o, m)`.
    UniformBall(u32),
}

/// Probability that a rate-1 walk hits the origin before the horizon.
///
/// A walk started at the origin reports probability one: the hit is
/// counted at time zero by convention.
pub fn rw_hit_origin_prob<F: Real>(
    g: &GraphSpec,
    start: WalkStart,
    horizon: F,
    replicas: usize,
    root_seed: u64,
) -> Result<McEstimate> {
    if replicas == 0 {
        return Err(CoalError::arg("need replicas >= 1"));
    }
    let starts: Vec<Site> = match start {
        WalkStart::At(s) => {
            if !g.contains(s) {
                return Err(CoalError::arg(format!("start site {s:?} not in graph")));
            }
            vec![s]
        }
        WalkStart::UniformBall(m) => g.ball_sites(m),
    };
    let origin = g.origin();
    let hits = replicate(replicas, root_seed, |_, rng| {
        let from = starts[rng.random_range(0..starts.len())];
        if from == origin {
            return true;
        }
        let mut hit = false;
        run_walk(g, from, F::one(), horizon, rng, |_, s| {
            if s == origin {
                hit = true;
                true
            } else {
                false
            }
        });
        hit
    });
    let n_hits = hits.iter().filter(|h| **h).count();
    Ok(binomial_estimate(n_hits, replicas, horizon.as_f64()))
}

/// Sub-Gaussian excursion check record.
#[derive(Debug, Clone)]
pub struct TailFit {
    /// `(x, empirical P(sup_{s<=t} |X_s|_2 >= x))` per requested threshold.
    pub points: Vec<(f64, f64)>,
    /// Fitted decay constant in `C exp(-c x^2 / t)`, over positive points.
    pub c: f64,
    pub big_c: f64,
}

/// Empirical tail of the running maximum of the Euclidean norm, fitted
/// against the sub-Gaussian template `C exp(-c x^2/t)`.
///
/// Thresholds whose empirical probability is zero are excluded from the
/// fit; at least two positive points are required.
pub fn excursion_tail_check<F: Real>(
    g: &GraphSpec,
    t: F,
    xs: &[f64],
    replicas: usize,
    root_seed: u64,
) -> Result<TailFit> {
    if !(t > F::zero()) || replicas == 0 || xs.is_empty() {
        return Err(CoalError::arg("need t > 0, replicas >= 1 and thresholds"));
    }
    let sups: Vec<f64> = replicate(replicas, root_seed, |_, rng| {
        let mut sup = 0.0f64;
        run_walk(g, g.origin(), F::one(), t, rng, |_, s| {
            sup = sup.max(s.norm2_sq());
            false
        });
        sup.sqrt()
    });
    let mut points = Vec::with_capacity(xs.len());
    for &x in xs {
        let p = sups.iter().filter(|&&s| s >= x).count() as f64 / replicas as f64;
        points.push((x, p));
    }
    let fit_pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, p)| *p > 0.0 && *x > 0.0)
        .map(|&(x, p)| (x * x / t.as_f64(), p.ln()))
        .collect();
    if fit_pts.len() < 2 {
        return Err(CoalError::Numeric {
            what: "excursion tail fit: fewer than two positive points".into(),
            achieved: fit_pts.len() as f64,
            requested: 2.0,
        });
    }
    let xs_fit: Vec<f64> = fit_pts.iter().map(|p| p.0).collect();
    let ys_fit: Vec<f64> = fit_pts.iter().map(|p| p.1).collect();
    let (intercept, slope, _) = crate::stats::linear_fit(&xs_fit, &ys_fit);
    Ok(TailFit {
        points,
        c: -slope,
        big_c: intercept.exp(),
    })
}

//! Finite metric measure spaces `(X, d, mu)`.
//!
//! A space is a finite list of sample points with per-point masses, a metric
//! (Euclidean on model coordinates, a snowflake power of it, or an explicit
//! distance matrix), and optional labelled boundary components.  Masses are
//! interpreted as the measure of each point's sampling cell, so the mass of a
//! ball is the sum of the weights of its member points.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::geom::{dist as edist, P2};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate points at indices {0} and {1}")]
    DuplicatePoints(usize, usize),
    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },
    #[error("total mass is not positive")]
    ZeroTotalMass,
    #[error("snowflake exponent {0} outside (0, 1]")]
    BadSnowflakeExponent(f64),
    #[error("distance matrix is {rows}x{cols}, expected {n}x{n}")]
    BadMatrixShape { rows: usize, cols: usize, n: usize },
    #[error("distance matrix asymmetric at ({i},{j}): {a} vs {b}")]
    AsymmetricMatrix { i: usize, j: usize, a: f64, b: f64 },
    #[error("distance matrix diagonal nonzero at {0}")]
    NonzeroDiagonal(usize),
    #[error("distance matrix has nonpositive off-diagonal entry at ({i},{j})")]
    NonpositiveDistance { i: usize, j: usize },
    #[error("boundary label {label:?} refers to point {index} out of range")]
    BadBoundaryIndex { label: String, index: usize },
    #[error("generator rejected: disks {0} and {1} overlap")]
    OverlappingDisks(usize, usize),
    #[error("generator rejected: disk {0} is not inside the outer disk")]
    DiskOutsideOuter(usize),
    #[error("generator produced no points inside the region")]
    EmptyRegion,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Metric on the sample points.
#[derive(Debug, Clone)]
pub enum Metric {
    Euclidean,
    /// `d(x,y) = |x-y|^theta` with `theta` in `(0, 1]`.
    Snowflake { theta: f64 },
    /// Explicit symmetric distance matrix, row-major.
    Explicit { matrix: Vec<f64>, n: usize },
}

/// A metric ball realised as an explicit member list.
#[derive(Debug, Clone, Serialize)]
pub struct BallSet {
    pub center: usize,
    pub radius: f64,
    /// Closed balls include points at distance exactly `radius`.
    pub closed: bool,
    pub members: Vec<usize>,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct MetricMeasureSpace {
    points: Vec<P2>,
    metric: Metric,
    weights: Vec<f64>,
    boundary: BTreeMap<String, Vec<usize>>,
    pitch: f64,
    total_mass: f64,
    grid: Option<GridIndex>,
    boundary_flags: Vec<bool>,
}

/// Uniform hash grid over model coordinates, used to answer ball queries for
/// coordinate metrics without scanning every point.
#[derive(Debug, Clone)]
struct GridIndex {
    cell: f64,
    origin: P2,
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl GridIndex {
    fn build(points: &[P2], cell: f64) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let dims = [
            (((max[0] - min[0]) / cell).floor() as usize + 1).max(1),
            (((max[1] - min[1]) / cell).floor() as usize + 1).max(1),
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        for (i, p) in points.iter().enumerate() {
            let bx = (((p[0] - min[0]) / cell) as usize).min(dims[0] - 1);
            let by = (((p[1] - min[1]) / cell) as usize).min(dims[1] - 1);
            buckets[by * dims[0] + bx].push(i as u32);
        }
        GridIndex { cell, origin: min, dims, buckets }
    }

    /// Indices of all points within Euclidean distance `r` of `center`,
    /// over-approximated (caller filters by the actual predicate).
    fn candidates(&self, center: P2, r: f64, out: &mut Vec<u32>) {
        out.clear();
        let reach = (r / self.cell).ceil() as i64 + 1;
        let cx = ((center[0] - self.origin[0]) / self.cell) as i64;
        let cy = ((center[1] - self.origin[1]) / self.cell) as i64;
        for gy in (cy - reach).max(0)..=(cy + reach).min(self.dims[1] as i64 - 1) {
            for gx in (cx - reach).max(0)..=(cx + reach).min(self.dims[0] as i64 - 1) {
                out.extend_from_slice(&self.buckets[gy as usize * self.dims[0] + gx as usize]);
            }
        }
    }
}

impl MetricMeasureSpace {
    /// Validates and assembles a space from raw parts.
    pub fn build(
        points: Vec<P2>,
        metric: Metric,
        weights: Vec<f64>,
        boundary: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self, SpaceError> {
        let n = points.len();
        if n < 2 {
            return Err(SpaceError::TooFewPoints(n));
        }
        if weights.len() != n {
            return Err(SpaceError::Parse(format!(
                "{} weights for {} points",
                weights.len(),
                n
            )));
        }
        for (i, w) in weights.iter().enumerate() {
            if *w < 0.0 || !w.is_finite() {
                return Err(SpaceError::NegativeWeight { index: i, value: *w });
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(SpaceError::ZeroTotalMass);
        }
        match &metric {
            Metric::Euclidean => {}
            Metric::Snowflake { theta } => {
                if !(*theta > 0.0 && *theta <= 1.0) {
                    return Err(SpaceError::BadSnowflakeExponent(*theta));
                }
            }
            Metric::Explicit { matrix, n: m } => {
                if *m != n || matrix.len() != n * n {
                    return Err(SpaceError::BadMatrixShape {
                        rows: matrix.len() / m.max(&1),
                        cols: *m,
                        n,
                    });
                }
                for i in 0..n {
                    if matrix[i * n + i] != 0.0 {
                        return Err(SpaceError::NonzeroDiagonal(i));
                    }
                    for j in (i + 1)..n {
                        let a = matrix[i * n + j];
                        let b = matrix[j * n + i];
                        if a != b {
                            return Err(SpaceError::AsymmetricMatrix { i, j, a, b });
                        }
                        if !(a > 0.0) {
                            return Err(SpaceError::NonpositiveDistance { i, j });
                        }
                    }
                }
            }
        }
        if matches!(metric, Metric::Euclidean | Metric::Snowflake { .. }) {
            let mut sorted: Vec<usize> = (0..n).collect();
            sorted.sort_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap());
            for w in sorted.windows(2) {
                if points[w[0]] == points[w[1]] {
                    return Err(SpaceError::DuplicatePoints(
                        w[0].min(w[1]),
                        w[0].max(w[1]),
                    ));
                }
            }
        }
        for (label, ids) in &boundary {
            for &i in ids {
                if i >= n {
                    return Err(SpaceError::BadBoundaryIndex { label: label.clone(), index: i });
                }
            }
        }
        let mut s = MetricMeasureSpace {
            points,
            metric,
            weights,
            boundary,
            pitch: 0.0,
            total_mass: total,
            grid: None,
            boundary_flags: vec![false; n],
        };
        s.finish_indexing(None);
        Ok(s)
    }

    fn finish_indexing(&mut self, exact_pitch: Option<f64>) {
        let n = self.points.len();
        if matches!(self.metric, Metric::Explicit { .. }) {
            // Pitch in an explicit space: smallest positive pairwise distance.
            let mut p = f64::INFINITY;
            for i in 0..n {
                for j in (i + 1)..n {
                    p = p.min(self.dist(i, j));
                }
            }
            self.pitch = exact_pitch.unwrap_or(p);
            self.boundary_flags = vec![false; n];
            return;
        }
        // Model-coordinate pitch: estimate from nearest neighbours on a coarse
        // grid, or trust the generator's exact value.
        let diag = {
            let mut min = [f64::INFINITY; 2];
            let mut max = [f64::NEG_INFINITY; 2];
            for p in &self.points {
                for k in 0..2 {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
            edist(min, max).max(f64::MIN_POSITIVE)
        };
        let guess = exact_pitch.unwrap_or(diag / (n as f64).sqrt().max(2.0));
        let grid = GridIndex::build(&self.points, (guess * 2.0).max(diag * 1e-9));
        let pitch = match exact_pitch {
            Some(p) => p,
            None => {
                let mut buf = Vec::new();
                let mut best = f64::INFINITY;
                for i in 0..n {
                    let mut r = guess;
                    loop {
                        grid.candidates(self.points[i], r, &mut buf);
                        let nn = buf
                            .iter()
                            .map(|&j| j as usize)
                            .filter(|&j| j != i)
                            .map(|j| edist(self.points[i], self.points[j]))
                            .fold(f64::INFINITY, f64::min);
                        if nn <= r {
                            best = best.min(nn);
                            break;
                        }
                        r *= 2.0;
                        if r > diag * 2.0 {
                            break;
                        }
                    }
                }
                best
            }
        };
        self.pitch = pitch;
        // Boundary samples: points whose immediate neighbourhood is not full.
        let mut buf = Vec::new();
        let mut counts = vec![0usize; n];
        for i in 0..n {
            grid.candidates(self.points[i], 1.5 * pitch, &mut buf);
            counts[i] = buf
                .iter()
                .filter(|&&j| {
                    j as usize != i && edist(self.points[i], self.points[j as usize]) <= 1.5 * pitch
                })
                .count();
        }
        let full = counts.iter().copied().max().unwrap_or(0);
        self.boundary_flags = counts.iter().map(|&c| c < full).collect();
        self.grid = Some(grid);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[P2] {
        &self.points
    }

    pub fn point(&self, i: usize) -> P2 {
        self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn boundary(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.boundary
    }

    /// Sampling pitch: the nearest-neighbour distance in model coordinates
    /// (exact for generated grids, estimated otherwise).
    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Pitch expressed in metric units (`pitch^theta` on snowflaked spaces).
    pub fn metric_pitch(&self) -> f64 {
        match &self.metric {
            Metric::Snowflake { theta } => self.pitch.powf(*theta),
            _ => self.pitch,
        }
    }

    /// True for samples whose local neighbourhood is incomplete, i.e. points
    /// sitting on the rim of the sampled region.
    pub fn is_boundary_sample(&self, i: usize) -> bool {
        self.boundary_flags[i]
    }

    /// Distance from `i` to the nearest boundary sample (model coordinates);
    /// infinite when the space has no detected boundary.
    pub fn boundary_clearance(&self, i: usize) -> f64 {
        let mut best = f64::INFINITY;
        for j in 0..self.len() {
            if self.boundary_flags[j] {
                best = best.min(edist(self.points[i], self.points[j]));
            }
        }
        best
    }

    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.metric {
            Metric::Euclidean => edist(self.points[i], self.points[j]),
            Metric::Snowflake { theta } => edist(self.points[i], self.points[j]).powf(*theta),
            Metric::Explicit { matrix, n } => matrix[i * n + j],
        }
    }

    /// Diameter of the whole space (max pairwise distance).
    pub fn diameter(&self) -> f64 {
        match &self.metric {
            Metric::Explicit { .. } => {
                let n = self.len();
                let mut d = 0.0f64;
                for i in 0..n {
                    for j in (i + 1)..n {
                        d = d.max(self.dist(i, j));
                    }
                }
                d
            }
            _ => {
                // For coordinate metrics the Euclidean diameter of the bounding
                // extremes dominates; scan the convex-ish hull cheaply by
                // taking the max over pairs of coordinate extremes.
                let n = self.len();
                let mut extreme: Vec<usize> = Vec::new();
                for k in 0..2 {
                    for sign in [-1.0f64, 1.0] {
                        let best = (0..n)
                            .max_by(|&a, &b| {
                                (sign * self.points[a][k])
                                    .partial_cmp(&(sign * self.points[b][k]))
                                    .unwrap()
                            })
                            .unwrap();
                        extreme.push(best);
                    }
                }
                let mut d = 0.0f64;
                for &a in &extreme {
                    for j in 0..n {
                        d = d.max(self.dist(a, j));
                    }
                }
                d
            }
        }
    }

    /// Squared distance in model coordinates (coordinate metrics only).
    fn sq_base(&self, i: usize, j: usize) -> f64 {
        let dx = self.points[i][0] - self.points[j][0];
        let dy = self.points[i][1] - self.points[j][1];
        dx * dx + dy * dy
    }

    /// Metric radius expressed in model-coordinate units.
    fn base_radius(&self, r: f64) -> f64 {
        match &self.metric {
            Metric::Euclidean => r,
            Metric::Snowflake { theta } => {
                if *theta == 1.0 {
                    r
                } else {
                    r.powf(1.0 / theta)
                }
            }
            Metric::Explicit { .. } => r,
        }
    }

    /// Members with base-coordinate squared distance to `center` passing the
    /// threshold test.  All coordinate-metric ball queries funnel through this
    /// comparison: since `t -> t^theta` is strictly increasing, ordering model
    /// distances *is* ordering metric distances, and it keeps the member sets
    /// of a snowflaked space bitwise identical to the flat space's.  (`powf`
    /// is faithfully rounded but not monotone, so comparing through it can
    /// invert exact ties.)
    fn members_within_base(&self, center: usize, r_base: f64, sq_cut: f64, strict: bool) -> Vec<usize> {
        let keep = |s: f64| if strict { s < sq_cut } else { s <= sq_cut };
        let mut members: Vec<usize> = match &self.grid {
            Some(grid) => {
                let mut buf = Vec::new();
                grid.candidates(self.points[center], r_base * (1.0 + 1e-9), &mut buf);
                buf.into_iter()
                    .map(|j| j as usize)
                    .filter(|&j| keep(self.sq_base(center, j)))
                    .collect()
            }
            None => (0..self.len()).filter(|&j| keep(self.sq_base(center, j))).collect(),
        };
        members.sort_unstable();
        members
    }

    fn ball_members(&self, center: usize, radius: f64, closed: bool) -> Vec<usize> {
        match &self.metric {
            Metric::Explicit { .. } => {
                let keep = |d: f64| if closed { d <= radius } else { d < radius };
                (0..self.len()).filter(|&j| keep(self.dist(center, j))).collect()
            }
            _ => {
                let r_base = self.base_radius(radius);
                self.members_within_base(center, r_base, r_base * r_base, !closed)
            }
        }
    }

    /// Open metric ball `B(center, radius)`; membership is exactly
    /// `{z : d(center, z) < radius}`, so the center is a member iff `radius > 0`.
    pub fn ball(&self, center: usize, radius: f64) -> BallSet {
        let members = self.ball_members(center, radius, false);
        let mass = members.iter().map(|&j| self.weights[j]).sum();
        BallSet { center, radius, closed: false, members, mass }
    }

    /// Closed metric ball `{z : d(center, z) <= radius}`.
    pub fn ball_closed(&self, center: usize, radius: f64) -> BallSet {
        let members = self.ball_members(center, radius, true);
        let mass = members.iter().map(|&j| self.weights[j]).sum();
        BallSet { center, radius, closed: true, members, mass }
    }

    pub fn ball_mass(&self, center: usize, radius: f64) -> f64 {
        self.ball_members(center, radius, false)
            .iter()
            .map(|&j| self.weights[j])
            .sum()
    }

    /// The two-ball union `B(x, d(x,y)) ∪ B(y, d(x,y))` attached to a pair.
    ///
    /// Realised with closed balls: at sampling resolution the open version
    /// collapses to the bare pair `{x, y}` and loses the area the union is
    /// meant to carry, while the closed version tracks it faithfully.  The
    /// membership test carries a `1e-12` relative slack so that points at
    /// exactly the pair distance (up to the last rounding) land inside on
    /// every metric consistently.
    pub fn pair_ball(&self, x: usize, y: usize) -> (Vec<usize>, f64) {
        let (mut members, more) = match &self.metric {
            Metric::Explicit { .. } => {
                let d = self.dist(x, y) * (1.0 + 1e-12);
                (self.ball_members(x, d, true), self.ball_members(y, d, true))
            }
            _ => {
                let r_base = edist(self.points[x], self.points[y]);
                let sq_cut = r_base * r_base * (1.0 + 2e-12);
                (
                    self.members_within_base(x, r_base, sq_cut, false),
                    self.members_within_base(y, r_base, sq_cut, false),
                )
            }
        };
        let mut merged = Vec::with_capacity(members.len() + more.len());
        let (mut a, mut b) = (0, 0);
        while a < members.len() || b < more.len() {
            match (members.get(a), more.get(b)) {
                (Some(&u), Some(&v)) if u == v => {
                    merged.push(u);
                    a += 1;
                    b += 1;
                }
                (Some(&u), Some(&v)) if u < v => {
                    merged.push(u);
                    a += 1;
                }
                (Some(_), Some(&v)) => {
                    merged.push(v);
                    b += 1;
                }
                (Some(&u), None) => {
                    merged.push(u);
                    a += 1;
                }
                (None, Some(&v)) => {
                    merged.push(v);
                    b += 1;
                }
                (None, None) => break,
            }
        }
        members = merged;
        let mass = members.iter().map(|&j| self.weights[j]).sum();
        (members, mass)
    }

    pub fn pair_ball_mass(&self, x: usize, y: usize) -> f64 {
        self.pair_ball(x, y).1
    }

    /// Points within metric distance `delta` of `center`, closed with the
    /// same relative slack as [`Self::pair_ball`].  Proximity-graph builders
    /// use this so that edge sets agree across rescaled metrics.
    pub fn neighbors_within(&self, center: usize, delta: f64) -> Vec<usize> {
        match &self.metric {
            Metric::Explicit { .. } => self.ball_members(center, delta * (1.0 + 1e-12), true),
            _ => {
                let r_base = self.base_radius(delta);
                self.members_within_base(center, r_base, r_base * r_base * (1.0 + 2e-12), false)
            }
        }
    }
}

// ─── Generators ───

/// Density profiles for reweighted spaces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Uniform,
    /// `low` on `{x <= threshold}`, `high` on `{x > threshold}`.
    StepX { threshold: f64, low: f64, high: f64 },
    /// `|p - center|^exponent`.
    RadialPower { center: [f64; 2], exponent: f64 },
}

impl Density {
    pub fn eval(&self, p: P2) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::StepX { threshold, low, high } => {
                if p[0] > *threshold {
                    *high
                } else {
                    *low
                }
            }
            Density::RadialPower { center, exponent } => edist(p, *center).powf(*exponent),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disk {
    pub z: [f64; 2],
    pub r: f64,
}

/// Region samplers producing uniform grids of cell centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Unit square `[0,1]^2` sampled on an `n x n` grid of cell centers.
    Square { n: usize },
    /// Annulus `r <= |p| <= big_r` sampled from an `n x n` grid on the
    /// bounding box `[-big_r, big_r]^2`.
    Annulus { r: f64, big_r: f64, n: usize },
    /// Circle domain: the outer disk minus the listed closed disks, sampled
    /// from an `n x n` grid on the outer bounding box.  Boundary-adjacent
    /// points are labelled per component.
    CircleDomain { outer: Disk, disks: Vec<Disk>, n: usize },
    /// Reweights a base sampling by a density profile.
    Weighted { base: Box<Generator>, density: Density },
    /// Snowflakes the metric of a base sampling: `d = |x-y|^theta`.
    Snowflake { base: Box<Generator>, theta: f64 },
}

pub fn generate(spec: &Generator) -> Result<MetricMeasureSpace, SpaceError> {
    match spec {
        Generator::Square { n } => {
            let n = *n;
            if n < 2 {
                return Err(SpaceError::TooFewPoints(n * n));
            }
            let h = 1.0 / n as f64;
            let mut pts = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    pts.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                }
            }
            let count = pts.len();
            let w = 1.0 / count as f64; // region area 1 split uniformly
            let mut s = MetricMeasureSpace::build(
                pts,
                Metric::Euclidean,
                vec![w; count],
                BTreeMap::new(),
            )?;
            s.finish_indexing(Some(h));
            Ok(s)
        }
        Generator::Annulus { r, big_r, n } => {
            let (r, big_r, n) = (*r, *big_r, *n);
            let h = 2.0 * big_r / n as f64;
            let mut pts = Vec::new();
            for j in 0..n {
                for i in 0..n {
                    let p = [
                        -big_r + (i as f64 + 0.5) * h,
                        -big_r + (j as f64 + 0.5) * h,
                    ];
                    let d = edist(p, [0.0, 0.0]);
                    if d >= r && d <= big_r {
                        pts.push(p);
                    }
                }
            }
            if pts.is_empty() {
                return Err(SpaceError::EmptyRegion);
            }
            let area = std::f64::consts::PI * (big_r * big_r - r * r);
            let w = area / pts.len() as f64;
            let count = pts.len();
            let mut boundary = BTreeMap::new();
            let inner: Vec<usize> = (0..count)
                .filter(|&i| edist(pts[i], [0.0, 0.0]) <= r + 1.5 * h)
                .collect();
            let outer: Vec<usize> = (0..count)
                .filter(|&i| edist(pts[i], [0.0, 0.0]) >= big_r - 1.5 * h)
                .collect();
            boundary.insert("inner".to_string(), inner);
            boundary.insert("outer".to_string(), outer);
            let mut s =
                MetricMeasureSpace::build(pts, Metric::Euclidean, vec![w; count], boundary)?;
            s.finish_indexing(Some(h));
            Ok(s)
        }
        Generator::CircleDomain { outer, disks, n } => {
            for (i, a) in disks.iter().enumerate() {
                if edist(a.z, outer.z) + a.r >= outer.r {
                    return Err(SpaceError::DiskOutsideOuter(i));
                }
                for (j, b) in disks.iter().enumerate().skip(i + 1) {
                    if edist(a.z, b.z) <= a.r + b.r {
                        return Err(SpaceError::OverlappingDisks(i, j));
                    }
                }
            }
            let h = 2.0 * outer.r / *n as f64;
            let mut pts = Vec::new();
            for j in 0..*n {
                for i in 0..*n {
                    let p = [
                        outer.z[0] - outer.r + (i as f64 + 0.5) * h,
                        outer.z[1] - outer.r + (j as f64 + 0.5) * h,
                    ];
                    if edist(p, outer.z) >= outer.r {
                        continue;
                    }
                    if disks.iter().any(|d| edist(p, d.z) <= d.r) {
                        continue;
                    }
                    pts.push(p);
                }
            }
            if pts.is_empty() {
                return Err(SpaceError::EmptyRegion);
            }
            let area = std::f64::consts::PI
                * (outer.r * outer.r - disks.iter().map(|d| d.r * d.r).sum::<f64>());
            let w = area / pts.len() as f64;
            let count = pts.len();
            let mut boundary = BTreeMap::new();
            for (k, d) in disks.iter().enumerate() {
                let ids: Vec<usize> = (0..count)
                    .filter(|&i| edist(pts[i], d.z) <= d.r + 1.5 * h)
                    .collect();
                boundary.insert(format!("A{}", k + 1), ids);
            }
            let outer_ids: Vec<usize> = (0..count)
                .filter(|&i| edist(pts[i], outer.z) >= outer.r - 1.5 * h)
                .collect();
            boundary.insert("outer".to_string(), outer_ids);
            let mut s =
                MetricMeasureSpace::build(pts, Metric::Euclidean, vec![w; count], boundary)?;
            s.finish_indexing(Some(h));
            Ok(s)
        }
        Generator::Weighted { base, density } => {
            let s = generate(base)?;
            let cell = s.total_mass() / s.len() as f64;
            let weights: Vec<f64> = s.points().iter().map(|&p| density.eval(p) * cell).collect();
            let pitch = s.pitch();
            let mut out = MetricMeasureSpace::build(
                s.points().to_vec(),
                s.metric().clone(),
                weights,
                s.boundary().clone(),
            )?;
            out.finish_indexing(Some(pitch));
            Ok(out)
        }
        Generator::Snowflake { base, theta } => {
            let s = generate(base)?;
            let pitch = s.pitch();
            let mut out = MetricMeasureSpace::build(
                s.points().to_vec(),
                Metric::Snowflake { theta: *theta },
                s.weights().to_vec(),
                s.boundary().clone(),
            )?;
            out.finish_indexing(Some(pitch));
            Ok(out)
        }
    }
}

// ─── Serialization ───

#[derive(Serialize, Deserialize)]
struct MetricFile {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    points: Vec<[f64; 2]>,
    metric: MetricFile,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    boundary: BTreeMap<String, Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pitch: Option<f64>,
}

impl MetricMeasureSpace {
    pub fn to_json(&self) -> String {
        let metric = match &self.metric {
            Metric::Euclidean => MetricFile { kind: "euclidean".into(), theta: None, matrix: None },
            Metric::Snowflake { theta } => {
                MetricFile { kind: "snowflake".into(), theta: Some(*theta), matrix: None }
            }
            Metric::Explicit { matrix, n } => MetricFile {
                kind: "explicit".into(),
                theta: None,
                matrix: Some((0..*n).map(|i| matrix[i * n..(i + 1) * n].to_vec()).collect()),
            },
        };
        let file = SpaceFile {
            points: self.points.clone(),
            metric,
            weights: self.weights.clone(),
            boundary: self.boundary.clone(),
            pitch: Some(self.pitch),
        };
        serde_json::to_string_pretty(&file).expect("space serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let file: SpaceFile =
            serde_json::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))?;
        let metric = match file.metric.kind.as_str() {
            "euclidean" => Metric::Euclidean,
            "snowflake" => Metric::Snowflake {
                theta: file
                    .metric
                    .theta
                    .ok_or_else(|| SpaceError::Parse("snowflake metric needs theta".into()))?,
            },
            "explicit" => {
                let rows = file
                    .metric
                    .matrix
                    .ok_or_else(|| SpaceError::Parse("explicit metric needs matrix".into()))?;
                let n = rows.len();
                let mut matrix = Vec::with_capacity(n * n);
                for row in &rows {
                    if row.len() != n {
                        return Err(SpaceError::Parse("ragged distance matrix".into()));
                    }
                    matrix.extend_from_slice(row);
                }
                Metric::Explicit { matrix, n }
            }
            other => return Err(SpaceError::Parse(format!("unknown metric kind {other:?}"))),
        };
        let mut s = MetricMeasureSpace::build(file.points, metric, file.weights, file.boundary)?;
        if let Some(p) = file.pitch {
            s.finish_indexing(Some(p));
        }
        Ok(s)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), SpaceError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, SpaceError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// CSV rows `x,y,weight[,label]`; only coordinate metrics are expressible.
    pub fn to_csv(&self) -> Result<String, SpaceError> {
        if matches!(self.metric, Metric::Explicit { .. }) {
            return Err(SpaceError::Parse(
                "explicit-matrix spaces have no CSV form; use JSON".into(),
            ));
        }
        let mut label_of = vec![String::new(); self.len()];
        for (label, ids) in &self.boundary {
            for &i in ids {
                if label_of[i].is_empty() {
                    label_of[i] = label.clone();
                }
            }
        }
        let mut out = String::from("x,y,weight,label\n");
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.points[i][0], self.points[i][1], self.weights[i], label_of[i]
            )
            .unwrap();
        }
        Ok(out)
    }

    pub fn from_csv(text: &str, metric: Metric) -> Result<Self, SpaceError> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut boundary: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (ln == 0 && line.starts_with('x')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 3 {
                return Err(SpaceError::Parse(format!("line {}: need x,y,weight", ln + 1)));
            }
            let x: f64 = fields[0]
                .trim()
                .parse()
                .map_err(|e| SpaceError::Parse(format!("line {}: {e}", ln + 1)))?;
            let y: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|e| SpaceError::Parse(format!("line {}: {e}", ln + 1)))?;
            let w: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|e| SpaceError::Parse(format!("line {}: {e}", ln + 1)))?;
            let idx = points.len();
            points.push([x, y]);
            weights.push(w);
            if let Some(label) = fields.get(3) {
                let label = label.trim();
                if !label.is_empty() {
                    boundary.entry(label.to_string()).or_default().push(idx);
                }
            }
        }
        MetricMeasureSpace::build(points, metric, weights, boundary)
    }
}

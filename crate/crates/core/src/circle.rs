//! Planar circle domains: exact disk geometry, free concentric radii,
//! routes through circular-arc arrangements, and modulus harnesses that tie
//! the geometry back to the solver.
//!
//! A circle domain here is a connected open set whose complement consists of
//! finitely many pairwise disjoint closed round disks, optionally clipped to
//! the inside of a round outer boundary.  Complementary single points are
//! excluded up front: they carry no area and no modulus, so every
//! complementary component must have positive radius.

use crate::geom::{self, P2};
use crate::modulus::{modulus_solve, DomainGraph, ModulusError, PathFamily};
use crate::report::VerificationReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CircleError {
    #[error("disk {0} has nonpositive radius (point components are excluded)")]
    NonpositiveRadius(usize),
    #[error("outer boundary must have positive radius")]
    BadOuter,
    #[error("disks {0} and {1} are tangent or overlapping")]
    DisksCollide(usize, usize),
    #[error("disk {0} is not strictly inside the outer boundary")]
    OutsideOuter(usize),
    #[error("disk index {0} is out of range")]
    BadIndex(usize),
    #[error("relative distance needs two distinct disks")]
    SamePair,
    #[error("expected {want} radius factors (base plus one per disk), got {got}")]
    FactorCount { want: usize, got: usize },
    #[error("base factor {0} must lie strictly between 1 and sqrt(3)")]
    BaseFactorRange(f64),
    #[error("base circle radius must be positive")]
    BadBaseRadius,
    #[error("factor {factor} for disk {disk} puts its circle outside the domain")]
    FactorNotFree { disk: usize, factor: f64 },
    #[error("a continuum needs at least two vertices")]
    DegenerateContinuum,
    #[error("continua must be disjoint")]
    ContinuaOverlap,
    #[error("the {0} continuum does not touch the base circle")]
    NoContact(&'static str),
    #[error("no route through the arc arrangement joins the continua")]
    ArrangementDisconnected,
    #[error("no base circle meets both continua across the whole factor range")]
    BaseCircleNotFound,
    #[error("the {0} is not resolved by the grid; refine it")]
    SideNotResolved(&'static str),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
}

// ─── Domains ───

/// A round closed disk, serialized as `{"z": [x, y], "r": radius}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Disk {
    #[serde(rename = "z")]
    pub center: P2,
    #[serde(rename = "r")]
    pub radius: f64,
}

/// Complement data of a circle domain: the removed disks, and the outer
/// boundary when the domain is bounded (`None` means the whole plane).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CircleDomain {
    pub outer: Option<Disk>,
    pub disks: Vec<Disk>,
}

impl CircleDomain {
    pub fn new(outer: Option<Disk>, disks: Vec<Disk>) -> Result<Self, CircleError> {
        let dom = CircleDomain { outer, disks };
        dom.validate()?;
        Ok(dom)
    }

    /// Checks positivity, strict pairwise disjointness, and containment in
    /// the outer boundary.  Deserialized domains should be validated before
    /// use.
    pub fn validate(&self) -> Result<(), CircleError> {
        if let Some(o) = &self.outer {
            if !(o.radius > 0.0) {
                return Err(CircleError::BadOuter);
            }
        }
        for (i, d) in self.disks.iter().enumerate() {
            if !(d.radius > 0.0) {
                return Err(CircleError::NonpositiveRadius(i));
            }
            if let Some(o) = &self.outer {
                if geom::dist(d.center, o.center) + d.radius >= o.radius {
                    return Err(CircleError::OutsideOuter(i));
                }
            }
            for (j, e) in self.disks.iter().enumerate().skip(i + 1) {
                if geom::dist(d.center, e.center) <= d.radius + e.radius {
                    return Err(CircleError::DisksCollide(i, j));
                }
            }
        }
        Ok(())
    }

    pub fn disk_count(&self) -> usize {
        self.disks.len()
    }

    /// Strict membership: inside the outer boundary and outside every
    /// (closed) complementary disk.
    pub fn contains(&self, p: P2) -> bool {
        if let Some(o) = &self.outer {
            if geom::dist(p, o.center) >= o.radius {
                return false;
            }
        }
        self.disks
            .iter()
            .all(|d| geom::dist(p, d.center) > d.radius)
    }

    /// Gap between two disks measured in units of the smaller radius.
    pub fn relative_distance(&self, i: usize, j: usize) -> Result<f64, CircleError> {
        let n = self.disks.len();
        if i >= n {
            return Err(CircleError::BadIndex(i));
        }
        if j >= n {
            return Err(CircleError::BadIndex(j));
        }
        if i == j {
            return Err(CircleError::SamePair);
        }
        let (a, b) = (&self.disks[i], &self.disks[j]);
        let gap = geom::dist(a.center, b.center) - a.radius - b.radius;
        Ok(gap / a.radius.min(b.radius))
    }

    /// Smallest relative distance over all disk pairs; `None` below two
    /// disks.
    pub fn min_relative_distance(&self) -> Option<f64> {
        let n = self.disks.len();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = self.relative_distance(i, j).expect("indices are valid");
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best
    }

    /// The domain similar to this one under multiplication by `sigma`.
    pub fn scaled(&self, sigma: f64) -> CircleDomain {
        let scale = |d: &Disk| Disk {
            center: geom::scale(d.center, sigma),
            radius: d.radius * sigma,
        };
        CircleDomain {
            outer: self.outer.as_ref().map(&scale),
            disks: self.disks.iter().map(&scale).collect(),
        }
    }
}

/// Draws a random whole-plane domain with the given number of disks:
/// centers in `[-1, 1]^2`, radii in `[0.08, 0.28]`, pairwise gaps at least
/// `0.06`.  Deterministic in the seed.
pub fn sample_domain(seed: u64, disks: usize) -> CircleDomain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let cand: Vec<Disk> = (0..disks)
            .map(|_| Disk {
                center: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                radius: rng.random_range(0.08..0.28),
            })
            .collect();
        let ok = (0..disks).all(|i| {
            ((i + 1)..disks).all(|j| {
                geom::dist(cand[i].center, cand[j].center)
                    - cand[i].radius
                    - cand[j].radius
                    >= 0.06
            })
        });
        if ok {
            return CircleDomain::new(None, cand).expect("gaps enforce disjointness");
        }
    }
}

// ─── Protection constants ───

/// Separation scale below which two complementary disks would contradict
/// the modulus budget of the generating space; `2^(-2 - 2M - pi^2 C / (8 log 2))`
/// with `C = C_W^2 C_D^(1 + log2 C_X)`.
///
/// The divisor's `log 2` is taken natural, consistent with the concentric
/// ring modulus `2 log 2 / pi`; see [`alpha_constant_with_log_base`] to vary
/// the base.
pub fn alpha_constant(c_w: f64, c_d: f64, c_x: f64, m: usize) -> f64 {
    alpha_constant_with_log_base(c_w, c_d, c_x, m, std::f64::consts::E)
}

/// [`alpha_constant`] with the logarithm base in the `8 log 2` divisor made
/// explicit, since the source formula does not pin it down.
pub fn alpha_constant_with_log_base(
    c_w: f64,
    c_d: f64,
    c_x: f64,
    m: usize,
    base: f64,
) -> f64 {
    let log2 = 2f64.ln() / base.ln();
    let packed = c_w * c_w * c_d.powf(1.0 + c_x.log2());
    2f64.powf(-2.0 - 2.0 * m as f64 - PI * PI * packed / (8.0 * log2))
}

/// Modulus floor for the family of free concentric circles around one disk:
/// `alpha^M / (2 pi (10 M)^M)`.
pub fn beta_constant(alpha: f64, m: usize) -> f64 {
    free_radius_floor(alpha, m) / (2.0 * PI)
}

/// Floor for the measure of the free-radius set when the disks are mutually
/// `alpha`-separated: `alpha^M / (10 M)^M`.
pub fn free_radius_floor(alpha: f64, m: usize) -> f64 {
    alpha.powi(m as i32) / (10.0 * m as f64).powi(m as i32)
}

/// Floor for the modulus joining two comparable, nearby continua in the
/// domain: `alpha^M / (2 pi (10 M)^M (M + 2)^2)`.
pub fn joining_floor(alpha: f64, m: usize) -> f64 {
    beta_constant(alpha, m) / ((m as f64 + 2.0) * (m as f64 + 2.0))
}

/// Upper budget for the modulus joining two complementary disks, derived
/// from the generating space's constants: `pi C_W^2 C_D^(1 + log2 C_X) / 2`.
pub fn pair_modulus_budget(c_w: f64, c_d: f64, c_x: f64) -> f64 {
    PI * c_w * c_w * c_d.powf(1.0 + c_x.log2()) / 2.0
}

// ─── Free radii ───

/// The set of factors `t` in `(1, 1 + alpha)` for which the circle of
/// radius `t r_i` around disk `i` stays inside the domain, as a sorted
/// union of disjoint open intervals.
#[derive(Debug, Clone, Serialize)]
pub struct FreeRadiusSet {
    pub disk: usize,
    pub intervals: Vec<(f64, f64)>,
    pub measure: f64,
}

impl FreeRadiusSet {
    /// Maps `u` in `[0, 1)` to a factor, uniformly in measure; `None` when
    /// the set is empty.
    pub fn sample(&self, u: f64) -> Option<f64> {
        if !(self.measure > 0.0) {
            return None;
        }
        let mut target = u.clamp(0.0, 1.0 - 1e-12) * self.measure;
        for &(lo, hi) in &self.intervals {
            if target < hi - lo {
                // keep strictly inside the open interval
                let eps = 1e-12 * (hi - lo);
                return Some((lo + target).clamp(lo + eps, hi - eps));
            }
            target -= hi - lo;
        }
        self.intervals.last().map(|&(lo, hi)| 0.5 * (lo + hi))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo < t && t < hi)
    }
}

/// Computes the free-radius set of disk `i` by exact interval subtraction:
/// a disk at center distance `d` with radius `r` blocks the closed factor
/// interval `[(d - r)/r_i, (d + r)/r_i]`, and the outer boundary truncates
/// everything past `(R - d_o)/r_i`.
pub fn free_radii(
    dom: &CircleDomain,
    i: usize,
    alpha: f64,
) -> Result<FreeRadiusSet, CircleError> {
    let disk = *dom.disks.get(i).ok_or(CircleError::BadIndex(i))?;
    let (win_lo, win_hi) = (1.0, 1.0 + alpha);
    let mut cuts: Vec<(f64, f64)> = Vec::new();
    for (j, other) in dom.disks.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = geom::dist(disk.center, other.center);
        cuts.push((
            (d - other.radius) / disk.radius,
            (d + other.radius) / disk.radius,
        ));
    }
    if let Some(o) = &dom.outer {
        let d = geom::dist(disk.center, o.center);
        cuts.push(((o.radius - d) / disk.radius, f64::INFINITY));
    }
    cuts.retain(|&(lo, hi)| hi > win_lo && lo < win_hi);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for cut in cuts {
        match merged.last_mut() {
            Some(last) if cut.0 <= last.1 => last.1 = last.1.max(cut.1),
            _ => merged.push(cut),
        }
    }
    let mut intervals = Vec::new();
    let mut lo = win_lo;
    for &(a, b) in &merged {
        if a > lo {
            intervals.push((lo, a.min(win_hi)));
        }
        lo = lo.max(b);
        if lo >= win_hi {
            break;
        }
    }
    if lo < win_hi {
        intervals.push((lo, win_hi));
    }
    let measure = intervals.iter().map(|&(a, b)| b - a).sum();
    Ok(FreeRadiusSet { disk: i, intervals, measure })
}

// ─── Arc arrangements and connector paths ───

/// A simple route through the arrangement of test circles.
#[derive(Debug, Clone)]
pub struct ConnectorPath {
    /// Arrangement nodes visited, in order; pairwise distinct.
    pub junctions: Vec<P2>,
    /// Dense polyline tracing the arcs between the junctions.
    pub vertices: Vec<P2>,
    /// Total arc length.
    pub length: f64,
}

#[derive(Clone, Copy)]
struct Arc {
    to: usize,
    len: f64,
    circle: usize,
    a0: f64,
    a1: f64,
}

#[derive(Copy, Clone, PartialEq)]
struct QueueEntry {
    cost: f64,
    node: u32,
}
impl Eq for QueueEntry {}
impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Intersections of the segment `p..q` with the circle `(c, r)`.
fn segment_circle(p: P2, q: P2, c: P2, r: f64) -> Vec<P2> {
    let u = geom::sub(q, p);
    let w = geom::sub(p, c);
    let a = u[0] * u[0] + u[1] * u[1];
    if a == 0.0 {
        return Vec::new();
    }
    let b = 2.0 * (u[0] * w[0] + u[1] * w[1]);
    let k = w[0] * w[0] + w[1] * w[1] - r * r;
    let disc = b * b - 4.0 * a * k;
    if disc < 0.0 {
        return Vec::new();
    }
    let s = disc.sqrt();
    let mut out = Vec::new();
    for t in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
        if (-1e-12..=1.0 + 1e-12).contains(&t) {
            out.push(geom::add(p, geom::scale(u, t.clamp(0.0, 1.0))));
        }
    }
    if out.len() == 2 && geom::dist(out[0], out[1]) <= 1e-12 * r.max(1.0) {
        out.pop();
    }
    out
}

fn merge_node(nodes: &mut Vec<P2>, p: P2, tol: f64) -> usize {
    for (k, q) in nodes.iter().enumerate() {
        if geom::dist(p, *q) <= tol {
            return k;
        }
    }
    nodes.push(p);
    nodes.len() - 1
}

/// Connects two continua through the union of the inflated test circles
/// inside the domain.
///
/// `factors[0]` inflates the base circle and must lie strictly in
/// `(1, sqrt 3)`; `factors[1 + i]` inflates disk `i` and must keep its
/// circle inside the domain (a free radius).  The continua are polylines;
/// their crossings with the circles are the admissible endpoints, and at
/// least one crossing with the base circle is required on each side.
///
/// The route is a shortest path in the arrangement graph whose nodes are
/// circle/circle and circle/boundary crossings plus the endpoint contacts,
/// and whose edges are the arcs between consecutive nodes that stay inside
/// the domain.  Shortest paths repeat no node, so the result is injective.
pub fn connector_path(
    dom: &CircleDomain,
    base: Disk,
    factors: &[f64],
    e1: &[P2],
    e2: &[P2],
) -> Result<ConnectorPath, CircleError> {
    let m = dom.disks.len();
    if factors.len() != m + 1 {
        return Err(CircleError::FactorCount { want: m + 1, got: factors.len() });
    }
    if !(base.radius > 0.0) {
        return Err(CircleError::BadBaseRadius);
    }
    let t0 = factors[0];
    if !(t0 > 1.0 && t0 < 3f64.sqrt()) {
        return Err(CircleError::BaseFactorRange(t0));
    }
    if e1.len() < 2 || e2.len() < 2 {
        return Err(CircleError::DegenerateContinuum);
    }

    // the arrangement circles: the inflated base plus one free circle per disk
    let mut circles: Vec<(P2, f64)> = vec![(base.center, t0 * base.radius)];
    for (idx, disk) in dom.disks.iter().enumerate() {
        let t = factors[idx + 1];
        let radius = t * disk.radius;
        let free = t > 1.0
            && dom.disks.iter().enumerate().all(|(k, other)| {
                k == idx
                    || (geom::dist(disk.center, other.center) - radius).abs()
                        > other.radius
            })
            && dom.outer.as_ref().is_none_or(|o| {
                geom::dist(disk.center, o.center) + radius < o.radius
            });
        if !free {
            return Err(CircleError::FactorNotFree { disk: idx, factor: t });
        }
        circles.push((disk.center, radius));
    }

    let scale = circles.iter().fold(0.0f64, |s, &(_, r)| s.max(r));
    let cut_tol = 1e-9 * scale; // tangency classification
    let merge_tol = 1e-7 * scale; // identical crossings from different pairs
    let memb_tol = 1e-6 * scale; // node-on-circle membership

    let mut nodes: Vec<P2> = Vec::new();
    let mut contact = [Vec::new(), Vec::new()];
    let mut touches_base = [false, false];
    for (side, poly) in [e1, e2].into_iter().enumerate() {
        for seg in poly.windows(2) {
            for (ci, &(c, r)) in circles.iter().enumerate() {
                for p in segment_circle(seg[0], seg[1], c, r) {
                    let id = merge_node(&mut nodes, p, merge_tol);
                    contact[side].push(id);
                    if ci == 0 {
                        touches_base[side] = true;
                    }
                }
            }
        }
        contact[side].sort_unstable();
        contact[side].dedup();
    }
    if !touches_base[0] {
        return Err(CircleError::NoContact("first"));
    }
    if !touches_base[1] {
        return Err(CircleError::NoContact("second"));
    }

    for i in 0..circles.len() {
        for j in (i + 1)..circles.len() {
            let (c0, r0) = circles[i];
            let (c1, r1) = circles[j];
            for p in geom::circle_circle_intersections(c0, r0, c1, r1, cut_tol) {
                merge_node(&mut nodes, p, merge_tol);
            }
        }
    }
    // boundary crossings cut the arcs exactly where they leave the domain
    let mut boundaries: Vec<(P2, f64)> =
        dom.disks.iter().map(|d| (d.center, d.radius)).collect();
    if let Some(o) = &dom.outer {
        boundaries.push((o.center, o.radius));
    }
    for &(c, r) in &circles {
        for &(bc, br) in &boundaries {
            for p in geom::circle_circle_intersections(c, r, bc, br, cut_tol) {
                merge_node(&mut nodes, p, merge_tol);
            }
        }
    }

    let mut adj: Vec<Vec<Arc>> = vec![Vec::new(); nodes.len()];
    for (ci, &(c, r)) in circles.iter().enumerate() {
        let mut on: Vec<(f64, usize)> = nodes
            .iter()
            .enumerate()
            .filter(|(_, p)| (geom::dist(**p, c) - r).abs() <= memb_tol)
            .map(|(k, p)| ((p[1] - c[1]).atan2(p[0] - c[0]), k))
            .collect();
        if on.len() < 2 {
            continue;
        }
        on.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for idx in 0..on.len() {
            let (a0, na) = on[idx];
            let (raw, nb) = on[(idx + 1) % on.len()];
            let a1 = if idx + 1 == on.len() { raw + TAU } else { raw };
            let span = a1 - a0;
            if span <= 1e-12 {
                continue;
            }
            let mid_ang = a0 + span / 2.0;
            let mid = [c[0] + r * mid_ang.cos(), c[1] + r * mid_ang.sin()];
            if !dom.contains(mid) {
                continue;
            }
            let len = r * span;
            adj[na].push(Arc { to: nb, len, circle: ci, a0, a1 });
            adj[nb].push(Arc { to: na, len, circle: ci, a0: a1, a1: a0 });
        }
    }

    // shortest route from any first-side contact to any second-side contact
    let n = nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<(usize, Arc)>> = vec![None; n];
    let mut heap = std::collections::BinaryHeap::new();
    for &s in &contact[0] {
        dist[s] = 0.0;
        heap.push(QueueEntry { cost: 0.0, node: s as u32 });
    }
    while let Some(QueueEntry { cost, node }) = heap.pop() {
        let u = node as usize;
        if cost > dist[u] {
            continue;
        }
        for &arc in &adj[u] {
            let next = cost + arc.len;
            if next < dist[arc.to] {
                dist[arc.to] = next;
                prev[arc.to] = Some((u, arc));
                heap.push(QueueEntry { cost: next, node: arc.to as u32 });
            }
        }
    }
    let target = contact[1]
        .iter()
        .copied()
        .filter(|&t| dist[t].is_finite())
        .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))
        .ok_or(CircleError::ArrangementDisconnected)?;

    let mut chain = Vec::new();
    let mut cursor = target;
    while let Some((from, arc)) = prev[cursor] {
        chain.push(arc);
        cursor = from;
    }
    chain.reverse();
    let mut junctions = vec![nodes[cursor]];
    let mut vertices = vec![nodes[cursor]];
    for arc in &chain {
        let (c, r) = circles[arc.circle];
        let span = arc.a1 - arc.a0;
        let steps = ((span.abs() / (PI / 36.0)).ceil() as usize).max(1);
        for k in 1..steps {
            let ang = arc.a0 + span * k as f64 / steps as f64;
            vertices.push([c[0] + r * ang.cos(), c[1] + r * ang.sin()]);
        }
        vertices.push(nodes[arc.to]);
        junctions.push(nodes[arc.to]);
    }
    debug_assert!({
        let mut ids = junctions.clone();
        ids.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ids.windows(2).all(|w| geom::dist(w[0], w[1]) > merge_tol)
            || junctions.len() == 1
    });
    Ok(ConnectorPath { junctions, vertices, length: dist[target] })
}

// ─── Discretization ───

/// Samples the domain on an `n x n` grid over the square `center ± half`,
/// keeping cells whose centers lie inside; cells within one king move are
/// adjacent, and the cell side feeds the graph's cell geometry.
pub fn discretize(dom: &CircleDomain, center: P2, half: f64, n: usize) -> DomainGraph {
    let h = 2.0 * half / n as f64;
    let mut ids = vec![usize::MAX; n * n];
    let mut positions = Vec::new();
    for gy in 0..n {
        for gx in 0..n {
            let p = [
                center[0] - half + (gx as f64 + 0.5) * h,
                center[1] - half + (gy as f64 + 0.5) * h,
            ];
            if dom.contains(p) {
                ids[gy * n + gx] = positions.len();
                positions.push(p);
            }
        }
    }
    let mut edges = Vec::new();
    // east, south-west, south, and south-east reach every pair once
    let steps: [(i64, i64); 4] = [(1, 0), (-1, 1), (0, 1), (1, 1)];
    for gy in 0..n {
        for gx in 0..n {
            let a = ids[gy * n + gx];
            if a == usize::MAX {
                continue;
            }
            for (dx, dy) in steps {
                let (qx, qy) = (gx as i64 + dx, gy as i64 + dy);
                if qx < 0 || qy < 0 || qx >= n as i64 || qy >= n as i64 {
                    continue;
                }
                let b = ids[qy as usize * n + qx as usize];
                if b != usize::MAX {
                    edges.push((a, b));
                }
            }
        }
    }
    let areas = vec![h * h; positions.len()];
    DomainGraph::new(positions, areas, &edges)
        .expect("grid cells have positive area and distinct centers")
        .with_cell(h)
}

fn seg_foot(p: P2, a: P2, b: P2) -> P2 {
    let ab = geom::sub(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return a;
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    geom::add(a, geom::scale(ab, t))
}

fn seg_dist(p: P2, a: P2, b: P2) -> f64 {
    geom::dist(p, seg_foot(p, a, b))
}

fn polyline_dist(p: P2, poly: &[P2]) -> f64 {
    poly.windows(2)
        .map(|s| seg_dist(p, s[0], s[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Grid nodes within `within` of the polyline.
pub fn near_polyline(graph: &DomainGraph, poly: &[P2], within: f64) -> Vec<usize> {
    (0..graph.len())
        .filter(|&i| polyline_dist(graph.position(i), poly) <= within)
        .collect()
}

/// Cells hugging each of two disks, split by whichever boundary is nearer
/// so the sides stay disjoint even when the disks almost touch.
pub fn facing_collars(
    graph: &DomainGraph,
    a: &Disk,
    b: &Disk,
    depth: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut side_a = Vec::new();
    let mut side_b = Vec::new();
    for i in 0..graph.len() {
        let p = graph.position(i);
        let ga = geom::dist(p, a.center) - a.radius;
        let gb = geom::dist(p, b.center) - b.radius;
        if ga <= depth && ga <= gb {
            side_a.push(i);
        } else if gb <= depth {
            side_b.push(i);
        }
    }
    (side_a, side_b)
}

fn polyline_diameter(poly: &[P2]) -> f64 {
    let mut best = 0.0f64;
    for (i, &p) in poly.iter().enumerate() {
        for &q in &poly[i + 1..] {
            best = best.max(geom::dist(p, q));
        }
    }
    best
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let orient = |p: P2, q: P2, r: P2| {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    };
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Minimum distance between two polylines with the witness point pair.
fn polyline_gap(e1: &[P2], e2: &[P2]) -> (f64, P2, P2) {
    let mut best = (f64::INFINITY, e1[0], e2[0]);
    for s in e1.windows(2) {
        for t in e2.windows(2) {
            if segments_cross(s[0], s[1], t[0], t[1]) {
                return (0.0, s[0], t[0]);
            }
            for &(p, qa, qb, p_on_first) in &[
                (s[0], t[0], t[1], true),
                (s[1], t[0], t[1], true),
                (t[0], s[0], s[1], false),
                (t[1], s[0], s[1], false),
            ] {
                let foot = seg_foot(p, qa, qb);
                let d = geom::dist(p, foot);
                if d < best.0 {
                    best = if p_on_first { (d, p, foot) } else { (d, foot, p) };
                }
            }
        }
    }
    best
}

// ─── Continuum joining estimate ───

/// Finds a center and radius whose concentric circles, over the whole base
/// factor range, all meet both continua.  Since each polyline is connected,
/// its distance-to-center range is an interval, so it meets every circle of
/// radius between its minimum and maximum distances.
fn find_base_circle(e1: &[P2], e2: &[P2], gap: f64, w1: P2, w2: P2) -> Option<Disk> {
    let sqrt3 = 3f64.sqrt();
    let mid = geom::scale(geom::add(w1, w2), 0.5);
    let centroid = |poly: &[P2]| {
        let mut c = [0.0, 0.0];
        for p in poly {
            c = geom::add(c, *p);
        }
        geom::scale(c, 1.0 / poly.len() as f64)
    };
    let (c1, c2) = (centroid(e1), centroid(e2));
    let mut candidates = vec![mid, w1, w2, geom::scale(geom::add(c1, c2), 0.5)];
    let s = gap.max(1e-9 * polyline_diameter(e1).max(1.0));
    for dx in -2i32..=2 {
        for dy in -2i32..=2 {
            candidates
                .push([mid[0] + 0.5 * s * dx as f64, mid[1] + 0.5 * s * dy as f64]);
        }
    }
    for z0 in candidates {
        let near1 = polyline_dist(z0, e1);
        let near2 = polyline_dist(z0, e2);
        let far1 = e1.iter().map(|&p| geom::dist(z0, p)).fold(0.0, f64::max);
        let far2 = e2.iter().map(|&p| geom::dist(z0, p)).fold(0.0, f64::max);
        let r_lo = near1.max(near2);
        let r_hi = far1.min(far2) / sqrt3;
        if r_hi > 0.0 && r_lo <= r_hi {
            let floor = r_lo.max(1e-9 * r_hi);
            return Some(Disk { center: z0, radius: (floor * r_hi).sqrt() });
        }
    }
    None
}

/// Verifies the joining floor: for two disjoint continua whose diameters
/// are at least their separation, the connecting modulus inside the domain
/// must exceed [`joining_floor`].
///
/// The hypothesis failing is not an error: the report comes back skipped.
/// The modulus is measured on an `grid_n x grid_n` sampling of the domain
/// around the configuration, with the continua mapped to the nearby cells.
pub fn key_estimate_check(
    dom: &CircleDomain,
    e1: &[P2],
    e2: &[P2],
    alpha: f64,
    grid_n: usize,
) -> Result<VerificationReport, CircleError> {
    if e1.len() < 2 || e2.len() < 2 {
        return Err(CircleError::DegenerateContinuum);
    }
    let (gap, w1, w2) = polyline_gap(e1, e2);
    if gap <= 0.0 {
        return Err(CircleError::ContinuaOverlap);
    }
    let d1 = polyline_diameter(e1);
    let d2 = polyline_diameter(e2);
    let aspect = d1.min(d2) / gap;
    if aspect < 1.0 {
        return Ok(VerificationReport::skipped(
            "continuum_joining_floor",
            format!("diameter-to-separation ratio {aspect:.3} is below one"),
        ));
    }
    let base =
        find_base_circle(e1, e2, gap, w1, w2).ok_or(CircleError::BaseCircleNotFound)?;

    let sqrt3 = 3f64.sqrt();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let reach = sqrt3 * base.radius;
    for p in e1
        .iter()
        .chain(e2.iter())
        .copied()
        .chain([
            geom::add(base.center, [reach, reach]),
            geom::sub(base.center, [reach, reach]),
        ])
    {
        for axis in 0..2 {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let half = 0.575 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let graph = discretize(dom, center, half, grid_n);
    let h = 2.0 * half / grid_n as f64;
    let side_a = near_polyline(&graph, e1, 0.75 * h);
    let side_b = near_polyline(&graph, e2, 0.75 * h);
    if side_a.is_empty() {
        return Err(CircleError::SideNotResolved("first continuum"));
    }
    if side_b.is_empty() {
        return Err(CircleError::SideNotResolved("second continuum"));
    }
    let sol = modulus_solve(&graph, &PathFamily::connecting(side_a, side_b), 0.02)?;
    let floor = joining_floor(alpha, dom.disk_count());
    let mut report = VerificationReport::check(
        "continuum_joining_floor",
        floor,
        sol.modulus,
        json!({
            "base_center": base.center,
            "base_radius": base.radius,
            "separation": gap,
            "diameters": [d1, d2],
        }),
    );
    report = report
        .with_constant("alpha", alpha)
        .with_constant("grid", grid_n as f64);
    Ok(report)
}

// ─── Pair separation audit ───

/// Audits every disk pair against the modulus budget of the generating
/// space.
///
/// For each pair the connecting modulus is measured on a local grid and
/// compared against `modulus_budget` (see [`pair_modulus_budget`]).  When a
/// pair sits closer than the derived separation scale, the audit
/// additionally counts the dyadic sphere families around the gap midpoint
/// that no third disk interferes with — a sphere family is interfering-free
/// exactly when no other disk meets any sphere of its radius band — and
/// reports the modulus these clean families force, exhibiting the
/// contradiction with the budget.
pub fn separation_check(
    dom: &CircleDomain,
    modulus_budget: f64,
    grid_n: usize,
) -> Result<Vec<VerificationReport>, CircleError> {
    let m = dom.disk_count();
    let mut out = Vec::new();
    if m < 2 {
        return Ok(out);
    }
    // the separation scale and the dyadic family count share the budget's
    // exponent: budget = pi C / 2 determines C
    let packed = 2.0 * modulus_budget / PI;
    let dyadic_term = PI * PI * packed / (8.0 * 2f64.ln());
    let alpha = 2f64.powf(-2.0 - 2.0 * m as f64 - dyadic_term);
    let families = (2.0 * m as f64 + dyadic_term).floor() as usize;
    for i in 0..m {
        for j in (i + 1)..m {
            let delta = dom.relative_distance(i, j)?;
            let (di, dj) = (dom.disks[i], dom.disks[j]);
            let d = geom::dist(di.center, dj.center);
            let center = geom::scale(geom::add(di.center, dj.center), 0.5);
            let half = 0.5 * d + 2.5 * di.radius.max(dj.radius);
            let graph = discretize(dom, center, half, grid_n);
            let h = 2.0 * half / grid_n as f64;
            let (side_a, side_b) = facing_collars(&graph, &di, &dj, 1.6 * h);
            if side_a.is_empty() || side_b.is_empty() {
                return Err(CircleError::SideNotResolved("disk collar"));
            }
            let sol =
                modulus_solve(&graph, &PathFamily::connecting(side_a, side_b), 0.02)?;
            let mut report = VerificationReport::check(
                "disk_pair_modulus_budget",
                sol.modulus,
                modulus_budget,
                json!({"pair": [i, j]}),
            )
            .with_constant("relative_distance", delta)
            .with_constant("alpha", alpha);
            if delta < alpha {
                report = audit_close_pair(
                    dom, report, i, j, families, m, modulus_budget,
                );
            }
            out.push(report);
        }
    }
    Ok(out)
}

/// Counts the clean dyadic sphere families around the midpoint of a closer-
/// than-alpha pair and attaches the forced lower bound to the report.
fn audit_close_pair(
    dom: &CircleDomain,
    report: VerificationReport,
    i: usize,
    j: usize,
    families: usize,
    m: usize,
    modulus_budget: f64,
) -> VerificationReport {
    // measure from the smaller disk, as the midpoint construction does
    let (i, j) = if dom.disks[i].radius <= dom.disks[j].radius {
        (i, j)
    } else {
        (j, i)
    };
    let (di, dj) = (dom.disks[i], dom.disks[j]);
    let d = geom::dist(di.center, dj.center);
    let s = d - di.radius - dj.radius;
    let dir = geom::scale(geom::sub(dj.center, di.center), 1.0 / d);
    let w = geom::add(di.center, geom::scale(dir, di.radius + s / 2.0));
    // the families only stay local to the gap when their largest radius is
    // well under the smaller disk; otherwise the count proves nothing
    if 2f64.powi(families as i32 + 2) * s > di.radius {
        return report
            .with_note("pair is close, but the dyadic families outgrow the disks");
    }
    let clean = (1..=families)
        .filter(|&n| {
            let band = (2f64.powi(n as i32 - 1) * s, 2f64.powi(n as i32) * s);
            let disks_clear = dom.disks.iter().enumerate().all(|(k, dk)| {
                if k == i || k == j {
                    return true;
                }
                let c = geom::dist(dk.center, w);
                // disk k meets a sphere of radius u iff |c - u| <= r_k
                c - dk.radius >= band.1 || c + dk.radius <= band.0
            });
            let outer_clear = dom
                .outer
                .as_ref()
                .is_none_or(|o| geom::dist(w, o.center) + band.1 < o.radius);
            disks_clear && outer_clear
        })
        .count();
    let required = (families + 2).saturating_sub(2 * m);
    let forced = clean as f64 * 2.0 * 2f64.ln() / PI;
    let mut report = report
        .with_constant("dyadic_families", families as f64)
        .with_constant("clean_families", clean as f64)
        .with_constant("required_clean", required as f64)
        .with_constant("forced_lower_bound", forced);
    if clean >= required && forced > modulus_budget {
        report = report.with_note(
            "pair is closer than alpha: the clean dyadic sphere families force a \
             connecting modulus above the budget",
        );
    }
    report
}

// ─── Tests ───

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Status;
    use approx::assert_relative_eq;

    fn unit_disks(centers: &[[f64; 2]]) -> CircleDomain {
        let disks = centers
            .iter()
            .map(|&c| Disk { center: c, radius: 1.0 })
            .collect();
        CircleDomain::new(None, disks).unwrap()
    }

    #[test]
    fn relative_distance_of_unit_disks() {
        let dom = unit_disks(&[[0.0, 0.0], [4.0, 0.0]]);
        assert_relative_eq!(dom.relative_distance(0, 1).unwrap(), 2.0);
        assert_relative_eq!(dom.relative_distance(1, 0).unwrap(), 2.0);
    }

    #[test]
    fn relative_distance_uses_smaller_radius() {
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [6.0, 0.0], radius: 3.0 },
            ],
        )
        .unwrap();
        assert_relative_eq!(dom.relative_distance(0, 1).unwrap(), 2.0);
        assert!(matches!(
            dom.relative_distance(1, 1),
            Err(CircleError::SamePair)
        ));
    }

    #[test]
    fn tangent_disks_are_rejected() {
        let out = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [2.0, 0.0], radius: 1.0 },
            ],
        );
        assert!(matches!(out, Err(CircleError::DisksCollide(0, 1))));
        let out = CircleDomain::new(
            Some(Disk { center: [0.0, 0.0], radius: 2.0 }),
            vec![Disk { center: [1.5, 0.0], radius: 0.5 }],
        );
        assert!(matches!(out, Err(CircleError::OutsideOuter(0))));
    }

    #[test]
    fn point_components_are_rejected() {
        let out = CircleDomain::new(
            None,
            vec![Disk { center: [0.0, 0.0], radius: 0.0 }],
        );
        assert!(matches!(out, Err(CircleError::NonpositiveRadius(0))));
    }

    #[test]
    fn alpha_matches_the_closed_form() {
        let alpha = alpha_constant(1.0, 1.0, 1.0, 2);
        let expect = 2f64.powf(-6.0 - PI * PI / (8.0 * 2f64.ln()));
        assert_relative_eq!(alpha, expect, max_relative = 1e-15);
        assert!((alpha / 4.55e-3 - 1.0).abs() < 0.01, "alpha = {alpha}");
    }

    #[test]
    fn alpha_is_monotone_and_quarters_per_disk() {
        let base = alpha_constant(1.0, 1.0, 1.0, 2);
        assert!(alpha_constant(1.0, 2.0, 1.0, 2) < base);
        assert!(alpha_constant(2.0, 1.0, 1.0, 2) < base);
        assert_relative_eq!(
            alpha_constant(1.0, 1.0, 1.0, 3),
            base / 4.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn beta_and_floors_are_consistent() {
        assert_relative_eq!(beta_constant(1.0, 1), 1.0 / (20.0 * PI));
        let alpha = alpha_constant(1.0, 1.0, 1.0, 2);
        let beta = beta_constant(alpha, 2);
        assert!((beta / 8.2e-9 - 1.0).abs() < 0.02, "beta = {beta}");
        assert_relative_eq!(
            beta * 2.0 * PI,
            free_radius_floor(alpha, 2),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            joining_floor(alpha, 2),
            beta / 16.0,
            max_relative = 1e-15
        );
        // the zero-disk plane still carries a positive floor
        assert_relative_eq!(joining_floor(alpha, 0), 1.0 / (8.0 * PI));
    }

    #[test]
    fn isolated_disk_is_fully_free() {
        let dom = unit_disks(&[[0.0, 0.0]]);
        let free = free_radii(&dom, 0, 0.25).unwrap();
        assert_eq!(free.intervals, vec![(1.0, 1.25)]);
        assert_relative_eq!(free.measure, 0.25);
        assert!(free.contains(1.1));
        assert!(!free.contains(1.3));
    }

    #[test]
    fn obstruction_cuts_its_exact_interval() {
        // obstructing disk at distance 1.3 with radius 0.1 blocks factors
        // [1.2, 1.4] of a unit disk
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [1.3, 0.0], radius: 0.1 },
            ],
        )
        .unwrap();
        let free = free_radii(&dom, 0, 1.0).unwrap();
        assert_eq!(free.intervals.len(), 2);
        assert_relative_eq!(free.intervals[0].0, 1.0);
        assert_relative_eq!(free.intervals[0].1, 1.2, max_relative = 1e-12);
        assert_relative_eq!(free.intervals[1].0, 1.4, max_relative = 1e-12);
        assert_relative_eq!(free.intervals[1].1, 2.0);
        assert_relative_eq!(free.measure, 0.8, max_relative = 1e-12);
    }

    #[test]
    fn outer_boundary_cuts_a_tail() {
        let dom = CircleDomain::new(
            Some(Disk { center: [0.0, 0.0], radius: 1.8 }),
            vec![Disk { center: [0.0, 0.0], radius: 1.0 }],
        )
        .unwrap();
        let free = free_radii(&dom, 0, 1.0).unwrap();
        assert_eq!(free.intervals, vec![(1.0, 1.8)]);
        assert_relative_eq!(free.measure, 0.8);
    }

    #[test]
    fn sampling_lands_inside_the_set() {
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [1.3, 0.0], radius: 0.1 },
            ],
        )
        .unwrap();
        let free = free_radii(&dom, 0, 1.0).unwrap();
        for k in 0..32 {
            let t = free.sample(k as f64 / 32.0).unwrap();
            assert!(free.contains(t), "t = {t}");
        }
        let empty = FreeRadiusSet { disk: 0, intervals: vec![], measure: 0.0 };
        assert!(empty.sample(0.5).is_none());
    }

    #[test]
    fn separated_disks_keep_the_free_measure_floor() {
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [2.6, 0.0], radius: 0.8 },
                Disk { center: [-0.4, 2.9], radius: 1.1 },
            ],
        )
        .unwrap();
        let m = dom.disk_count();
        let alpha = alpha_constant(1.0, 1.0, 1.0, m);
        assert!(dom.min_relative_distance().unwrap() >= alpha);
        for i in 0..m {
            let free = free_radii(&dom, i, alpha).unwrap();
            assert!(
                free.measure >= free_radius_floor(alpha, m),
                "disk {i}: measure {} under floor {}",
                free.measure,
                free_radius_floor(alpha, m)
            );
        }
    }

    #[test]
    fn geometry_is_similarity_invariant() {
        let dom = CircleDomain::new(
            Some(Disk { center: [0.3, -0.1], radius: 6.0 }),
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [2.9, 0.4], radius: 0.7 },
                Disk { center: [-1.2, 2.4], radius: 0.9 },
            ],
        )
        .unwrap();
        let scaled = dom.scaled(1.7);
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                assert_relative_eq!(
                    dom.relative_distance(i, j).unwrap(),
                    scaled.relative_distance(i, j).unwrap(),
                    max_relative = 1e-12
                );
            }
            let f0 = free_radii(&dom, i, 0.5).unwrap();
            let f1 = free_radii(&scaled, i, 0.5).unwrap();
            assert_eq!(f0.intervals.len(), f1.intervals.len());
            for (a, b) in f0.intervals.iter().zip(&f1.intervals) {
                assert_relative_eq!(a.0, b.0, max_relative = 1e-12);
                assert_relative_eq!(a.1, b.1, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn bare_circle_route_is_an_arc() {
        let dom = CircleDomain::new(None, vec![]).unwrap();
        let base = Disk { center: [0.0, 0.0], radius: 1.0 };
        let e1 = [[0.9, 0.0], [1.6, 0.0]];
        let e2 = [[0.0, 0.9], [0.0, 1.6]];
        let path = connector_path(&dom, base, &[1.3], &e1, &e2).unwrap();
        assert_eq!(path.junctions.len(), 2);
        assert_relative_eq!(path.length, 1.3 * PI / 2.0, max_relative = 1e-9);
        for v in &path.vertices {
            assert_relative_eq!(geom::norm(*v), 1.3, max_relative = 1e-9);
        }
    }

    #[test]
    fn blocked_route_detours_along_the_free_circle() {
        // the short way between the contacts crosses the disk, so the route
        // must leave the base circle and round the obstruction
        let dom = CircleDomain::new(
            None,
            vec![Disk { center: [1.3, 0.0], radius: 0.25 }],
        )
        .unwrap();
        let base = Disk { center: [0.0, 0.0], radius: 1.0 };
        let ang = 40f64.to_radians();
        let e1 = [
            [0.9 * ang.cos(), 0.9 * ang.sin()],
            [1.5 * ang.cos(), 1.5 * ang.sin()],
        ];
        let e2 = [
            [0.9 * ang.cos(), -0.9 * ang.sin()],
            [1.5 * ang.cos(), -1.5 * ang.sin()],
        ];
        let path = connector_path(&dom, base, &[1.2, 1.4], &e1, &e2).unwrap();
        assert_eq!(path.junctions.len(), 4);
        assert!(
            (1.7..2.0).contains(&path.length),
            "detour length {}",
            path.length
        );
        let on_free_circle = path
            .junctions
            .iter()
            .filter(|&&p| (geom::dist(p, [1.3, 0.0]) - 0.35).abs() < 1e-6)
            .count();
        assert_eq!(on_free_circle, 2);
        for v in &path.vertices {
            assert!(dom.contains(*v), "vertex {v:?} left the domain");
        }
    }

    #[test]
    fn random_domain_routes_stay_injective_and_inside() {
        let dom = sample_domain(7, 3);
        let alpha = alpha_constant(1.0, 1.0, 1.0, 3);
        let base = Disk { center: [0.0, 0.0], radius: 0.8 };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut successes = 0;
        for _ in 0..12 {
            let mut factors = vec![rng.random_range(1.05..1.7)];
            for i in 0..3 {
                let free = free_radii(&dom, i, alpha).unwrap();
                factors.push(free.sample(rng.random_range(0.0..1.0)).unwrap());
            }
            // radial probes that avoid every disk so they lie in the domain
            let spoke = |rng: &mut ChaCha8Rng| loop {
                let theta = rng.random_range(0.0..TAU);
                let dir = [theta.cos(), theta.sin()];
                let seg = [
                    geom::scale(dir, 0.9 * base.radius),
                    geom::scale(dir, 1.8 * base.radius),
                ];
                if dom
                    .disks
                    .iter()
                    .all(|d| seg_dist(d.center, seg[0], seg[1]) > d.radius)
                {
                    return seg;
                }
            };
            let e1 = spoke(&mut rng);
            let e2 = spoke(&mut rng);
            if geom::dist(e1[0], e2[0]) < 1e-3 {
                continue; // identical spokes carry no routing content
            }
            let path = connector_path(&dom, base, &factors, &e1, &e2).unwrap();
            for (k, p) in path.junctions.iter().enumerate() {
                for q in &path.junctions[k + 1..] {
                    assert!(geom::dist(*p, *q) > 1e-9, "junction repeated");
                }
            }
            for v in &path.vertices {
                assert!(dom.contains(*v));
            }
            successes += 1;
        }
        assert!(successes >= 10, "only {successes} routes sampled");
    }

    #[test]
    fn missing_contact_is_reported() {
        let dom = CircleDomain::new(None, vec![]).unwrap();
        let base = Disk { center: [0.0, 0.0], radius: 1.0 };
        let far = [[5.0, 5.0], [6.0, 5.0]];
        let e2 = [[0.9, 0.0], [1.6, 0.0]];
        let out = connector_path(&dom, base, &[1.3], &far, &e2);
        assert!(matches!(out, Err(CircleError::NoContact("first"))));
        let out = connector_path(&dom, base, &[2.0], &e2, &e2);
        assert!(matches!(out, Err(CircleError::BaseFactorRange(_))));
    }

    #[test]
    fn occupied_factor_is_rejected() {
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [0.0, 0.0], radius: 1.0 },
                Disk { center: [2.5, 0.0], radius: 1.0 },
            ],
        )
        .unwrap();
        // factor 1.6 pushes the first circle into the second disk
        let base = Disk { center: [-3.0, 0.0], radius: 1.0 };
        let e = [[-4.3, 0.0], [-3.1, 0.0]];
        let out = connector_path(&dom, base, &[1.2, 1.6, 1.1], &e, &e);
        assert!(matches!(
            out,
            Err(CircleError::FactorNotFree { disk: 0, factor: _ })
        ));
    }

    #[test]
    fn parallel_segments_pass_the_joining_floor() {
        let dom = CircleDomain::new(None, vec![]).unwrap();
        let e1 = [[0.0, 0.0], [1.0, 0.0]];
        let e2 = [[0.0, 0.4], [1.0, 0.4]];
        let report = key_estimate_check(&dom, &e1, &e2, 1.0, 48).unwrap();
        assert_eq!(report.status, Status::Pass);
        // long parallel segments carry roughly length-over-gap worth of
        // modulus, far above the universal floor
        assert!(report.rhs > 2.0, "measured modulus {}", report.rhs);
        assert_relative_eq!(report.lhs, 1.0 / (8.0 * PI));
    }

    #[test]
    fn joining_floor_with_bystander_disks() {
        let dom = CircleDomain::new(
            None,
            vec![
                Disk { center: [-0.5, 1.2], radius: 0.3 },
                Disk { center: [0.5, 1.2], radius: 0.3 },
            ],
        )
        .unwrap();
        let alpha = alpha_constant(1.0, 1.0, 1.0, 2);
        let e1 = [[0.0, 0.0], [1.0, 0.0]];
        let e2 = [[0.0, 0.4], [1.0, 0.4]];
        let report = key_estimate_check(&dom, &e1, &e2, alpha, 48).unwrap();
        assert_eq!(report.status, Status::Pass);
        assert!(report.margin > 0.0);
    }

    #[test]
    fn thin_continuum_skips_the_joining_check() {
        let dom = CircleDomain::new(None, vec![]).unwrap();
        let e1 = [[0.0, 0.0], [1.0, 0.0]];
        let tiny = [[0.45, 0.4], [0.55, 0.4]];
        let report = key_estimate_check(&dom, &e1, &tiny, 1.0, 32).unwrap();
        assert_eq!(report.status, Status::Skipped);
    }

    #[test]
    fn far_disk_pair_stays_within_budget() {
        // a bounded domain caps the connecting modulus, so constants of a
        // moderately distorted space leave a comfortable budget
        let dom = CircleDomain::new(
            Some(Disk { center: [0.0, 0.0], radius: 4.5 }),
            vec![
                Disk { center: [-2.0, 0.0], radius: 1.0 },
                Disk { center: [2.0, 0.0], radius: 1.0 },
            ],
        )
        .unwrap();
        let budget = pair_modulus_budget(1.5, 1.3, 1.0);
        let reports = separation_check(&dom, budget, 64).unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.status, Status::Pass, "modulus {} vs budget {}", r.lhs, r.rhs);
        // far disks leave no room for a close-pair audit
        assert!(!r.constants.contains_key("clean_families"));
    }

    #[test]
    fn nearly_tangent_pair_exhibits_the_contradiction() {
        let dom = unit_disks(&[[0.0, 0.0], [2.003, 0.0]]);
        let budget = pair_modulus_budget(1.0, 1.0, 1.0);
        let reports = separation_check(&dom, budget, 48).unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        assert_eq!(r.status, Status::Fail, "modulus {} vs budget {}", r.lhs, r.rhs);
        assert!(r.constants["relative_distance"] < r.constants["alpha"]);
        assert!(r.constants["clean_families"] >= r.constants["required_clean"]);
        assert!(r.constants["forced_lower_bound"] > budget);
        assert!(r.note.as_deref().unwrap_or("").contains("force"));
    }

    #[test]
    fn domain_json_round_trips() {
        let text = r#"{"outer": {"z": [0.0, 0.0], "r": 5.0},
                       "disks": [{"z": [1.0, -0.5], "r": 0.75}]}"#;
        let dom: CircleDomain = serde_json::from_str(text).unwrap();
        dom.validate().unwrap();
        assert_eq!(dom.disk_count(), 1);
        assert_relative_eq!(dom.disks[0].radius, 0.75);
        let back = serde_json::to_string(&dom).unwrap();
        let again: CircleDomain = serde_json::from_str(&back).unwrap();
        assert_relative_eq!(again.outer.unwrap().radius, 5.0);
    }

    #[test]
    fn discretization_covers_the_domain() {
        let dom = CircleDomain::new(
            Some(Disk { center: [0.0, 0.0], radius: 1.0 }),
            vec![Disk { center: [0.0, 0.0], radius: 0.4 }],
        )
        .unwrap();
        let graph = discretize(&dom, [0.0, 0.0], 1.0, 40);
        let h = 2.0 / 40.0;
        let expected = (PI * (1.0 - 0.4 * 0.4) / (h * h)) as usize;
        assert!(
            graph.len() > expected * 85 / 100 && graph.len() < expected * 115 / 100,
            "{} cells vs estimate {expected}",
            graph.len()
        );
        for i in 0..graph.len() {
            assert!(dom.contains(graph.position(i)));
        }
    }
}

//! Discrete conformal modulus of path families on a proximity graph.
//!
//! Densities live on nodes against their area weights; a path's ρ-length is
//! the sum over its segments of the mean endpoint density times the segment
//! length, which matches the continuum line integral for piecewise-constant
//! densities.  The solver alternates exact shortest-path separation with a
//! nonnegative active-set quadratic program on the working constraint set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use thiserror::Error;

use crate::geom::{circle_arc_length_in_box, dist as point_dist, P2};
use crate::qp;
use crate::space::MetricMeasureSpace;

#[derive(Debug, Error)]
pub enum ModulusError {
    #[error("family side {0} is empty")]
    EmptySide(&'static str),
    #[error("sides share node {0}")]
    SidesOverlap(usize),
    #[error("node {0} is outside the family's domain")]
    OutsideDomain(usize),
    #[error("tolerance {0} outside (0, 0.1]")]
    BadTolerance(f64),
    #[error("explicit path {0} has fewer than two nodes")]
    PathTooShort(usize),
    #[error("explicit path {0} has zero total length")]
    ZeroLengthPath(usize),
    #[error("curve {0} is not closed")]
    OpenCurve(usize),
    #[error("curve {0} revisits a node before closing")]
    CurveSelfIntersects(usize),
    #[error("curve {0} has fewer than three distinct nodes")]
    CurveTooShort(usize),
    #[error("curves {0} and {1} intersect")]
    CurvesOverlap(usize, usize),
    #[error("curve {0} crosses no cell of the domain")]
    CurveOutsideDomain(usize),
    #[error("graph carries no cell geometry; build it from a sampled space")]
    NeedsCellGeometry,
    #[error("density has {got} entries for a graph of {expect} nodes")]
    DensityLengthMismatch { got: usize, expect: usize },
    #[error("density is negative at node {0}")]
    NegativeDensity(usize),
    #[error("node map is not a bijection between the two graphs")]
    MapNotBijective,
    #[error("edge ({0}, {1}) has nonpositive length")]
    ZeroLengthEdge(usize, usize),
    #[error("node {0} has nonpositive area")]
    BadArea(usize),
}

// ─── Domain graph ───

/// Sampled domain for modulus computations: node positions with area weights
/// (the measure behind the objective), proximity edges with lengths (the
/// measure behind line integrals), and a mask of nodes belonging to the
/// domain.  `cell` is the side of the square cell a node represents, used to
/// integrate geometric curves against the sampling.
#[derive(Debug, Clone)]
pub struct DomainGraph {
    positions: Vec<P2>,
    areas: Vec<f64>,
    adjacency: Vec<Vec<(usize, f64)>>,
    mask: Vec<bool>,
    cell: Option<f64>,
}

impl DomainGraph {
    /// Builds a graph from explicit positions, areas, and edge pairs; edge
    /// lengths are the Euclidean distances between endpoint positions.
    pub fn new(
        positions: Vec<P2>,
        areas: Vec<f64>,
        edges: &[(usize, usize)],
    ) -> Result<Self, ModulusError> {
        let n = positions.len();
        for (i, &a) in areas.iter().enumerate() {
            if !(a > 0.0) {
                return Err(ModulusError::BadArea(i));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in edges {
            let len = point_dist(positions[u], positions[v]);
            if !(len > 0.0) {
                return Err(ModulusError::ZeroLengthEdge(u, v));
            }
            if !adjacency[u].iter().any(|&(w, _)| w == v) {
                adjacency[u].push((v, len));
                adjacency[v].push((u, len));
            }
        }
        Ok(DomainGraph { positions, areas, adjacency, mask: vec![true; n], cell: None })
    }

    /// Builds the proximity graph of a sampled space: edges join samples at
    /// metric distance at most `reach`, with lengths taken from the space's
    /// metric; areas are the sample weights and cells the sampling pitch.
    pub fn from_space(space: &MetricMeasureSpace, reach: f64) -> Self {
        let n = space.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in space.neighbors_within(i, reach) {
                if j > i {
                    let len = space.dist(i, j);
                    if len > 0.0 {
                        adjacency[i].push((j, len));
                        adjacency[j].push((i, len));
                    }
                }
            }
        }
        DomainGraph {
            positions: space.points().to_vec(),
            areas: space.weights().to_vec(),
            adjacency,
            mask: vec![true; n],
            cell: Some(space.pitch()).filter(|p| *p > 0.0),
        }
    }

    /// Overrides the cell side used when integrating geometric curves.
    pub fn with_cell(mut self, side: f64) -> Self {
        self.cell = Some(side);
        self
    }

    /// Restricts the domain to the listed nodes (indices are preserved).
    pub fn restrict(&mut self, keep: &[usize]) {
        self.mask.iter_mut().for_each(|m| *m = false);
        for &i in keep {
            self.mask[i] = true;
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn position(&self, i: usize) -> P2 {
        self.positions[i]
    }

    pub fn area(&self, i: usize) -> f64 {
        self.areas[i]
    }

    pub fn in_domain(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    fn edge_length(&self, u: usize, v: usize) -> Option<f64> {
        self.adjacency[u].iter().find(|&&(w, _)| w == v).map(|&(_, l)| l)
    }
}

// ─── Families and densities ───

/// A family of paths: either everything connecting two node sets through the
/// domain, or an explicit list of node polylines.  Serializes to the side-set
/// JSON layout (`{"A": [...], "B": [...], "mask": [...]}`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    /// Optional sub-domain; intersected with the graph's own mask.
    #[serde(rename = "mask", skip_serializing_if = "Option::is_none", default)]
    pub domain: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyKind {
    Connecting {
        #[serde(rename = "A")]
        a: Vec<usize>,
        #[serde(rename = "B")]
        b: Vec<usize>,
    },
    /// Node polylines; segment lengths are Euclidean distances between the
    /// listed positions, so the nodes need not be graph-adjacent.
    Explicit { paths: Vec<Vec<usize>> },
}

impl PathFamily {
    pub fn connecting(a: Vec<usize>, b: Vec<usize>) -> Self {
        PathFamily { kind: FamilyKind::Connecting { a, b }, domain: None }
    }

    pub fn explicit(paths: Vec<Vec<usize>>) -> Self {
        PathFamily { kind: FamilyKind::Explicit { paths }, domain: None }
    }

    pub fn within(mut self, domain: Vec<usize>) -> Self {
        self.domain = Some(domain);
        self
    }
}

/// Nonnegative density per node; the objective integrates its square against
/// the node areas.
#[derive(Debug, Clone, Serialize)]
pub struct DensityField {
    pub rho: Vec<f64>,
}

impl DensityField {
    pub fn objective(&self, graph: &DomainGraph) -> f64 {
        self.rho
            .iter()
            .zip(&graph.areas)
            .map(|(r, a)| r * r * a)
            .sum()
    }
}

/// Output of [`modulus_solve`]: the working-set optimum (`modulus`, the lower
/// end of the sandwich), the objective of the returned feasible density
/// (`upper`), the density itself (scaled to be admissible), and the active
/// constraint paths.
#[derive(Debug, Clone)]
pub struct ModulusSolution {
    pub modulus: f64,
    pub lower: f64,
    pub upper: f64,
    pub density: DensityField,
    pub active: Vec<Vec<usize>>,
    pub converged: bool,
    pub iterations: usize,
}

// ─── Shortest-path separation ───

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    cost: f64,
    hops: u32,
    node: u32,
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Min-heap by cost, then hop count, then node id: zero-density plateaus
    // resolve to a deterministic fewest-hop, lowest-index path.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.hops.cmp(&self.hops))
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// ρ-shortest path between node sets inside `allowed`; returns (length, path).
fn separate(
    graph: &DomainGraph,
    rho: &[f64],
    a: &[usize],
    b: &[usize],
    allowed: &[bool],
) -> Option<(f64, Vec<usize>)> {
    let n = graph.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![u32::MAX; n];
    let mut prev = vec![usize::MAX; n];
    let mut is_target = vec![false; n];
    for &t in b {
        is_target[t] = true;
    }
    let mut heap = BinaryHeap::new();
    for &s in a {
        dist[s] = 0.0;
        hops[s] = 0;
        heap.push(HeapEntry { cost: 0.0, hops: 0, node: s as u32 });
    }
    while let Some(HeapEntry { cost, hops: h, node }) = heap.pop() {
        let u = node as usize;
        if cost > dist[u] || (cost == dist[u] && h > hops[u]) {
            continue;
        }
        if is_target[u] {
            let mut path = vec![u];
            let mut v = u;
            while prev[v] != usize::MAX {
                v = prev[v];
                path.push(v);
            }
            path.reverse();
            return Some((cost, path));
        }
        for &(v, len) in &graph.adjacency[u] {
            if !allowed[v] {
                continue;
            }
            let step = 0.5 * (rho[u] + rho[v]) * len;
            let cand = cost + step;
            if cand < dist[v] || (cand == dist[v] && h + 1 < hops[v]) {
                dist[v] = cand;
                hops[v] = h + 1;
                prev[v] = u;
                heap.push(HeapEntry { cost: cand, hops: h + 1, node: v as u32 });
            }
        }
    }
    None
}

// ─── Constraint rows ───

/// Node coefficients of a polyline: each node receives half the length of its
/// incident segments, so the row's dot with ρ is the path's ρ-length.
fn polyline_row(graph: &DomainGraph, path: &[usize], graph_lengths: bool) -> Vec<(usize, f64)> {
    let mut coef: BTreeMap<usize, f64> = BTreeMap::new();
    for pair in path.windows(2) {
        let (u, v) = (pair[0], pair[1]);
        let len = if graph_lengths {
            graph
                .edge_length(u, v)
                .unwrap_or_else(|| point_dist(graph.positions[u], graph.positions[v]))
        } else {
            point_dist(graph.positions[u], graph.positions[v])
        };
        *coef.entry(u).or_insert(0.0) += 0.5 * len;
        *coef.entry(v).or_insert(0.0) += 0.5 * len;
    }
    coef.into_iter().collect()
}

fn row_dot_rho(row: &[(usize, f64)], rho: &[f64]) -> f64 {
    row.iter().map(|&(i, c)| c * rho[i]).sum()
}

/// Area-weighted dot of two sparse rows: `sum_i a_i b_i / A_i`.
fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)], areas: &[f64]) -> f64 {
    let (mut i, mut j, mut acc) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1 / areas[a[i].0];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// Gram matrix `G_kl = sum_i c_k,i c_l,i / A_i` of the constraint rows.
fn gram(rows: &[Vec<(usize, f64)>], areas: &[f64]) -> Vec<f64> {
    let k = rows.len();
    let mut g = vec![0.0f64; k * k];
    for p in 0..k {
        for q in p..k {
            let acc = sparse_dot(&rows[p], &rows[q], areas);
            g[p * k + q] = acc;
            g[q * k + p] = acc;
        }
    }
    g
}

/// Extends a `k x k` Gram by one row/column for the appended constraint.
fn gram_extend(
    g: &[f64],
    rows: &[Vec<(usize, f64)>],
    new_row: &[(usize, f64)],
    areas: &[f64],
) -> Vec<f64> {
    let k = rows.len();
    let m = k + 1;
    let mut out = vec![0.0f64; m * m];
    for p in 0..k {
        for q in 0..k {
            out[p * m + q] = g[p * k + q];
        }
    }
    for (p, row) in rows.iter().enumerate() {
        let d = sparse_dot(row, new_row, areas);
        out[p * m + k] = d;
        out[k * m + p] = d;
    }
    out[k * m + k] = sparse_dot(new_row, new_row, areas);
    out
}

/// Density induced by constraint multipliers: `rho_i = sum_k l_k c_k,i / (2 A_i)`.
fn density_from(
    rows: &[Vec<(usize, f64)>],
    lambda: &[f64],
    graph: &DomainGraph,
) -> Vec<f64> {
    let mut rho = vec![0.0f64; graph.len()];
    for (row, &l) in rows.iter().zip(lambda) {
        if l > 0.0 {
            for &(i, c) in row {
                rho[i] += l * c;
            }
        }
    }
    for (r, a) in rho.iter_mut().zip(&graph.areas) {
        *r /= 2.0 * a;
    }
    rho
}

/// Solves the working-set QP (minimize Σρ²·area subject to the rows' ρ-length
/// being at least one) and returns the density and multipliers.
fn solve_working_set(rows: &[Vec<(usize, f64)>], graph: &DomainGraph) -> (Vec<f64>, Vec<f64>) {
    let k = rows.len();
    let g = gram(rows, &graph.areas);
    let lambda = qp::nonneg_solve(&g, k, &vec![2.0; k]);
    let rho = density_from(rows, &lambda, graph);
    (rho, lambda)
}

fn allowed_mask(graph: &DomainGraph, domain: &Option<Vec<usize>>) -> Vec<bool> {
    match domain {
        None => graph.mask.clone(),
        Some(keep) => {
            let mut m = vec![false; graph.len()];
            for &i in keep {
                if graph.mask[i] {
                    m[i] = true;
                }
            }
            m
        }
    }
}

fn validate_sides(
    a: &[usize],
    b: &[usize],
    allowed: &[bool],
) -> Result<(), ModulusError> {
    if a.is_empty() {
        return Err(ModulusError::EmptySide("A"));
    }
    if b.is_empty() {
        return Err(ModulusError::EmptySide("B"));
    }
    for &i in a.iter().chain(b) {
        if i >= allowed.len() || !allowed[i] {
            return Err(ModulusError::OutsideDomain(i));
        }
    }
    let in_a: Vec<bool> = {
        let mut m = vec![false; allowed.len()];
        for &i in a {
            m[i] = true;
        }
        m
    };
    if let Some(&shared) = b.iter().find(|&&i| in_a[i]) {
        return Err(ModulusError::SidesOverlap(shared));
    }
    Ok(())
}

fn reachable(graph: &DomainGraph, a: &[usize], b: &[usize], allowed: &[bool]) -> bool {
    let mut seen = vec![false; graph.len()];
    let mut queue: VecDeque<usize> = a.iter().copied().collect();
    for &s in a {
        seen[s] = true;
    }
    let mut is_b = vec![false; graph.len()];
    for &t in b {
        is_b[t] = true;
    }
    while let Some(u) = queue.pop_front() {
        if is_b[u] {
            return true;
        }
        for &(v, _) in &graph.adjacency[u] {
            if allowed[v] && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    false
}

// ─── Solver ───

/// Computes the modulus of a path family by constraint generation: repeatedly
/// find the ρ-shortest family path, add it to the working set while its
/// ρ-length falls short of admissibility, and re-solve the quadratic program.
///
/// Returns the working-set optimum as `modulus` (the lower end of the
/// sandwich); `density` is rescaled to be admissible, with objective `upper`.
/// Disconnected sides yield modulus zero with a zero density.  Hitting the
/// iteration cap returns the current bound pair with `converged = false`.
pub fn modulus_solve(
    graph: &DomainGraph,
    family: &PathFamily,
    tol: f64,
) -> Result<ModulusSolution, ModulusError> {
    if !(tol > 0.0 && tol <= 0.1) {
        return Err(ModulusError::BadTolerance(tol));
    }
    let allowed = allowed_mask(graph, &family.domain);
    // admissible once the shortest path reaches this: the sandwich gap
    // (1/len^2 - 1) then stays below tol
    let threshold = 1.0 / (1.0 + tol).sqrt();

    match &family.kind {
        FamilyKind::Explicit { paths } => {
            let mut rows = Vec::with_capacity(paths.len());
            for (idx, path) in paths.iter().enumerate() {
                if path.len() < 2 {
                    return Err(ModulusError::PathTooShort(idx));
                }
                for &i in path {
                    if i >= allowed.len() || !allowed[i] {
                        return Err(ModulusError::OutsideDomain(i));
                    }
                }
                let row = polyline_row(graph, path, false);
                if row.iter().map(|&(_, c)| c).sum::<f64>() <= 0.0 {
                    return Err(ModulusError::ZeroLengthPath(idx));
                }
                rows.push(row);
            }
            let (rho, lambda) = solve_working_set(&rows, graph);
            let objective: f64 =
                rho.iter().zip(&graph.areas).map(|(r, a)| r * r * a).sum();
            let shortest = rows
                .iter()
                .map(|row| row_dot_rho(row, &rho))
                .fold(f64::INFINITY, f64::min);
            finish(paths.clone(), rho, lambda, objective, shortest, true, 1)
        }
        FamilyKind::Connecting { a, b } => {
            validate_sides(a, b, &allowed)?;
            if !reachable(graph, a, b, &allowed) {
                return Ok(ModulusSolution {
                    modulus: 0.0,
                    lower: 0.0,
                    upper: 0.0,
                    density: DensityField { rho: vec![0.0; graph.len()] },
                    active: Vec::new(),
                    converged: true,
                    iterations: 0,
                });
            }
            let mut rho = vec![0.0f64; graph.len()];
            let mut lambda: Vec<f64> = Vec::new();
            let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
            let mut paths: Vec<Vec<usize>> = Vec::new();
            // the Gram of the accumulated rows grows one rank per iteration;
            // rebuilding it (or solving the QP cold) each round turns the
            // whole loop quadratic-to-quartic in the constraint count
            let mut g: Vec<f64> = Vec::new();
            let mut converged = false;
            let mut iterations = 0usize;
            let mut shortest;
            loop {
                let (len, path) = separate(graph, &rho, a, b, &allowed)
                    .expect("reachability was checked");
                shortest = len;
                if len >= threshold {
                    converged = true;
                    break;
                }
                if paths.contains(&path) {
                    break; // separation is stalled on an already-active path
                }
                let active_now = lambda.iter().filter(|&&l| l > 0.0).count().max(1);
                if iterations >= 50 * active_now + 50 {
                    break;
                }
                let row = polyline_row(graph, &path, true);
                g = gram_extend(&g, &rows, &row, &graph.areas);
                rows.push(row);
                paths.push(path);
                lambda.push(0.0);
                let k = rows.len();
                lambda = qp::nonneg_descent(&g, k, &vec![2.0; k], &lambda);
                rho = density_from(&rows, &lambda, graph);
                iterations += 1;
            }
            let objective: f64 =
                rho.iter().zip(&graph.areas).map(|(r, a_)| r * r * a_).sum();
            finish(paths, rho, lambda, objective, shortest, converged, iterations)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    paths: Vec<Vec<usize>>,
    rho: Vec<f64>,
    lambda: Vec<f64>,
    objective: f64,
    shortest: f64,
    converged: bool,
    iterations: usize,
) -> Result<ModulusSolution, ModulusError> {
    let lambda_max = lambda.iter().fold(0.0f64, |m, &l| m.max(l));
    let active: Vec<Vec<usize>> = paths
        .iter()
        .zip(&lambda)
        .filter(|&(_, &l)| l > 1e-9 * lambda_max)
        .map(|(p, _)| p.clone())
        .collect();
    let (upper, feasible) = if shortest > 0.0 && shortest.is_finite() {
        (
            (objective / (shortest * shortest)).max(objective),
            rho.iter().map(|r| r / shortest).collect(),
        )
    } else {
        (objective, rho)
    };
    Ok(ModulusSolution {
        modulus: objective,
        lower: objective,
        upper,
        density: DensityField { rho: feasible },
        active,
        converged,
        iterations,
    })
}

// ─── Admissibility ───

#[derive(Debug, Clone)]
pub struct Admissibility {
    pub pass: bool,
    pub shortest: f64,
    pub violating: Option<Vec<usize>>,
}

/// Checks whether a density is admissible for the family: its ρ-shortest
/// family path must have length at least one (up to a 1e-9 rounding slack).
pub fn admissibility_check(
    graph: &DomainGraph,
    family: &PathFamily,
    rho: &DensityField,
) -> Result<Admissibility, ModulusError> {
    if rho.rho.len() != graph.len() {
        return Err(ModulusError::DensityLengthMismatch {
            got: rho.rho.len(),
            expect: graph.len(),
        });
    }
    if let Some(i) = rho.rho.iter().position(|&r| r < 0.0) {
        return Err(ModulusError::NegativeDensity(i));
    }
    let allowed = allowed_mask(graph, &family.domain);
    let (shortest, witness) = match &family.kind {
        FamilyKind::Connecting { a, b } => {
            validate_sides(a, b, &allowed)?;
            match separate(graph, &rho.rho, a, b, &allowed) {
                // no path at all: every family member vacuously satisfies the bound
                None => (f64::INFINITY, None),
                Some((len, path)) => (len, Some(path)),
            }
        }
        FamilyKind::Explicit { paths } => {
            let mut best: Option<(f64, &Vec<usize>)> = None;
            for (idx, path) in paths.iter().enumerate() {
                if path.len() < 2 {
                    return Err(ModulusError::PathTooShort(idx));
                }
                let row = polyline_row(graph, path, false);
                let len = row_dot_rho(&row, &rho.rho);
                if best.map(|(l, _)| len < l).unwrap_or(true) {
                    best = Some((len, path));
                }
            }
            match best {
                None => (f64::INFINITY, None),
                Some((len, path)) => (len, Some(path.clone())),
            }
        }
    };
    let pass = shortest >= 1.0 - 1e-9;
    Ok(Admissibility { pass, shortest, violating: if pass { None } else { witness } })
}

// ─── Closed-curve families ───

/// A closed curve for ring-style families: either a geometric circle,
/// integrated cell-by-cell against the sampling, or an explicit node cycle
/// (first node repeated last) measured by its chords.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClosedCurve {
    Circle { center: P2, radius: f64 },
    NodeCycle(Vec<usize>),
}

/// Modulus of a family of closed curves, with the quadrant-arc multiplier.
///
/// `bound = 4 * modulus`: a curve constrained over a quarter turn needs four
/// times the density budget of a full turn, so families whose members each
/// sweep at least a quarter turn between the same radii carry at least four
/// times the closed-curve modulus.
#[derive(Debug, Clone)]
pub struct CircleFamilyBound {
    pub modulus: f64,
    pub bound: f64,
    pub density: DensityField,
}

/// Computes the modulus of the given family of disjoint closed curves by a
/// single nonnegative quadratic program (no separation step: the curves are
/// the constraints).
pub fn circle_family_modulus(
    graph: &DomainGraph,
    curves: &[ClosedCurve],
) -> Result<CircleFamilyBound, ModulusError> {
    // validation
    for (idx, curve) in curves.iter().enumerate() {
        match curve {
            ClosedCurve::NodeCycle(nodes) => {
                if nodes.first() != nodes.last() {
                    return Err(ModulusError::OpenCurve(idx));
                }
                if nodes.len() < 4 {
                    return Err(ModulusError::CurveTooShort(idx));
                }
                let mut seen = std::collections::BTreeSet::new();
                for &i in &nodes[..nodes.len() - 1] {
                    if i >= graph.len() || !graph.mask[i] {
                        return Err(ModulusError::OutsideDomain(i));
                    }
                    if !seen.insert(i) {
                        return Err(ModulusError::CurveSelfIntersects(idx));
                    }
                }
            }
            ClosedCurve::Circle { radius, .. } => {
                if graph.cell.is_none() {
                    return Err(ModulusError::NeedsCellGeometry);
                }
                if !(*radius > 0.0) {
                    return Err(ModulusError::CurveTooShort(idx));
                }
            }
        }
    }
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            if curves_intersect(graph, &curves[i], &curves[j]) {
                return Err(ModulusError::CurvesOverlap(i, j));
            }
        }
    }

    let mut rows = Vec::with_capacity(curves.len());
    for (idx, curve) in curves.iter().enumerate() {
        let row = match curve {
            ClosedCurve::NodeCycle(nodes) => polyline_row(graph, nodes, false),
            ClosedCurve::Circle { center, radius } => {
                let half = graph.cell.expect("validated above") / 2.0;
                let mut row = Vec::new();
                for i in 0..graph.len() {
                    if !graph.mask[i] {
                        continue;
                    }
                    let p = graph.positions[i];
                    let arc = circle_arc_length_in_box(
                        *center,
                        *radius,
                        p[0] - half,
                        p[0] + half,
                        p[1] - half,
                        p[1] + half,
                    );
                    if arc > 0.0 {
                        row.push((i, arc));
                    }
                }
                row
            }
        };
        if row.iter().map(|&(_, c)| c).sum::<f64>() <= 0.0 {
            return Err(ModulusError::CurveOutsideDomain(idx));
        }
        rows.push(row);
    }
    let (rho, _lambda) = solve_working_set(&rows, graph);
    let modulus: f64 = rho.iter().zip(&graph.areas).map(|(r, a)| r * r * a).sum();
    Ok(CircleFamilyBound {
        modulus,
        bound: 4.0 * modulus,
        density: DensityField { rho },
    })
}

fn curves_intersect(graph: &DomainGraph, a: &ClosedCurve, b: &ClosedCurve) -> bool {
    match (a, b) {
        (
            ClosedCurve::Circle { center: c1, radius: r1 },
            ClosedCurve::Circle { center: c2, radius: r2 },
        ) => {
            let d = point_dist(*c1, *c2);
            if d < 1e-12 && (r1 - r2).abs() < 1e-12 {
                return true; // identical circles
            }
            d <= r1 + r2 && d >= (r1 - r2).abs()
        }
        (ClosedCurve::NodeCycle(x), ClosedCurve::NodeCycle(y)) => {
            let set: std::collections::BTreeSet<usize> = x.iter().copied().collect();
            y.iter().any(|i| set.contains(i))
        }
        (ClosedCurve::Circle { center, radius }, ClosedCurve::NodeCycle(nodes))
        | (ClosedCurve::NodeCycle(nodes), ClosedCurve::Circle { center, radius }) => {
            // a chord with endpoints on opposite sides of the circle crosses it
            nodes.windows(2).any(|pair| {
                let da = point_dist(graph.positions[pair[0]], *center) - radius;
                let db = point_dist(graph.positions[pair[1]], *center) - radius;
                da * db < 0.0
            })
        }
    }
}

// ─── Distortion spot check ───

/// Worst modulus distortion of a node bijection over a list of families.
#[derive(Debug, Clone)]
pub struct DistortionReport {
    pub k_hat: f64,
    /// (source modulus, image modulus) per family, in input order.
    pub moduli: Vec<[f64; 2]>,
    /// First family (if any) where exactly one side had zero modulus.
    pub degenerate: Option<usize>,
}

/// Measures how far a node bijection is from preserving modulus: for each
/// family, the modulus is computed on the source graph and (through the map)
/// on the target graph, and the worst two-sided ratio is reported.
pub fn quasiconformality_spot_check(
    source: &DomainGraph,
    target: &DomainGraph,
    forward: &[usize],
    families: &[PathFamily],
    tol: f64,
) -> Result<DistortionReport, ModulusError> {
    if forward.len() != source.len() || source.len() != target.len() {
        return Err(ModulusError::MapNotBijective);
    }
    let mut hit = vec![false; target.len()];
    for &img in forward {
        if img >= target.len() || hit[img] {
            return Err(ModulusError::MapNotBijective);
        }
        hit[img] = true;
    }
    let mapped: Vec<PathFamily> = families
        .iter()
        .map(|f| {
            let kind = match &f.kind {
                FamilyKind::Connecting { a, b } => FamilyKind::Connecting {
                    a: a.iter().map(|&i| forward[i]).collect(),
                    b: b.iter().map(|&i| forward[i]).collect(),
                },
                FamilyKind::Explicit { paths } => FamilyKind::Explicit {
                    paths: paths
                        .iter()
                        .map(|p| p.iter().map(|&i| forward[i]).collect())
                        .collect(),
                },
            };
            PathFamily {
                kind,
                domain: f
                    .domain
                    .as_ref()
                    .map(|d| d.iter().map(|&i| forward[i]).collect()),
            }
        })
        .collect();
    let moduli: Vec<[f64; 2]> = families
        .par_iter()
        .zip(mapped.par_iter())
        .map(|(f, g)| -> Result<[f64; 2], ModulusError> {
            Ok([
                modulus_solve(source, f, tol)?.modulus,
                modulus_solve(target, g, tol)?.modulus,
            ])
        })
        .collect::<Result<_, _>>()?;
    let mut k_hat = 1.0f64;
    let mut degenerate = None;
    for (idx, &[m_src, m_img]) in moduli.iter().enumerate() {
        let zero_src = m_src < 1e-12;
        let zero_img = m_img < 1e-12;
        match (zero_src, zero_img) {
            (true, true) => {} // vacuous on both sides
            (false, false) => {
                k_hat = k_hat.max(m_src / m_img).max(m_img / m_src);
            }
            _ => {
                k_hat = f64::INFINITY;
                if degenerate.is_none() {
                    degenerate = Some(idx);
                }
            }
        }
    }
    Ok(DistortionReport { k_hat, moduli, degenerate })
}

// ─── Tests ───

//! Chain metrics induced by a measure.
//!
//! Fix a scale `delta` and a dimension parameter `s`.  Two points closer than
//! `delta` are joined by an edge whose cost is the mass of their pair ball
//! raised to `1/s`; the chain metric `q_delta(x, y)` is the cheapest chain of
//! such hops.  As `delta` shrinks, chains are constrained more, so `q_delta`
//! grows; the value at the finest scale that keeps the graph connected is the
//! best finite-sample stand-in for the limiting metric `q`.
//!
//! The module also measures the two structure constants tying `q` back to the
//! measure — the lower constant `C_W` (mass never beats `C_W * q`) and the
//! upper constant `C_S` (`q` never beats `C_S * sqrt(mass)`) — and builds the
//! layered ball coverings that certify `q`'s geometry: a separating annulus
//! layer around a point, and a nested chain of connected pieces joining two
//! points with geometrically decaying `q`-diameter.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::collections::BinaryHeap;
use thiserror::Error;

use crate::report::VerificationReport;
use crate::space::{Metric, MetricMeasureSpace};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error(
        "graph at delta={delta} is disconnected: point {a} (component of {size_a}) \
         cannot reach point {b} (component of {size_b})"
    )]
    Disconnected { delta: f64, a: usize, b: usize, size_a: usize, size_b: usize },
    #[error("points {0} and {1} lie in different components")]
    DisconnectedPair(usize, usize),
    #[error("edge ({x},{y}) has zero pair-ball mass")]
    ZeroCostEdge { x: usize, y: usize },
    #[error("empty delta schedule")]
    EmptySchedule,
    #[error("no delta in the schedule keeps the graph connected (threshold above {0})")]
    InfeasibleSchedule(f64),
    #[error("q({x},{y}) = 0 for distinct points")]
    DegenerateQ { x: usize, y: usize },
    #[error("ball of radius {required} around point {center} leaves the sampled region (clearance {clearance})")]
    OutsideRegion { center: usize, required: f64, clearance: f64 },
    #[error("no feasible mass window: need epsilon in [{lo}, {hi}]")]
    EpsilonInfeasible { lo: f64, hi: f64 },
    #[error("covering construction exceeded {cap} stages at scale {scale}")]
    ConstructionStalled { cap: usize, scale: f64 },
}

// ─── Proximity graph ───

/// Proximity graph at scale `delta`: edges join pairs at metric distance at
/// most `delta`, and each edge costs `mass(pair_ball)^{1/s}`.
#[derive(Debug, Clone)]
pub struct ChainGraph {
    delta: f64,
    s: f64,
    offsets: Vec<u32>,
    targets: Vec<u32>,
    costs: Vec<f64>,
}

impl ChainGraph {
    /// Builds the graph and requires it to be connected.
    pub fn build(space: &MetricMeasureSpace, delta: f64, s: f64) -> Result<Self, ChainError> {
        let g = Self::build_allow_disconnected(space, delta, s)?;
        let labels = g.component_labels();
        if let Some(b) = labels.iter().position(|&l| l != labels[0]) {
            let size_a = labels.iter().filter(|&&l| l == labels[0]).count();
            let size_b = labels.iter().filter(|&&l| l == labels[b]).count();
            return Err(ChainError::Disconnected { delta, a: 0, b, size_a, size_b });
        }
        Ok(g)
    }

    /// Builds the graph without the connectivity requirement.
    pub fn build_allow_disconnected(
        space: &MetricMeasureSpace,
        delta: f64,
        s: f64,
    ) -> Result<Self, ChainError> {
        let n = space.len();
        // Upper half of the adjacency, one row per source, in parallel.
        let rows: Vec<Vec<(u32, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                space
                    .neighbors_within(i, delta)
                    .into_iter()
                    .filter(|&j| j > i)
                    .map(|j| (j as u32, space.pair_ball_mass(i, j).powf(1.0 / s)))
                    .collect()
            })
            .collect();
        for (i, row) in rows.iter().enumerate() {
            for &(j, c) in row {
                if !(c > 0.0) {
                    return Err(ChainError::ZeroCostEdge { x: i, y: j as usize });
                }
            }
        }
        let mut degree = vec![0u32; n];
        for (i, row) in rows.iter().enumerate() {
            degree[i] += row.len() as u32;
            for &(j, _) in row {
                degree[j as usize] += 1;
            }
        }
        let mut offsets = vec![0u32; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let total = offsets[n] as usize;
        let mut targets = vec![0u32; total];
        let mut costs = vec![0.0f64; total];
        let mut cursor: Vec<u32> = offsets[..n].to_vec();
        for (i, row) in rows.iter().enumerate() {
            for &(j, c) in row {
                let a = cursor[i] as usize;
                targets[a] = j;
                costs[a] = c;
                cursor[i] += 1;
                let b = cursor[j as usize] as usize;
                targets[b] = i as u32;
                costs[b] = c;
                cursor[j as usize] += 1;
            }
        }
        Ok(ChainGraph { delta, s, offsets, targets, costs })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    pub fn degree(&self, i: usize) -> usize {
        (self.offsets[i + 1] - self.offsets[i]) as usize
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[i] as usize;
        let hi = self.offsets[i + 1] as usize;
        self.targets[lo..hi]
            .iter()
            .zip(&self.costs[lo..hi])
            .map(|(&j, &c)| (j as usize, c))
    }

    /// Undirected edge list `(i, j, cost)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.len() {
            for (j, c) in self.neighbors(i) {
                if j > i {
                    out.push((i, j, c));
                }
            }
        }
        out
    }

    fn component_labels(&self) -> Vec<u32> {
        let n = self.len();
        let mut label = vec![u32::MAX; n];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for (w, _) in self.neighbors(v) {
                    if label[w] == u32::MAX {
                        label[w] = next;
                        stack.push(w);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        let labels = self.component_labels();
        labels.iter().all(|&l| l == labels[0])
    }
}

#[derive(Copy, Clone)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // Min-heap by cost (BinaryHeap is a max-heap), then by node id for
    // deterministic pop order on ties.
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

fn dijkstra(graph: &ChainGraph, source: usize, target: Option<usize>) -> Vec<f64> {
    let n = graph.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: source as u32 });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        let v = node as usize;
        if cost > dist[v] {
            continue;
        }
        if target == Some(v) {
            break;
        }
        for (w, c) in graph.neighbors(v) {
            let next = cost + c;
            if next < dist[w] {
                dist[w] = next;
                heap.push(HeapEntry { cost: next, node: w as u32 });
            }
        }
    }
    dist
}

/// Chain distance between two points; exact shortest path in the graph.
pub fn q_delta(graph: &ChainGraph, x: usize, y: usize) -> Result<f64, ChainError> {
    let d = dijkstra(graph, x, Some(y))[y];
    if d.is_finite() {
        Ok(d)
    } else {
        Err(ChainError::DisconnectedPair(x, y))
    }
}

/// Chain distances from one source to every point (infinite off-component).
pub fn q_from(graph: &ChainGraph, x: usize) -> Vec<f64> {
    dijkstra(graph, x, None)
}

/// Dense symmetric matrix of chain distances.
#[derive(Debug, Clone)]
pub struct QMatrix {
    n: usize,
    values: Vec<f64>,
}

impl QMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV with one row per point, columns in point order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for j in 0..self.n {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// All-pairs chain distances, one shortest-path sweep per source in parallel.
/// The result is symmetrized canonically (row of the smaller index wins) so
/// downstream consumers see an exactly symmetric metric.
pub fn q_matrix(graph: &ChainGraph) -> QMatrix {
    let n = graph.len();
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| dijkstra(graph, i, None)).collect();
    let mut values = vec![0.0f64; n * n];
    for (i, row) in rows.iter().enumerate() {
        values[i * n..(i + 1) * n].copy_from_slice(row);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = values[i * n + j];
            values[j * n + i] = v;
        }
    }
    QMatrix { n, values }
}

// ─── Scale refinement ───

#[derive(Debug, Clone, Serialize)]
pub struct QStep {
    pub delta: f64,
    pub q: f64,
    /// Set when this row decreased by more than 1% from the previous (coarser)
    /// row — a resolution artifact, since refining can only remove chains.
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct QEstimate {
    /// Value at the finest feasible delta.
    pub value: f64,
    pub delta: f64,
    pub table: Vec<QStep>,
    pub monotone: bool,
}

/// Evaluates the chain distance along a decreasing schedule of scales and
/// returns the value at the finest scale that keeps the pair connected,
/// together with the per-scale table.
pub fn q_estimate(
    space: &MetricMeasureSpace,
    x: usize,
    y: usize,
    schedule: &[f64],
    s: f64,
) -> Result<QEstimate, ChainError> {
    if schedule.is_empty() {
        return Err(ChainError::EmptySchedule);
    }
    let mut deltas = schedule.to_vec();
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut table: Vec<QStep> = Vec::new();
    for &delta in &deltas {
        let graph = ChainGraph::build_allow_disconnected(space, delta, s)?;
        match q_delta(&graph, x, y) {
            Ok(q) => {
                let flagged = table
                    .last()
                    .map(|prev| q < prev.q * (1.0 - 0.01))
                    .unwrap_or(false);
                table.push(QStep { delta, q, flagged });
            }
            // Finer scales only lose edges, so once the pair disconnects the
            // rest of the schedule is infeasible too.
            Err(_) => break,
        }
    }
    let last = table.last().ok_or(ChainError::InfeasibleSchedule(deltas[0]))?;
    Ok(QEstimate {
        value: last.q,
        delta: last.delta,
        monotone: table.iter().all(|r| !r.flagged),
        table,
    })
}

// ─── Structure constants ───

/// An extremal value together with the pair that realised it.
#[derive(Debug, Clone, Serialize)]
pub struct Extremal {
    pub value: f64,
    pub pair: (usize, usize),
}

/// All unordered pairs of an `n`-point space.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

/// Lower structure constant: the smallest `C` with
/// `mass(pair_ball(x,y))^{1/s} <= C * q(x,y)` over the sampled pairs.
pub fn wmdm_constant(
    space: &MetricMeasureSpace,
    q: &QMatrix,
    pairs: &[(usize, usize)],
    s: f64,
) -> Result<Extremal, ChainError> {
    let mut best = Extremal { value: 0.0, pair: (0, 0) };
    for &(x, y) in pairs {
        if x == y {
            continue;
        }
        let qv = q.get(x, y);
        if !(qv > 0.0) {
            return Err(ChainError::DegenerateQ { x, y });
        }
        let ratio = space.pair_ball_mass(x, y).powf(1.0 / s) / qv;
        if ratio > best.value {
            best = Extremal { value: ratio, pair: (x, y) };
        }
    }
    Ok(best)
}

/// Upper structure constant and per-center validity radii.
#[derive(Debug, Clone, Serialize)]
pub struct ReverseConstant {
    /// Smallest `C` with `q(x,y) <= C * mass(pair_ball)^{1/s}` over admitted
    /// pairs (zero-mass pairs are skipped).
    pub c_s: f64,
    pub witness: (usize, usize),
    /// For each sampled center, the largest radius within which every pair
    /// satisfies the inequality with `c_s`; infinite when nothing violates it.
    pub r_x: BTreeMap<usize, f64>,
}

pub fn reverse_constant(
    space: &MetricMeasureSpace,
    q: &QMatrix,
    centers: &[usize],
    s: f64,
) -> ReverseConstant {
    let n = space.len();
    let mut c_s = 0.0f64;
    let mut witness = (0, 0);
    for x in 0..n {
        for y in (x + 1)..n {
            let mass = space.pair_ball_mass(x, y);
            if !(mass > 0.0) {
                continue;
            }
            let ratio = q.get(x, y) / mass.powf(1.0 / s);
            if ratio > c_s {
                c_s = ratio;
                witness = (x, y);
            }
        }
    }
    let mut r_x = BTreeMap::new();
    for &x in centers {
        let mut worst = f64::INFINITY;
        for y in 0..n {
            if y == x {
                continue;
            }
            let mass = space.pair_ball_mass(x, y);
            if !(mass > 0.0) {
                continue;
            }
            if q.get(x, y) > c_s * mass.powf(1.0 / s) {
                worst = worst.min(space.dist(x, y));
            }
        }
        r_x.insert(x, worst);
    }
    ReverseConstant { c_s, witness, r_x }
}

// ─── Constant ledger ───

/// Measured structure constants plus the derived closed-form constants that
/// the covering constructions quote.  Derived fields are recomputable exactly
/// from `(c_w, c_d, lambda)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantLedger {
    /// Lower structure constant (measured).
    pub c_w: f64,
    /// Doubling constant of the measure (measured).
    pub c_d: f64,
    /// Connectivity constant as measured.
    pub lambda_measured: f64,
    /// `lambda_measured` rounded up to a power of two; the constructions use
    /// this value so the exponent `ell` below is an integer.
    pub lambda: f64,
    /// `log2(lambda)`.
    pub ell: i32,
    /// Upper structure constant, measured (filled by the caller when known).
    pub c_s_measured: Option<f64>,
}

impl ConstantLedger {
    pub fn new(c_w: f64, c_d: f64, lambda_measured: f64) -> Self {
        let ell = lambda_measured.log2().ceil().max(0.0) as i32;
        ConstantLedger {
            c_w,
            c_d,
            lambda_measured,
            lambda: (2.0f64).powi(ell),
            ell,
            c_s_measured: None,
        }
    }

    pub fn with_c_s(mut self, c_s: f64) -> Self {
        self.c_s_measured = Some(c_s);
        self
    }

    /// Closed-form upper structure constant: `16 * C_W * C_D^(28 + 16*ell)`.
    pub fn c_s_bound(&self) -> f64 {
        16.0 * self.c_w * self.c_d.powi(28 + 16 * self.ell)
    }

    /// Per-stage diameter constant: `4 * C_W * C_D^(28 + 15*ell)`.
    pub fn c_2(&self) -> f64 {
        4.0 * self.c_w * self.c_d.powi(28 + 15 * self.ell)
    }

    /// Layer-cost constant: `4 * C_W * C_D^(11 + 4*ell)`.
    pub fn c_prime(&self) -> f64 {
        4.0 * self.c_w * self.c_d.powi(11 + 4 * self.ell)
    }

    /// Separating-set diameter constant: `8 * C_W * C_D^(12 + 4*ell)`.
    pub fn separator_diam_constant(&self) -> f64 {
        8.0 * self.c_w * self.c_d.powi(12 + 4 * self.ell)
    }

    /// Number of layers to scan: `ceil(sqrt(m) / (4 * C_W * C_D^(6+ell)))`
    /// for a cover of `m` balls.
    pub fn layer_budget(&self, m: usize) -> usize {
        ((m as f64).sqrt() / (4.0 * self.c_w * self.c_d.powi(6 + self.ell)))
            .ceil()
            .max(1.0) as usize
    }

    /// Cap on cover cardinality per stage: `C_D^(19 + 14*ell)`.
    pub fn stage_cap(&self) -> f64 {
        self.c_d.powi(19 + 14 * self.ell)
    }

    /// Factor in the endpoint bound `q(x,y) <= 4 * C_D^ell * C_2 * mass^(1/2)`.
    pub fn final_factor(&self) -> f64 {
        4.0 * self.c_d.powi(self.ell) * self.c_2()
    }
}

// ─── Derived metric space ───

/// Re-metrizes the space with the chain metric at scale `delta`: same points
/// and masses, explicit all-pairs distance matrix.
pub fn q_space(
    space: &MetricMeasureSpace,
    delta: f64,
    s: f64,
) -> Result<MetricMeasureSpace, ChainError> {
    let graph = ChainGraph::build(space, delta, s)?;
    let qm = q_matrix(&graph);
    Ok(q_space_from(space, &qm))
}

/// Same as [`q_space`] but reuses an already-computed distance matrix, so
/// callers that need both the matrix and the space pay for Dijkstra once.
pub fn q_space_from(space: &MetricMeasureSpace, qm: &QMatrix) -> MetricMeasureSpace {
    let n = qm.len();
    MetricMeasureSpace::build(
        space.points().to_vec(),
        Metric::Explicit { matrix: qm.values().to_vec(), n },
        space.weights().to_vec(),
        space.boundary().clone(),
    )
    .expect("chain metric satisfies the axioms")
}

// ─── Separating layer ───

/// One covering ball in a layer decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct CoverBall {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
    pub mass: f64,
}

/// Annular cover around a point, peeled into layers, with the cheapest layer's
/// connected component acting as a separating set.
#[derive(Debug, Clone, Serialize)]
pub struct LayerDecomposition {
    pub center: usize,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub epsilon: f64,
    pub cover: Vec<CoverBall>,
    /// Cover indices per layer, ordered outward from the seed shell.
    pub layers: Vec<Vec<usize>>,
    /// 1-based index of the chosen (cheapest) layer.
    pub chosen_layer: usize,
    pub layer_cost: f64,
    /// Cover indices of the connected component used as the separator.
    pub component: Vec<usize>,
    /// Sample points covered by the separator.
    pub component_points: Vec<usize>,
    pub diam_q: f64,
    /// Whether removing the separator disconnects the inner ball from the
    /// far exterior in the proximity graph.
    pub separates: bool,
    pub reports: Vec<VerificationReport>,
}

impl LayerDecomposition {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layer serialization")
    }
}

fn adjacency(space: &MetricMeasureSpace, factor: f64) -> Vec<Vec<usize>> {
    let delta = match space.metric() {
        Metric::Snowflake { theta } => (factor * space.pitch()).powf(*theta),
        _ => factor * space.pitch(),
    };
    (0..space.len())
        .into_par_iter()
        .map(|i| {
            space
                .neighbors_within(i, delta)
                .into_iter()
                .filter(|&j| j != i)
                .collect()
        })
        .collect()
}

/// Flood fill over `adj` starting from `seeds`, never entering `blocked`.
fn reachable(adj: &[Vec<usize>], seeds: &[usize], blocked: &[bool]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack: Vec<usize> = seeds.iter().copied().filter(|&s| !blocked[s]).collect();
    for &s in &stack {
        seen[s] = true;
    }
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] && !blocked[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

fn max_q_over(points: &[usize], q: &QMatrix) -> f64 {
    let mut d = 0.0f64;
    for (a, &i) in points.iter().enumerate() {
        for &j in &points[a + 1..] {
            d = d.max(q.get(i, j));
        }
    }
    d
}

/// Builds an annular ball cover around `center` between radii
/// `(2 lambda)^2 r` and `(2 lambda)^5 r`, peels it into layers starting from
/// the shell at `(2 lambda)^3 r`, picks the cheapest layer within the layer
/// budget, and returns its connected component together with separation and
/// diameter checks.
pub fn separating_layer(
    space: &MetricMeasureSpace,
    q: &QMatrix,
    center: usize,
    r: f64,
    epsilon: Option<f64>,
    ledger: &ConstantLedger,
) -> Result<LayerDecomposition, ChainError> {
    let two_lambda = 2.0 * ledger.lambda;
    let r2 = two_lambda.powi(2) * r;
    let r3 = two_lambda.powi(3) * r;
    let r5 = two_lambda.powi(5) * r;
    let r7 = two_lambda.powi(7) * r;
    let clearance = space.boundary_clearance(center);
    // The construction needs room for the dilated ball in the sampled region.
    let r7_base = match space.metric() {
        Metric::Snowflake { theta } => r7.powf(1.0 / theta),
        _ => r7,
    };
    if r7_base.is_finite() && r7_base > clearance {
        return Err(ChainError::OutsideRegion { center, required: r7_base, clearance });
    }

    let pitch = space.metric_pitch();
    let n = space.len();
    let annulus: Vec<usize> = (0..n)
        .filter(|&i| {
            let d = space.dist(center, i);
            i != center && d > r2 && d < r5
        })
        .collect();
    // Degenerate resolution case: the annulus is thinner than a cell.  Fall
    // back to the ring of points nearest the mid radius so the decomposition
    // stays a separator.
    let annulus = if annulus.is_empty() {
        (0..n)
            .filter(|&i| {
                let d = space.dist(center, i);
                i != center && d <= r3.max(1.5 * pitch)
            })
            .collect::<Vec<_>>()
    } else {
        annulus
    };
    if annulus.is_empty() {
        return Err(ChainError::OutsideRegion { center, required: r5, clearance });
    }

    // Mass window for the fifth-radius balls of the cover.  With one sample
    // per cell the fifth-balls are singletons, so the window is feasible iff
    // the annulus masses sit within one doubling factor of each other.
    let min_w = annulus.iter().map(|&i| space.weight(i)).fold(f64::INFINITY, f64::min);
    let max_w = annulus.iter().map(|&i| space.weight(i)).fold(0.0f64, f64::max);
    let eps = match epsilon {
        Some(e) => e,
        None => min_w.sqrt(),
    };
    let lo = (max_w / ledger.c_d).sqrt();
    let hi = min_w.sqrt();
    if !(eps * eps <= min_w && max_w <= ledger.c_d * eps * eps) {
        return Err(ChainError::EpsilonInfeasible { lo, hi });
    }

    // Cover: one ball of radius 2.5 * pitch per annulus point; the
    // fifth-radius balls (radius pitch/2) are singletons, hence disjoint.
    let radius = 2.5 * pitch;
    let cover: Vec<CoverBall> = annulus
        .iter()
        .map(|&i| {
            let b = space.ball_closed(i, radius);
            CoverBall { center: i, radius, members: b.members, mass: b.mass }
        })
        .collect();
    let m = cover.len();

    // Ball intersection graph of the cover.
    let mut touch: Vec<Vec<usize>> = vec![Vec::new(); m];
    for a in 0..m {
        for b in (a + 1)..m {
            if space.dist(cover[a].center, cover[b].center) <= 2.0 * radius {
                touch[a].push(b);
                touch[b].push(a);
            }
        }
    }

    // Seed shell at the middle radius; if resolution leaves it empty, seed
    // with the balls nearest that radius.
    let mut seed: Vec<usize> = (0..m)
        .filter(|&a| (space.dist(center, cover[a].center) - r3).abs() <= pitch)
        .collect();
    if seed.is_empty() {
        let best = (0..m)
            .min_by(|&a, &b| {
                (space.dist(center, cover[a].center) - r3)
                    .abs()
                    .total_cmp(&(space.dist(center, cover[b].center) - r3).abs())
            })
            .unwrap();
        seed.push(best);
    }

    // Peel layers by hop distance from the seed shell.
    let mut depth = vec![usize::MAX; m];
    let mut frontier = seed.clone();
    for &a in &frontier {
        depth[a] = 0;
    }
    let mut layers: Vec<Vec<usize>> = vec![frontier.clone()];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &a in &frontier {
            for &b in &touch[a] {
                if depth[b] == usize::MAX {
                    depth[b] = depth[a] + 1;
                    next.push(b);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        next.sort_unstable();
        layers.push(next.clone());
        frontier = next;
    }

    let budget = ledger.layer_budget(m).min(layers.len());
    let cost_of = |layer: &[usize]| -> f64 {
        layer.iter().map(|&a| cover[a].mass.sqrt()).sum()
    };
    let mut chosen = 0usize;
    let mut best_cost = f64::INFINITY;
    for (j, layer) in layers.iter().take(budget).enumerate() {
        let c = cost_of(layer);
        if c < best_cost {
            best_cost = c;
            chosen = j;
        }
    }
    let layer = &layers[chosen];

    // Largest connected component of the chosen layer.
    let mut comp_label = vec![usize::MAX; m];
    let in_layer: Vec<bool> = {
        let mut f = vec![false; m];
        for &a in layer {
            f[a] = true;
        }
        f
    };
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &a in layer {
        if comp_label[a] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut stack = vec![a];
        comp_label[a] = id;
        let mut members = vec![a];
        while let Some(v) = stack.pop() {
            for &w in &touch[v] {
                if in_layer[w] && comp_label[w] == usize::MAX {
                    comp_label[w] = id;
                    stack.push(w);
                    members.push(w);
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    let component = comps
        .into_iter()
        .max_by_key(|c| (c.len(), usize::MAX - c[0]))
        .unwrap_or_default();

    // The separating set lives in the ambient annulus between `2 lambda r`
    // and the outer dilate; ball thickening may spill past that at sampling
    // resolution, so clip members back to it (in particular the inner point
    // itself never belongs to the separator).
    let ambient_floor = 2.0 * ledger.lambda * r;
    let mut component_points: Vec<usize> = component
        .iter()
        .flat_map(|&a| cover[a].members.iter().copied())
        .filter(|&p| space.dist(center, p) >= ambient_floor)
        .collect();
    component_points.sort_unstable();
    component_points.dedup();

    let diam_q = max_q_over(&component_points, q);

    // Separation: remove the separator's points and flood from the center
    // over face adjacency; the far exterior must be unreachable.
    let adj = adjacency(space, 1.2);
    let mut blocked = vec![false; n];
    for &p in &component_points {
        blocked[p] = true;
    }
    let seen = reachable(&adj, &[center], &blocked);
    let outer_marker = (0..n)
        .max_by(|&a, &b| space.dist(center, a).total_cmp(&space.dist(center, b)))
        .unwrap();
    let separates = !blocked[center] && !seen[outer_marker];

    let inner_mass = space.ball_closed(center, r.max(pitch * 0.25)).mass;
    let reports = vec![
        VerificationReport::check(
            "layer_cost",
            best_cost,
            ledger.c_prime() * inner_mass.sqrt(),
            json!({"center": center, "layer": chosen + 1, "balls": layer.len()}),
        )
        .with_constant("c_prime", ledger.c_prime()),
        VerificationReport::check(
            "separator_diam_q",
            diam_q,
            ledger.separator_diam_constant() * inner_mass.sqrt(),
            json!({"center": center, "component_balls": component.len()}),
        )
        .with_constant("diam_constant", ledger.separator_diam_constant()),
        VerificationReport::check(
            "separation",
            if separates { 0.0 } else { 1.0 },
            0.0,
            json!({"outer_marker": outer_marker}),
        ),
    ];

    Ok(LayerDecomposition {
        center,
        inner_radius: r2,
        outer_radius: r5,
        epsilon: eps,
        cover,
        layers,
        chosen_layer: chosen + 1,
        layer_cost: best_cost,
        component,
        component_points,
        diam_q,
        separates,
        reports,
    })
}

// ─── Connecting continuum ───

/// One stage of the nested covering chain joining two points.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuumStage {
    pub center: usize,
    pub radius: f64,
    pub mass: f64,
    /// Connected piece through the center inside this ball.
    pub points: Vec<usize>,
    pub diam_q: f64,
    /// Whether the per-center target radii hit the sampling floor and were
    /// clamped to single cells.
    pub clamped: bool,
}

/// Nested chain of connected pieces shrinking onto `x`, with decay and
/// endpoint-bound checks.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuumChain {
    pub x: usize,
    pub y: usize,
    pub stages: Vec<ContinuumStage>,
    /// Bound on the q-diameter of the truncated tail.
    pub residual: f64,
    pub reports: Vec<VerificationReport>,
}

impl ContinuumChain {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain serialization")
    }
}

/// Runs the nested covering construction from `x` at the scale of `d(x,y)`,
/// shrinking ball masses by at least 4 per stage until the sampling floor,
/// and checks stage overlap, geometric decay, and the endpoint bound
/// `q(x,y) <= 4 C_D^ell C_2 mass(pair_ball)^{1/2}`.
pub fn connecting_continuum(
    space: &MetricMeasureSpace,
    q: &QMatrix,
    x: usize,
    y: usize,
    ledger: &ConstantLedger,
) -> Result<ContinuumChain, ChainError> {
    let d = space.dist(x, y);
    let need = 2.0 * ledger.lambda * d;
    let need_base = match space.metric() {
        Metric::Snowflake { theta } => need.powf(1.0 / theta),
        _ => need,
    };
    let clearance = space.boundary_clearance(x);
    if need_base > clearance {
        return Err(ChainError::OutsideRegion { center: x, required: need_base, clearance });
    }

    let pitch = space.metric_pitch();
    let adj = adjacency(space, 1.6);
    let median_w = {
        let mut w = space.weights().to_vec();
        w.sort_by(f64::total_cmp);
        w[w.len() / 2]
    };
    let cap = ledger.stage_cap();

    // The window the construction would impose on per-stage ball masses is
    // far below one cell at sampling resolution, so each stage clamps to the
    // atomic floor; the clamp is recorded on the stage.
    let window_hi = |mass_b: f64| mass_b / (4.0 * ledger.c_d.powi(7 + 7 * ledger.ell));

    let connected_piece = |center: usize, radius: f64| -> Vec<usize> {
        let ball = space.ball_closed(center, radius);
        let inside: Vec<bool> = {
            let mut f = vec![false; space.len()];
            for &i in &ball.members {
                f[i] = true;
            }
            f
        };
        let mut seen = vec![false; space.len()];
        let mut stack = vec![center];
        seen[center] = true;
        let mut out = vec![center];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if inside[w] && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                    out.push(w);
                }
            }
        }
        out.sort_unstable();
        out
    };

    let mut stages: Vec<ContinuumStage> = Vec::new();
    let mut radius = d;
    let mut reports: Vec<VerificationReport> = Vec::new();
    loop {
        if stages.len() as f64 >= cap {
            return Err(ChainError::ConstructionStalled {
                cap: cap as usize,
                scale: radius,
            });
        }
        let ball = space.ball_closed(x, radius);
        let clamped = window_hi(ball.mass) < median_w;
        let points = connected_piece(x, radius);
        let diam = max_q_over(&points, q);
        let stage_index = stages.len(); // 0-based; stage j = index + 1
        if let Some(prev) = stages.last() {
            reports.push(
                VerificationReport::check(
                    "stage_decay",
                    ball.mass.sqrt(),
                    0.5 * prev.mass.sqrt(),
                    json!({"stage": stage_index + 1}),
                )
                .with_note("sqrt-mass at least halves per stage"),
            );
            let overlap = points.iter().any(|p| prev.points.binary_search(p).is_ok());
            reports.push(VerificationReport::check(
                "stage_overlap",
                if overlap { 0.0 } else { 1.0 },
                0.0,
                json!({"stage": stage_index + 1}),
            ));
        }
        stages.push(ContinuumStage {
            center: x,
            radius,
            mass: ball.mass,
            points,
            diam_q: diam,
            clamped,
        });
        // Per-stage diameter bound against the first-stage mass.
        let first_mass = stages[0].mass;
        reports.push(
            VerificationReport::check(
                "stage_diam_q",
                diam,
                (2.0f64).powi(1 - (stage_index as i32 + 1)) * ledger.c_2() * first_mass.sqrt(),
                json!({"stage": stage_index + 1}),
            )
            .with_constant("c_2", ledger.c_2()),
        );
        reports.push(VerificationReport::check(
            "stage_cardinality",
            stages[stage_index].points.len() as f64,
            cap,
            json!({"stage": stage_index + 1}),
        ));

        // Stop at the sampling floor.
        if ball.mass < 8.0 * median_w || radius <= 2.0 * pitch {
            break;
        }
        // Shrink: largest radius whose closed ball drops the mass by >= 4.
        // Cumulative masses are grouped per distinct radius so distance ties
        // stay together (a closed ball can't split a tie group).
        let target = ball.mass / 4.0;
        let mut sorted: Vec<(f64, usize)> =
            ball.members.iter().map(|&i| (space.dist(x, i), i)).collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut masses: Vec<(f64, f64)> = Vec::new(); // (radius, cumulative mass)
        let mut acc = 0.0;
        for (dist, i) in sorted {
            acc += space.weight(i);
            match masses.last_mut() {
                Some(last) if last.0 == dist => last.1 = acc,
                _ => masses.push((dist, acc)),
            }
        }
        let mut next_radius = pitch * 0.5;
        for &(rad, m) in masses.iter().rev() {
            if m <= target {
                next_radius = rad.max(pitch * 0.5);
                break;
            }
        }
        if next_radius >= radius {
            break;
        }
        radius = next_radius;
    }

    let residual =
        (2.0f64).powi(1 - stages.len() as i32) * ledger.c_2() * stages[0].mass.sqrt();
    reports.push(
        VerificationReport::check(
            "endpoint_bound",
            q.get(x, y),
            ledger.final_factor() * space.pair_ball_mass(x, y).sqrt(),
            json!({"x": x, "y": y, "stages": stages.len()}),
        )
        .with_constant("factor", ledger.final_factor()),
    );

    Ok(ContinuumChain { x, y, stages, residual, reports })
}

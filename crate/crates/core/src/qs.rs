//! Quasisymmetry diagnostics for discrete maps between finite metric
//! measure spaces: the weak distortion constant over sampled triples, an
//! empirical distortion envelope, Möbius renormalization of planar or
//! spherical targets, and the annulus density construction that converts
//! measured structure constants into a modulus upper bound.

use crate::chain::ConstantLedger;
use crate::geom::{self, Mobius, P2};
use crate::modulus::{
    admissibility_check, modulus_solve, DensityField, DomainGraph, ModulusError, PathFamily,
};
use crate::space::{Metric, MetricMeasureSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QsError {
    #[error("map covers {map} points but the space has {space}")]
    SizeMismatch { map: usize, space: usize },
    #[error("map is not a bijection: target {0} repeats")]
    NotBijective(usize),
    #[error("no triple passes the separation gate")]
    NoAdmissibleTriples,
    #[error("need at least three distinct candidates")]
    TooFewPoints,
    #[error("band too narrow: outer/inner ratio {0} is below 4")]
    BandTooNarrow(f64),
    #[error("the {0} of the ring holds no sample points")]
    EmptyRing(&'static str),
    #[error("point {0} maps to the Mobius pole; pick a different triple")]
    PoleCollision(usize),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
}

// ─── Maps and triple samples ───

/// An index bijection between the points of two spaces.  The spaces
/// themselves travel separately so one map can be reused across metrics on
/// the same point set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteMap {
    forward: Vec<usize>,
}

impl DiscreteMap {
    pub fn identity(n: usize) -> Self {
        DiscreteMap { forward: (0..n).collect() }
    }

    pub fn new(forward: Vec<usize>) -> Result<Self, QsError> {
        let n = forward.len();
        let mut seen = vec![false; n];
        for &t in &forward {
            if t >= n {
                return Err(QsError::SizeMismatch { map: t + 1, space: n });
            }
            if seen[t] {
                return Err(QsError::NotBijective(t));
            }
            seen[t] = true;
        }
        Ok(DiscreteMap { forward })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.forward[i]
    }

    pub fn inverse(&self) -> DiscreteMap {
        let mut back = vec![0usize; self.forward.len()];
        for (i, &t) in self.forward.iter().enumerate() {
            back[t] = i;
        }
        DiscreteMap { forward: back }
    }
}

/// How triples are drawn: every unordered triple on small spaces, a seeded
/// uniform sample on large ones.
#[derive(Debug, Clone, Copy)]
pub enum TripleSample {
    Exhaustive,
    Random { count: usize, seed: u64 },
}

impl TripleSample {
    /// Exhaustive up to 300 points, 100_000 seeded draws beyond.
    pub fn default_for(n: usize, seed: u64) -> Self {
        if n <= 300 {
            TripleSample::Exhaustive
        } else {
            TripleSample::Random { count: 100_000, seed }
        }
    }
}

/// Runs `visit(base, other1, other2)` over the sample; `other1 < other2`
/// and all three indices are distinct.
fn for_each_triple(n: usize, sample: TripleSample, mut visit: impl FnMut(usize, usize, usize)) {
    match sample {
        TripleSample::Exhaustive => {
            for y0 in 0..n {
                for j in 0..n {
                    if j == y0 {
                        continue;
                    }
                    for k in (j + 1)..n {
                        if k != y0 {
                            visit(y0, j, k);
                        }
                    }
                }
            }
        }
        TripleSample::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut drawn = 0usize;
            while drawn < count {
                let y0 = rng.random_range(0..n);
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if y0 == a || y0 == b || a == b {
                    continue;
                }
                visit(y0, a.min(b), a.max(b));
                drawn += 1;
            }
        }
    }
}

// ─── Weak distortion constant ───

#[derive(Debug, Clone, Serialize)]
pub struct WeakQsEstimate {
    /// Weak distortion constant, clamped to at least one.
    pub t: f64,
    /// Unclamped maximal image ratio.
    pub raw_max: f64,
    /// `(y0, y1, y2)` achieving the maximum, gate-ordered.
    pub witness: [usize; 3],
    pub admitted: usize,
}

/// Largest image distance ratio over gate-admitted triples.
///
/// A triple `(y0, y1, y2)` with `d(y0,y1) <= d(y0,y2) <= diam/10` in the
/// map's source contributes the ratio `d'(m y0, m y1) / d'(m y0, m y2)` in
/// its target; the estimate is the maximum.  The roles of `y1` and `y2` are
/// assigned by the gate ordering, so the input ratio never exceeds one and
/// any output ratio above one is genuine distortion.
pub fn weak_qs_constant(
    source: &MetricMeasureSpace,
    target: &MetricMeasureSpace,
    map: &DiscreteMap,
    sample: TripleSample,
) -> Result<WeakQsEstimate, QsError> {
    let n = source.len();
    if map.len() != n || target.len() != n {
        return Err(QsError::SizeMismatch { map: map.len(), space: n });
    }
    let gate = source.diameter() / 10.0;

    let evaluate = |y0: usize, j: usize, k: usize| -> Option<(f64, [usize; 3])> {
        let (dj, dk) = (source.dist(y0, j), source.dist(y0, k));
        let (y1, y2, d1, d2) =
            if dj <= dk { (j, k, dj, dk) } else { (k, j, dk, dj) };
        if !(d1 > 0.0) || d2 > gate {
            return None;
        }
        let e1 = target.dist(map.apply(y0), map.apply(y1));
        let e2 = target.dist(map.apply(y0), map.apply(y2));
        if !(e2 > 0.0) {
            return None;
        }
        Some((e1 / e2, [y0, y1, y2]))
    };

    let fold = |best: Option<(f64, [usize; 3])>, cand: Option<(f64, [usize; 3])>| {
        match (best, cand) {
            (None, c) => c,
            (b, None) => b,
            (Some(b), Some(c)) => {
                // deterministic under reordering: value first, indices break ties
                if c.0 > b.0 || (c.0 == b.0 && c.1 < b.1) {
                    Some(c)
                } else {
                    Some(b)
                }
            }
        }
    };

    let (best, admitted) = match sample {
        TripleSample::Exhaustive => (0..n)
            .into_par_iter()
            .map(|y0| {
                let mut local = None;
                let mut count = 0usize;
                for j in 0..n {
                    if j == y0 {
                        continue;
                    }
                    for k in (j + 1)..n {
                        if k == y0 {
                            continue;
                        }
                        if let Some(c) = evaluate(y0, j, k) {
                            count += 1;
                            local = fold(local, Some(c));
                        }
                    }
                }
                (local, count)
            })
            .reduce(
                || (None, 0),
                |a, b| (fold(a.0, b.0), a.1 + b.1),
            ),
        TripleSample::Random { .. } => {
            let mut local = None;
            let mut count = 0usize;
            for_each_triple(n, sample, |y0, j, k| {
                if let Some(c) = evaluate(y0, j, k) {
                    count += 1;
                    local = fold(local, Some(c));
                }
            });
            (local, count)
        }
    };

    let (raw_max, witness) = best.ok_or(QsError::NoAdmissibleTriples)?;
    Ok(WeakQsEstimate { t: raw_max.max(1.0), raw_max, witness, admitted })
}

// ─── Distortion envelope ───

/// Empirical distortion envelope: observed `(input ratio, output ratio)`
/// pairs regularized into a nondecreasing running maximum.  The envelope is
/// a certified floor for any true distortion function on the sampled
/// ratios; it never claims an upper bound.
#[derive(Debug, Clone, Serialize)]
pub struct EtaEnvelope {
    /// `(s, eta_hat(s))`, sorted by `s`, `eta_hat` nondecreasing.
    pub samples: Vec<(f64, f64)>,
}

impl EtaEnvelope {
    /// Envelope value at `s`: the largest observed output ratio among
    /// sampled input ratios `<= s` (zero below the first sample).
    pub fn eval(&self, s: f64) -> f64 {
        match self.samples.partition_point(|&(x, _)| x <= s) {
            0 => 0.0,
            k => self.samples[k - 1].1,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,eta\n");
        for &(s, e) in &self.samples {
            out.push_str(&format!("{s},{e}\n"));
        }
        out
    }
}

pub fn eta_estimate(
    source: &MetricMeasureSpace,
    target: &MetricMeasureSpace,
    map: &DiscreteMap,
    sample: TripleSample,
) -> Result<EtaEnvelope, QsError> {
    let n = source.len();
    if map.len() != n || target.len() != n {
        return Err(QsError::SizeMismatch { map: map.len(), space: n });
    }
    let mut scatter: Vec<(f64, f64)> = Vec::new();
    for_each_triple(n, sample, |y0, j, k| {
        let (dj, dk) = (source.dist(y0, j), source.dist(y0, k));
        if !(dj > 0.0) || !(dk > 0.0) {
            return;
        }
        let (ej, ek) = (
            target.dist(map.apply(y0), map.apply(j)),
            target.dist(map.apply(y0), map.apply(k)),
        );
        if !(ej > 0.0) || !(ek > 0.0) {
            return;
        }
        // both orientations of the same triple are valid observations
        scatter.push((dj / dk, ej / ek));
        scatter.push((dk / dj, ek / ej));
    });
    scatter.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(scatter.len());
    let mut running = 0.0f64;
    for (s, e) in scatter {
        running = running.max(e);
        match samples.last_mut() {
            Some(last) if last.0 == s => last.1 = running,
            _ => samples.push((s, running)),
        }
    }
    Ok(EtaEnvelope { samples })
}

// ─── Normalization ───

/// Which chart the target coordinates live in.  `Sphere` declares the
/// positions to be stereographic plane coordinates of sphere points; since
/// a sphere Möbius transformation acts on that chart by the same fractional
/// linear formula, the normalization arithmetic coincides with the plane
/// case and the output is always a plane model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetModel {
    Plane,
    Sphere,
}

#[derive(Debug, Clone)]
pub struct Normalization {
    pub map: DiscreteMap,
    /// Target space with Möbius-transformed positions (plane model).
    pub target: MetricMeasureSpace,
    /// Marked points in role order `(a0, a1, a_inf)`, target ids.
    pub triple: [usize; 3],
    /// Where `a_inf` lands: `(standard_third, 0)`.  The first two roles are
    /// pinned at `(0,0)` and `(1,0)`; the plane chart cannot hold the point
    /// at infinity, so the third role takes the first position in the
    /// ladder `-1, -2, ...` whose transformation keeps every sample finite.
    pub standard_third: f64,
    /// Minimal pairwise distance between the marked points' preimages,
    /// measured in the source metric.
    pub separation: f64,
    /// The floor the triple was asked to clear: source diameter over ten.
    pub required: f64,
    pub achieved: bool,
}

/// Chooses marked points whose preimages are maximally spread and
/// standardizes their target positions by a Möbius transformation.
///
/// The triple maximizing the minimal pairwise preimage distance is selected
/// from `candidates` (ids in the target); when even the best triple falls
/// short of the diameter-over-ten floor it is still returned, flagged.  The
/// marked points land at `0`, `1` and a recorded spot on the negative real
/// axis — the finite stand-in for the infinity role.  Each choice of that
/// spot puts the transformation's pole at a different point, so a sample
/// sitting on one pole (on symmetric grids the fourth corner does exactly
/// this) just moves the choice down the ladder; only a configuration
/// obstructing the whole ladder is reported as an error.
pub fn normalize_map(
    source: &MetricMeasureSpace,
    target: &MetricMeasureSpace,
    map: &DiscreteMap,
    candidates: &[usize],
    model: TargetModel,
) -> Result<Normalization, QsError> {
    let n = source.len();
    if map.len() != n || target.len() != n {
        return Err(QsError::SizeMismatch { map: map.len(), space: n });
    }
    let _ = model; // both charts share the fractional linear arithmetic
    let mut ids: Vec<usize> = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 3 {
        return Err(QsError::TooFewPoints);
    }
    let back = map.inverse();

    let mut best: Option<([usize; 3], f64)> = None;
    for (a, &p) in ids.iter().enumerate() {
        for (b, &q) in ids.iter().enumerate().skip(a + 1) {
            for &r in ids.iter().skip(b + 1) {
                let sep = source
                    .dist(back.apply(p), back.apply(q))
                    .min(source.dist(back.apply(p), back.apply(r)))
                    .min(source.dist(back.apply(q), back.apply(r)));
                if best.is_none_or(|(_, s)| sep > s) {
                    best = Some(([p, q, r], sep));
                }
            }
        }
    }
    let (triple, separation) = best.expect("at least one triple exists");
    let required = source.diameter() / 10.0;

    let pos = |i: usize| target.point(i);
    let m = Mobius::three_point(pos(triple[0]), pos(triple[1]), pos(triple[2]));
    let span = target.diameter().max(1.0);

    let mut last_blocked = 0usize;
    for step in 1..=(n + 2) {
        let q = -(step as f64);
        // append w -> q w / (w + q - 1), which fixes 0 and 1 and brings
        // infinity to q; its pole differs for every q
        let composed = Mobius {
            a: [q * m.a[0], q * m.a[1]],
            b: [q * m.b[0], q * m.b[1]],
            c: [m.a[0] + (q - 1.0) * m.c[0], m.a[1] + (q - 1.0) * m.c[1]],
            d: [m.b[0] + (q - 1.0) * m.d[0], m.b[1] + (q - 1.0) * m.d[1]],
        };
        let mut moved: Vec<P2> = Vec::with_capacity(n);
        let mut blocked = None;
        for i in 0..n {
            match composed.apply(pos(i)) {
                Some(w)
                    if w[0].is_finite()
                        && w[1].is_finite()
                        && geom::norm(w) <= 1e9 * span =>
                {
                    moved.push(w)
                }
                _ => {
                    blocked = Some(i);
                    break;
                }
            }
        }
        if let Some(i) = blocked {
            last_blocked = i;
            continue;
        }
        let normalized = MetricMeasureSpace::build(
            moved,
            Metric::Euclidean,
            target.weights().to_vec(),
            target.boundary().clone(),
        )
        .expect("transformed positions stay a valid space");
        return Ok(Normalization {
            map: map.clone(),
            target: normalized,
            triple,
            standard_third: q,
            separation,
            required,
            achieved: separation >= required,
        });
    }
    Err(QsError::PoleCollision(last_blocked))
}

// ─── Annulus density bound ───

#[derive(Debug, Clone, Serialize)]
pub struct AnnulusBound {
    /// Number of dyadic annuli fitting between the scales.
    pub k: usize,
    /// `2 pi C_W^2 C_S^2 C_D^6 / k`.
    pub bound: f64,
    /// The candidate density, one value per space point.
    pub density: Vec<f64>,
    /// Mass integral of the density.
    pub objective: f64,
    /// Shortest crossing length of the density over the discrete family.
    pub shortest: f64,
    /// Whether the density is admissible (shortest within rounding of one).
    pub admissible: bool,
    /// Solver value for the same ring family.
    pub numeric_modulus: f64,
    /// Whether the solver value respects the bound.
    pub consistent: bool,
}

/// Builds the layered annulus density around `center` and converts the
/// space's structure constants into a modulus upper bound for the family
/// joining the inner ball to the outside of the largest annulus.
///
/// `lambda_a` is the inner scale and `b_over_lambda` the outer one;
/// `k` is the largest integer with `b_over_lambda >= 2^k * lambda_a`, and
/// the ratio must allow `k >= 2`.  Annulus `j` carries the constant density
/// `C_W C_D / (k * mass(B(center, 2^j lambda_a))^(1/2))`; its admissibility
/// and the solver's value on the same family are cross-checked on a
/// proximity graph with edges up to `reach`.
pub fn annulus_density_bound(
    space: &MetricMeasureSpace,
    center: usize,
    lambda_a: f64,
    b_over_lambda: f64,
    constants: &ConstantLedger,
    reach: f64,
) -> Result<AnnulusBound, QsError> {
    let ratio = b_over_lambda / lambda_a;
    if !(ratio >= 4.0) {
        return Err(QsError::BandTooNarrow(ratio));
    }
    let k = ratio.log2().floor() as usize;
    let c_s = constants.c_s_measured.unwrap_or_else(|| constants.c_s_bound());
    let bound =
        2.0 * PI * constants.c_w * constants.c_w * c_s * c_s * constants.c_d.powi(6) / k as f64;

    let n = space.len();
    let mut density = vec![0.0f64; n];
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    let outer_radius = 2f64.powi(k as i32) * lambda_a;
    let shell_mass: Vec<f64> = (1..=k)
        .map(|j| space.ball_mass(center, 2f64.powi(j as i32) * lambda_a))
        .collect();
    for i in 0..n {
        let d = space.dist(center, i);
        if d <= lambda_a {
            inner.push(i);
        } else if d > outer_radius {
            outer.push(i);
        } else {
            let j = (d / lambda_a).log2().ceil().max(1.0) as usize;
            let j = j.min(k);
            density[i] =
                constants.c_w * constants.c_d / (k as f64 * shell_mass[j - 1].sqrt());
        }
    }
    if inner.is_empty() {
        return Err(QsError::EmptyRing("inner side"));
    }
    if outer.is_empty() {
        return Err(QsError::EmptyRing("outer side"));
    }
    let objective: f64 = (0..n).map(|i| density[i] * density[i] * space.weight(i)).sum();

    let graph = DomainGraph::from_space(space, reach);
    let family = PathFamily::connecting(inner, outer);
    let verdict = admissibility_check(&graph, &family, &DensityField { rho: density.clone() })?;
    let sol = modulus_solve(&graph, &family, 0.02)?;
    Ok(AnnulusBound {
        k,
        bound,
        density,
        objective,
        shortest: verdict.shortest,
        admissible: verdict.pass,
        numeric_modulus: sol.modulus,
        consistent: sol.modulus <= bound * (1.0 + 1e-9),
    })
}

/// Cap on the annulus count reachable under the measured constants:
/// `2 pi^3 C_W^2 C_S^2 C_D^6 (10 M)^M (M + 2)^2 / alpha^M`.
pub fn final_ratio_bound(constants: &ConstantLedger, alpha: f64, m: usize) -> f64 {
    let c_s = constants.c_s_measured.unwrap_or_else(|| constants.c_s_bound());
    2.0 * PI.powi(3)
        * constants.c_w
        * constants.c_w
        * c_s
        * c_s
        * constants.c_d.powi(6)
        * (10.0 * m as f64).powi(m as i32)
        * ((m as f64 + 2.0) * (m as f64 + 2.0))
        / alpha.powi(m as i32)
}

/// Log2 of the quantitative weak distortion bound `2^(k_max + 1) lambda^2`
/// — the bound itself overflows any float for realistic `k_max`.
pub fn quantitative_t_log2(k_max: f64, lambda: f64) -> f64 {
    k_max + 1.0 + 2.0 * lambda.log2()
}

// ─── Report bundle ───

#[derive(Debug, Clone, Serialize)]
pub struct NormalizationSummary {
    pub triple: [usize; 3],
    pub separation: f64,
    pub required: f64,
    pub achieved: bool,
}

/// Everything the distortion harness reports for one map.
#[derive(Debug, Clone, Serialize)]
pub struct QsReport {
    pub t: f64,
    pub raw_max: f64,
    pub witness: [usize; 3],
    pub admitted_triples: usize,
    pub eta: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationSummary>,
}

impl QsReport {
    pub fn assemble(
        weak: &WeakQsEstimate,
        eta: &EtaEnvelope,
        normalization: Option<&Normalization>,
    ) -> QsReport {
        QsReport {
            t: weak.t,
            raw_max: weak.raw_max,
            witness: weak.witness,
            admitted_triples: weak.admitted,
            eta: eta.samples.clone(),
            normalization: normalization.map(|n| NormalizationSummary {
                triple: n.triple,
                separation: n.separation,
                required: n.required,
                achieved: n.achieved,
            }),
        }
    }
}

// ─── Tests ───

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{generate, Generator};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn square(n: usize) -> MetricMeasureSpace {
        generate(&Generator::Square { n }).unwrap()
    }

    fn snowflaked(n: usize, theta: f64) -> MetricMeasureSpace {
        let base = square(n);
        MetricMeasureSpace::build(
            base.points().to_vec(),
            Metric::Snowflake { theta },
            base.weights().to_vec(),
            base.boundary().clone(),
        )
        .unwrap()
    }

    fn scaled(space: &MetricMeasureSpace, sigma: f64) -> MetricMeasureSpace {
        MetricMeasureSpace::build(
            space
                .points()
                .iter()
                .map(|p| [p[0] * sigma, p[1] * sigma])
                .collect(),
            Metric::Euclidean,
            space.weights().to_vec(),
            space.boundary().clone(),
        )
        .unwrap()
    }

    #[test]
    fn identity_map_has_unit_constant() {
        let s = square(12);
        let map = DiscreteMap::identity(s.len());
        let est =
            weak_qs_constant(&s, &s, &map, TripleSample::Exhaustive).unwrap();
        assert_eq!(est.t, 1.0);
        assert_eq!(est.raw_max, 1.0);
        assert!(est.admitted > 0);
    }

    #[test]
    fn dyadic_similarity_is_exactly_invariant() {
        let s = square(10);
        let big = scaled(&s, 4.0);
        let map = DiscreteMap::identity(s.len());
        let same = weak_qs_constant(&s, &s, &map, TripleSample::Exhaustive).unwrap();
        let to_big = weak_qs_constant(&s, &big, &map, TripleSample::Exhaustive).unwrap();
        let from_big = weak_qs_constant(&big, &s, &map, TripleSample::Exhaustive).unwrap();
        assert_eq!(to_big.t, 1.0);
        assert_eq!(to_big.raw_max, same.raw_max);
        assert_eq!(from_big.raw_max, same.raw_max);
        assert_eq!(to_big.witness, same.witness);
    }

    #[test]
    fn general_similarity_is_invariant_to_rounding() {
        let s = square(10);
        let big = scaled(&s, 1.7);
        let map = DiscreteMap::identity(s.len());
        let est = weak_qs_constant(&s, &big, &map, TripleSample::Exhaustive).unwrap();
        assert!((est.t - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snowflake_follows_the_exact_power_law() {
        let n = 10;
        let rough = snowflaked(n, 0.5);
        let flat = square(n);
        let map = DiscreteMap::identity(flat.len());
        let env = eta_estimate(&rough, &flat, &map, TripleSample::Exhaustive).unwrap();
        for &(s, e) in &env.samples {
            // the envelope is a running max of exact squares, so it stays a
            // square of a sampled ratio
            assert!(e <= s * s * (1.0 + 1e-12) + 1e-15, "s={s} e={e}");
        }
        let probe = env.samples[env.samples.len() / 2].0;
        assert_relative_eq!(env.eval(probe), probe * probe, max_relative = 1e-9);
    }

    #[test]
    fn snowflake_weak_constant_is_unit_where_the_gate_admits() {
        // a grid's pitch can exceed a tenth of its snowflaked diameter, so
        // plant a tight cluster to give the gate something to admit
        let mut pts = square(5).points().to_vec();
        pts.push([0.51, 0.52]);
        pts.push([0.515, 0.52]);
        pts.push([0.51, 0.524]);
        let w = vec![1.0; pts.len()];
        let rough = MetricMeasureSpace::build(
            pts.clone(),
            Metric::Snowflake { theta: 0.5 },
            w.clone(),
            BTreeMap::new(),
        )
        .unwrap();
        let flat =
            MetricMeasureSpace::build(pts, Metric::Euclidean, w, BTreeMap::new()).unwrap();
        let map = DiscreteMap::identity(flat.len());
        let est = weak_qs_constant(&rough, &flat, &map, TripleSample::Exhaustive).unwrap();
        // gate-ordered input ratios stay below one and square downward
        assert_eq!(est.t, 1.0);
        assert!(est.raw_max < 1.0);
        assert_eq!(est.admitted, 3);
    }

    #[test]
    fn per_triple_power_law_is_exact() {
        let rough = snowflaked(6, 0.5);
        let flat = square(6);
        let n = flat.len();
        for y0 in 0..n {
            for y1 in 0..n {
                for y2 in 0..n {
                    if y0 == y1 || y0 == y2 || y1 == y2 {
                        continue;
                    }
                    let s = rough.dist(y0, y1) / rough.dist(y0, y2);
                    let e = flat.dist(y0, y1) / flat.dist(y0, y2);
                    assert_relative_eq!(e, s * s, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn envelope_is_monotone_and_respects_composition() {
        let rough = snowflaked(8, 0.5);
        let flat = square(8);
        let map = DiscreteMap::identity(flat.len());
        let sample = TripleSample::Exhaustive;
        let forward = eta_estimate(&rough, &flat, &map, sample).unwrap();
        let backward = eta_estimate(&flat, &rough, &map, sample).unwrap();
        let round = eta_estimate(&rough, &rough, &map, sample).unwrap();
        for w in forward.samples.windows(2) {
            assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        }
        for &(s, e) in &round.samples {
            let through = backward.eval(forward.eval(s));
            assert!(
                e <= through + 1e-9,
                "composition envelope broken at s={s}: {e} vs {through}"
            );
        }
    }

    #[test]
    fn too_sparse_a_space_has_no_admissible_triples() {
        let s = square(3);
        let map = DiscreteMap::identity(s.len());
        // every positive distance exceeds a tenth of the diameter
        let out = weak_qs_constant(&s, &s, &map, TripleSample::Exhaustive);
        assert!(matches!(out, Err(QsError::NoAdmissibleTriples)));
    }

    #[test]
    fn random_sampling_is_deterministic() {
        let s = square(14);
        let map = DiscreteMap::identity(s.len());
        let sample = TripleSample::Random { count: 5000, seed: 11 };
        let a = weak_qs_constant(&s, &s, &map, sample).unwrap();
        let b = weak_qs_constant(&s, &s, &map, sample).unwrap();
        assert_eq!(a.raw_max, b.raw_max);
        assert_eq!(a.witness, b.witness);
        assert_eq!(a.admitted, b.admitted);
    }

    #[test]
    fn map_validation_rejects_repeats() {
        assert!(matches!(
            DiscreteMap::new(vec![0, 0, 1]),
            Err(QsError::NotBijective(0))
        ));
        let map = DiscreteMap::new(vec![2, 0, 1]).unwrap();
        let back = map.inverse();
        for i in 0..3 {
            assert_eq!(back.apply(map.apply(i)), i);
        }
    }

    #[test]
    fn normalization_standardizes_the_marked_points() {
        let s = square(10);
        let map = DiscreteMap::identity(s.len());
        let n = s.len();
        // candidates: a deliberately clustered triple plus the corners
        let candidates = vec![0, 1, 10, n - 1, n - 10, 9];
        let norm =
            normalize_map(&s, &s, &map, &candidates, TargetModel::Plane).unwrap();
        assert_eq!(norm.triple, [0, 9, 90], "three spread corners win");
        let clustered = s.dist(0, 1).min(s.dist(0, 10)).min(s.dist(1, 10));
        assert!(norm.separation > clustered);
        assert!(norm.achieved, "corner triples clear diameter/10");
        // sending three corners of a square to (0, 1, -1) parks the pole on
        // the fourth corner, so the ladder settles on -2
        assert_eq!(norm.standard_third, -2.0);
        let p0 = norm.target.point(norm.triple[0]);
        let p1 = norm.target.point(norm.triple[1]);
        let p2 = norm.target.point(norm.triple[2]);
        assert!(geom::dist(p0, [0.0, 0.0]) < 1e-9);
        assert!(geom::dist(p1, [1.0, 0.0]) < 1e-9);
        assert!(geom::dist(p2, [-2.0, 0.0]) < 1e-9);
        for i in 0..n {
            let p = norm.target.point(i);
            assert!(p[0].is_finite() && p[1].is_finite());
        }
    }

    #[test]
    fn normalization_spreads_clustered_targets() {
        // identity indices, but the target is shrunk a hundredfold: the
        // marked images start out nearly coincident and must end up
        // standard-separated
        let s = square(10);
        let tiny = scaled(&s, 0.01);
        let map = DiscreteMap::identity(s.len());
        let candidates = vec![0, 9, 90, 99, 55];
        let norm =
            normalize_map(&s, &tiny, &map, &candidates, TargetModel::Plane).unwrap();
        let pre = |i: usize, j: usize| {
            geom::dist(tiny.point(norm.triple[i]), tiny.point(norm.triple[j]))
        };
        let post = |i: usize, j: usize| {
            geom::dist(norm.target.point(norm.triple[i]), norm.target.point(norm.triple[j]))
        };
        let pre_min = pre(0, 1).min(pre(0, 2)).min(pre(1, 2));
        let post_min = post(0, 1).min(post(0, 2)).min(post(1, 2));
        assert!(pre_min < 0.02);
        assert!(post_min >= 1.0 - 1e-9);
        assert!(post_min > pre_min);
        assert!(norm.achieved, "separation is judged in the source");
    }

    #[test]
    fn normalization_needs_three_candidates() {
        let s = square(4);
        let map = DiscreteMap::identity(s.len());
        let out = normalize_map(&s, &s, &map, &[0, 1], TargetModel::Plane);
        assert!(matches!(out, Err(QsError::TooFewPoints)));
    }

    #[test]
    fn sphere_chart_normalization_matches_the_plane_chart() {
        // stereographic coordinates turn a sphere Möbius transformation
        // into the same fractional linear formula, so both declarations
        // give identical output
        let s = square(8);
        let map = DiscreteMap::identity(s.len());
        let n = s.len();
        let candidates = vec![0, 7, n - 8, n - 1, n / 2];
        let plane =
            normalize_map(&s, &s, &map, &candidates, TargetModel::Plane).unwrap();
        let sphere =
            normalize_map(&s, &s, &map, &candidates, TargetModel::Sphere).unwrap();
        assert_eq!(plane.triple, sphere.triple);
        assert_eq!(plane.standard_third, sphere.standard_third);
        assert_eq!(plane.separation, sphere.separation);
        for i in 0..n {
            assert_eq!(plane.target.point(i), sphere.target.point(i));
        }
    }

    #[test]
    fn q_deformation_envelope_stays_comparably_bounded() {
        // pair-level comparability of the chain metric with the euclidean
        // one forces the whole envelope under a scaled square law
        let flat = square(8);
        let rough = snowflaked(8, 0.5);
        let q = crate::chain::q_space(&flat, 4.0 * flat.pitch(), 2.0).unwrap();
        let map = DiscreteMap::identity(flat.len());
        let n = flat.len();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let ratio = q.dist(i, j) / flat.dist(i, j);
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        assert!(lo > 0.0 && hi.is_finite());
        let env = eta_estimate(&rough, &q, &map, TripleSample::Exhaustive).unwrap();
        let c = hi / lo;
        for &(s, e) in &env.samples {
            assert!(e <= c * s * s * (1.0 + 1e-9), "s={s} e={e} c={c}");
        }
        assert!(env.eval(1.0) <= c * (1.0 + 1e-9));
    }

    fn measured_ledger(space: &MetricMeasureSpace) -> ConstantLedger {
        let doubling = crate::regularity::doubling_constant(
            space,
            &crate::regularity::dyadic_sample(space),
        )
        .unwrap();
        let mut c_w = 0.0f64;
        let mut c_s = 0.0f64;
        let n = space.len();
        for i in (0..n).step_by(7) {
            for j in ((i + 1)..n).step_by(5) {
                let d = space.dist(i, j);
                if d == 0.0 {
                    continue;
                }
                let root_mass = space.pair_ball_mass(i, j).sqrt();
                c_w = c_w.max(root_mass / d);
                c_s = c_s.max(d / root_mass);
            }
        }
        ConstantLedger::new(c_w, doubling.c_d, 1.0).with_c_s(c_s)
    }

    #[test]
    fn annulus_density_is_admissible_on_the_square() {
        let s = square(20);
        let ledger = measured_ledger(&s);
        let center = s
            .points()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                geom::dist(*a.1, [0.5, 0.5]).total_cmp(&geom::dist(*b.1, [0.5, 0.5]))
            })
            .unwrap()
            .0;
        let reach = 1.5 * s.pitch();
        let out =
            annulus_density_bound(&s, center, 0.1, 0.41, &ledger, reach).unwrap();
        assert_eq!(out.k, 2);
        assert!(out.admissible, "shortest crossing {}", out.shortest);
        assert!(out.consistent, "numeric {} vs bound {}", out.numeric_modulus, out.bound);
        assert!(out.objective > 0.0 && out.objective.is_finite());
        assert_relative_eq!(
            out.bound,
            PI * ledger.c_w * ledger.c_w
                * ledger.c_s_measured.unwrap().powi(2)
                * ledger.c_d.powi(6),
            max_relative = 1e-12
        );
    }

    #[test]
    fn annulus_band_must_span_a_factor_four() {
        let s = square(10);
        let ledger = ConstantLedger::new(1.0, 1.0, 1.0).with_c_s(1.0);
        let out = annulus_density_bound(&s, 0, 0.1, 0.39, &ledger, 1.5 * s.pitch());
        assert!(matches!(out, Err(QsError::BandTooNarrow(_))));
    }

    #[test]
    fn minimal_band_bound_is_pi_times_the_constants() {
        // k = 2 turns the leading 2 pi / k into pi exactly
        let ledger = ConstantLedger::new(1.0, 1.0, 1.0).with_c_s(1.0);
        let s = square(16);
        let center = s.len() / 2 + 8;
        let out = annulus_density_bound(&s, center, 0.08, 0.33, &ledger, 1.5 * s.pitch())
            .unwrap();
        assert_eq!(out.k, 2);
        assert_relative_eq!(out.bound, PI, max_relative = 1e-12);
    }

    #[test]
    fn doubling_the_outer_scale_increments_k() {
        let ledger = ConstantLedger::new(1.0, 1.0, 1.0).with_c_s(1.0);
        let s = square(24);
        let center = s
            .points()
            .iter()
            .enumerate()
            .min_by(|a, b| {
                geom::dist(*a.1, [0.5, 0.5]).total_cmp(&geom::dist(*b.1, [0.5, 0.5]))
            })
            .unwrap()
            .0;
        let reach = 1.5 * s.pitch();
        let narrow = annulus_density_bound(&s, center, 0.07, 0.29, &ledger, reach).unwrap();
        let wide = annulus_density_bound(&s, center, 0.07, 0.58, &ledger, reach).unwrap();
        assert_eq!(wide.k, narrow.k + 1);
        assert_relative_eq!(
            wide.bound / narrow.bound,
            narrow.k as f64 / wide.k as f64,
            max_relative = 1e-12
        );
    }

    #[test]
    fn ratio_bound_arithmetic() {
        let unit = ConstantLedger::new(1.0, 1.0, 1.0).with_c_s(1.0);
        let k1 = final_ratio_bound(&unit, 1.0, 1);
        assert_relative_eq!(k1, 180.0 * PI.powi(3), max_relative = 1e-12);
        let k2 = final_ratio_bound(&unit, 0.5, 2);
        let k2_ref = final_ratio_bound(&unit, 1.0, 2);
        assert_relative_eq!(k2 / k2_ref, 4.0, max_relative = 1e-12);
        // zero removed disks leave a positive, finite cap
        assert!(final_ratio_bound(&unit, 0.25, 0) > 0.0);
        let log_t = quantitative_t_log2(k1, 2.0);
        assert_relative_eq!(log_t, k1 + 3.0, max_relative = 1e-12);
    }

    #[test]
    fn report_serializes_with_envelope() {
        let s = square(10);
        let map = DiscreteMap::identity(s.len());
        let weak = weak_qs_constant(&s, &s, &map, TripleSample::Exhaustive).unwrap();
        let env = eta_estimate(
            &s,
            &s,
            &map,
            TripleSample::Random { count: 400, seed: 3 },
        )
        .unwrap();
        let report = QsReport::assemble(&weak, &env, None);
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"t\":1.0"));
        assert!(!text.contains("normalization"));
        let csv = env.to_csv();
        assert!(csv.starts_with("s,eta\n"));
    }
}

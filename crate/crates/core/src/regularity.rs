//! Regularity constants of a metric measure space.
//!
//! Measures the doubling constant of the mass distribution, fits power-law
//! bounds on ball-mass ratios, measures the linear local connectivity
//! constant, computes the boundary-separation constant, estimates Hausdorff
//! 2-content in a deformed metric, and verifies the ball-mass comparison
//! inequalities that tie the deformed metric back to the measure.

use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::report::VerificationReport;
use crate::space::MetricMeasureSpace;

#[derive(Debug, Error)]
pub enum RegularityError {
    #[error("empty sample")]
    EmptySample,
    #[error("radius {0} outside (0, diam)")]
    BadRadius(f64),
    #[error("need at least two labelled boundary components, found {0}")]
    NotEnoughComponents(usize),
    #[error("proximity graph at epsilon={0} is disconnected")]
    DisconnectedProximity(f64),
    #[error("scale {delta} below resolution {resolution}")]
    UnresolvableScale { delta: f64, resolution: f64 },
}

// ─── Doubling ───

#[derive(Debug, Clone, Serialize)]
pub struct DoublingEstimate {
    pub c_d: f64,
    /// `(center, radius)` achieving the constant.
    pub witness: (usize, f64),
    /// Zero-mass balls dropped from the sample (atomic-measure artifacts).
    pub skipped: usize,
    pub samples: usize,
}

/// Default doubling sample: every point crossed with dyadic radii up to half
/// the diameter.  Radii start at four sampling pitches; when the metric's
/// dynamic range is too compressed for that (e.g. strong snowflaking), the
/// start is lowered until at least one radius fits.
pub fn dyadic_sample(space: &MetricMeasureSpace) -> Vec<(usize, f64)> {
    let diam = space.diameter();
    let mut start = 4.0 * space.metric_pitch();
    let radii = loop {
        let mut radii = Vec::new();
        let mut r = start;
        while 2.0 * r <= diam {
            radii.push(r);
            r *= 2.0;
        }
        if !radii.is_empty() || start <= 1.01 * space.metric_pitch() {
            break radii;
        }
        start *= 0.5;
    };
    let mut out = Vec::with_capacity(space.len() * radii.len());
    for i in 0..space.len() {
        for &r in &radii {
            out.push((i, r));
        }
    }
    out
}

/// Measured doubling constant: the largest ratio `mass(B(x,2r)) / mass(B(x,r))`
/// over the sample.
pub fn doubling_constant(
    space: &MetricMeasureSpace,
    sample: &[(usize, f64)],
) -> Result<DoublingEstimate, RegularityError> {
    if sample.is_empty() {
        return Err(RegularityError::EmptySample);
    }
    let mut best = DoublingEstimate { c_d: 0.0, witness: (0, 0.0), skipped: 0, samples: 0 };
    for &(x, r) in sample {
        if !(r > 0.0) {
            return Err(RegularityError::BadRadius(r));
        }
        let inner = space.ball_mass(x, r);
        if !(inner > 0.0) {
            best.skipped += 1;
            continue;
        }
        let ratio = space.ball_mass(x, 2.0 * r) / inner;
        best.samples += 1;
        if ratio > best.c_d {
            best.c_d = ratio;
            best.witness = (x, r);
        }
    }
    if best.samples == 0 {
        return Err(RegularityError::EmptySample);
    }
    Ok(best)
}

// ─── Power-law mass bounds ───

#[derive(Debug, Clone, Serialize)]
pub struct MassPowerFit {
    /// Smallest constant in the upper bound `ratio <= c * (R/r)^alpha`.
    pub c: f64,
    /// Smallest exponent making the upper bound hold with `c = 1`; the lower
    /// bound `(R/r)^(1/alpha) <= ratio` is then verified with the same alpha.
    pub alpha: f64,
    /// Exponent predicted from the doubling constant (`log2 C_D`).
    pub alpha_from_c_d: f64,
    pub witness: (usize, f64, f64),
    pub reports: Vec<VerificationReport>,
}

/// Fits two-sided power-law bounds on ball-mass ratios over dyadic radius
/// pairs: `(R/r)^(1/alpha) <= mass(B(x,R))/mass(B(x,r)) <= c (R/r)^alpha`.
pub fn mass_power_fit(space: &MetricMeasureSpace, c_d: f64) -> MassPowerFit {
    // Half-octave radius ladder; lowered when the metric range is compressed,
    // so at least one radius pair always exists.
    let diam = space.diameter();
    let mut start = 4.0 * space.metric_pitch();
    let radii = loop {
        let mut radii = Vec::new();
        let mut r = start;
        while 2.0 * r <= diam {
            radii.push(r);
            r *= std::f64::consts::SQRT_2;
        }
        if radii.len() >= 2 || start <= 1.01 * space.metric_pitch() {
            break radii;
        }
        start *= 0.5;
    };
    // Smallest alpha with ratio <= (R/r)^alpha across all samples.
    let mut alpha = 1.0f64;
    let mut witness = (0usize, 0.0f64, 0.0f64);
    let mut pairs: Vec<(usize, f64, f64, f64)> = Vec::new(); // (x, r, R, ratio)
    for x in 0..space.len() {
        for (a, &r) in radii.iter().enumerate() {
            let lo = space.ball_mass(x, r);
            if !(lo > 0.0) {
                continue;
            }
            for &big in &radii[a + 1..] {
                let ratio = space.ball_mass(x, big) / lo;
                if ratio <= 1.0 {
                    continue;
                }
                pairs.push((x, r, big, ratio));
                let need = ratio.ln() / (big / r).ln();
                if need > alpha {
                    alpha = need;
                    witness = (x, r, big);
                }
            }
        }
    }
    let mut c = 1.0f64;
    let mut lower_worst: Option<(f64, f64, (usize, f64, f64))> = None;
    for &(x, r, big, ratio) in &pairs {
        c = c.max(ratio / (big / r).powf(alpha));
        let floor = (big / r).powf(1.0 / alpha);
        let slack = ratio - floor;
        if lower_worst.map(|(s, _, _)| slack < s).unwrap_or(true) {
            lower_worst = Some((slack, ratio, (x, r, big)));
        }
    }
    let mut reports = Vec::new();
    if let Some((_, ratio, (x, r, big))) = lower_worst {
        reports.push(
            VerificationReport::check(
                "mass_ratio_lower",
                (big / r).powf(1.0 / alpha),
                ratio,
                json!({"center": x, "r": r, "R": big}),
            )
            .with_constant("alpha", alpha),
        );
    }
    reports.push(
        VerificationReport::check(
            "mass_ratio_upper",
            pairs
                .iter()
                .map(|&(_, r, big, ratio)| ratio / (big / r).powf(alpha))
                .fold(0.0f64, f64::max),
            c,
            json!({"witness": [witness.0, witness.1, witness.2]}),
        )
        .with_constant("c", c)
        .with_constant("alpha", alpha),
    );
    MassPowerFit { c, alpha, alpha_from_c_d: c_d.log2(), witness, reports }
}

// ─── Linear local connectivity ───

#[derive(Debug, Clone, Serialize)]
pub struct LlcOutcome {
    pub pass: bool,
    /// First failing `(center, radius, condition)` when failing; condition 1
    /// is in-ball connectivity, 2 is out-of-ball connectivity.
    pub witness: Option<(usize, f64, u8)>,
}

fn proximity_adjacency(space: &MetricMeasureSpace) -> Result<Vec<Vec<usize>>, RegularityError> {
    let eps = 2.0 * space.metric_pitch();
    let adj: Vec<Vec<usize>> = (0..space.len())
        .map(|i| {
            space
                .neighbors_within(i, eps)
                .into_iter()
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    // The ambient graph must be connected for the conditions to be meaningful.
    let mut seen = vec![false; space.len()];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(RegularityError::DisconnectedProximity(eps));
    }
    Ok(adj)
}

fn one_component(adj: &[Vec<usize>], allowed: &[bool], members: &[usize]) -> bool {
    let Some(&start) = members.first() else { return true };
    if members.len() < 2 {
        return true;
    }
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if allowed[w] && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    members.iter().all(|&m| seen[m])
}

/// Checks both linear-local-connectivity conditions at a given `lambda` over
/// the sampled `(center, radius)` pairs: points of `B(x,r)` must connect
/// inside `B(x, lambda r)`, and points outside `B(x,r)` must connect while
/// avoiding `B(x, r/lambda)`.
pub fn llc_check(
    space: &MetricMeasureSpace,
    lambda: f64,
    samples: &[(usize, f64)],
) -> Result<LlcOutcome, RegularityError> {
    let adj = proximity_adjacency(space)?;
    let n = space.len();
    for &(x, r) in samples {
        // (i) in-ball connectivity within the lambda-dilate
        let inner = space.ball(x, r);
        if inner.members.len() >= 2 {
            let dilate = space.ball(x, lambda * r);
            let mut allowed = vec![false; n];
            for &i in &dilate.members {
                allowed[i] = true;
            }
            if !one_component(&adj, &allowed, &inner.members) {
                return Ok(LlcOutcome { pass: false, witness: Some((x, r, 1)) });
            }
        }
        // (ii) out-of-ball connectivity avoiding the lambda-contraction
        let outside: Vec<usize> = (0..n).filter(|&i| space.dist(x, i) >= r).collect();
        if outside.len() >= 2 {
            let core = space.ball(x, r / lambda);
            let mut allowed = vec![true; n];
            for &i in &core.members {
                allowed[i] = false;
            }
            if !one_component(&adj, &allowed, &outside) {
                return Ok(LlcOutcome { pass: false, witness: Some((x, r, 2)) });
            }
        }
    }
    Ok(LlcOutcome { pass: true, witness: None })
}

/// Default connectivity sample: a spread of centers (plus one representative
/// per labelled boundary component, where detours concentrate) crossed with a
/// half-octave radius ladder reaching most of the diameter — the large radii
/// are where both conditions bite.
pub fn llc_sample(space: &MetricMeasureSpace) -> Vec<(usize, f64)> {
    let n = space.len();
    let step = (n / 9).max(1);
    let mut centers: Vec<usize> = (0..n).step_by(step).collect();
    for ids in space.boundary().values() {
        if let Some(&i) = ids.first() {
            centers.push(i);
        }
    }
    centers.sort_unstable();
    centers.dedup();
    let diam = space.diameter();
    let mut radii = vec![0.45 * diam];
    let mut r = 4.0 * space.metric_pitch();
    while r <= 0.75 * diam {
        radii.push(r);
        r *= std::f64::consts::SQRT_2;
    }
    let mut out = Vec::new();
    for &c in &centers {
        for &r in &radii {
            out.push((c, r));
        }
    }
    out
}

/// Smallest `lambda` passing [`llc_check`] on the sample, by bisection (the
/// check is monotone in `lambda`).
pub fn llc_constant(
    space: &MetricMeasureSpace,
    samples: &[(usize, f64)],
) -> Result<f64, RegularityError> {
    let mut lo = 1.0f64;
    let mut hi = 1.0f64;
    if llc_check(space, lo, samples)?.pass {
        return Ok(lo);
    }
    loop {
        hi *= 2.0;
        if llc_check(space, hi, samples)?.pass {
            break;
        }
        if hi > 64.0 {
            return Ok(hi); // self-similar pathologies: report the cap
        }
    }
    while hi / lo > 1.01 {
        let mid = (lo * hi).sqrt();
        if llc_check(space, mid, samples)?.pass {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

// ─── Boundary separation ───

/// Ratio of the space's diameter to the smallest distance between two
/// labelled boundary components.
pub fn boundary_separation(space: &MetricMeasureSpace) -> Result<f64, RegularityError> {
    let labels: Vec<(&String, &Vec<usize>)> = space.boundary().iter().collect();
    if labels.len() < 2 {
        return Err(RegularityError::NotEnoughComponents(labels.len()));
    }
    let mut gap = f64::INFINITY;
    for (a, (_, ids_a)) in labels.iter().enumerate() {
        for (_, ids_b) in labels.iter().skip(a + 1).map(|&(n, v)| (n, v)) {
            for &i in ids_a.iter() {
                for &j in ids_b.iter() {
                    gap = gap.min(space.dist(i, j));
                }
            }
        }
    }
    Ok(space.diameter() / gap)
}

// ─── Hausdorff 2-content ───

/// Area fraction by which the dilated covering balls of a greedy fifth-radius
/// packing overshoot flat Lebesgue measure; measured once on a flat
/// unit-square sampling and frozen, so flat content reproduces area.
pub const COVER_EFFICIENCY: f64 = 12.2;

/// Ratio between consecutive candidate covering scales.  The scale grid is
/// anchored at the space diameter, so estimates at different `delta` share
/// rungs and refine consistently.
const RUNG_RATIO: f64 = 0.7;
const MAX_RUNGS: usize = 24;
/// Packing separations below this many sampling pitches lock onto
/// sub-lattices of the discretization and under- or over-count; such rungs
/// are not used.
const LATTICE_CLEARANCE: f64 = 3.1;

#[derive(Debug, Clone, Serialize)]
pub struct ContentEstimate {
    /// Calibrated covering value (upper estimate).
    pub upper: f64,
    /// Raw area of the disjoint fifth-radius balls (calibration-free lower
    /// estimate).
    pub lower: f64,
    pub centers: Vec<usize>,
    /// Covering radius of the reported net (five times the packing radius).
    pub radius: f64,
}

/// Maximal `sep`-separated subset of `e`, farthest-first, deterministic.
fn greedy_net(space: &MetricMeasureSpace, e: &[usize], sep: f64) -> Vec<usize> {
    let mut centers = vec![e[0]];
    let mut min_dist: Vec<f64> = e.iter().map(|&i| space.dist(e[0], i)).collect();
    loop {
        let (k, &d) = min_dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .unwrap();
        if d < sep {
            break;
        }
        let c = e[k];
        centers.push(c);
        for (k, &i) in e.iter().enumerate() {
            min_dist[k] = min_dist[k].min(space.dist(c, i));
        }
    }
    centers
}

/// Greedy 2-content of the point set `e` at scale `delta` in the space's own
/// metric: packs disjoint balls of a fifth of the covering scale (maximal
/// separated set, farthest-first), dilates them fivefold to cover `e`, and
/// converts the covering to an area via the frozen flat calibration.  The
/// covering scale is the finest rung of a diameter-anchored grid that is at
/// or below `delta` and clear of the sampling lattice, so refining `delta`
/// can never increase the estimate.
pub fn hausdorff2_content(
    space: &MetricMeasureSpace,
    e: &[usize],
    delta: f64,
) -> Result<ContentEstimate, RegularityError> {
    if e.is_empty() {
        return Err(RegularityError::EmptySample);
    }
    if !(delta > 0.0) {
        return Err(RegularityError::BadRadius(delta));
    }
    // Resolution: the smallest positive pairwise distance within e (capped
    // scan; e is usually a full sample or a ball, both locally dense).
    let mut resolution = 0.0f64;
    let mut finest = f64::INFINITY;
    for (a, &i) in e.iter().enumerate() {
        for &j in &e[a + 1..] {
            let d = space.dist(i, j);
            if d > 0.0 {
                finest = finest.min(d);
            }
        }
        if a > 64 {
            break;
        }
    }
    if finest.is_finite() {
        resolution = finest;
    }
    if delta <= resolution {
        return Err(RegularityError::UnresolvableScale { delta, resolution });
    }
    let mut chosen: Option<f64> = None;
    let mut scale = space.diameter();
    for _ in 0..=MAX_RUNGS {
        if resolution > 0.0 && 0.4 * scale < LATTICE_CLEARANCE * resolution {
            break;
        }
        if scale <= delta * (1.0 + 1e-12) {
            chosen = Some(scale);
        }
        scale *= RUNG_RATIO;
    }
    let Some(scale) = chosen else {
        // report the effective floor: the finest usable covering scale
        return Err(RegularityError::UnresolvableScale {
            delta,
            resolution: 2.5 * LATTICE_CLEARANCE * resolution,
        });
    };
    let centers = greedy_net(space, e, 0.4 * scale);
    let n = centers.len() as f64;
    Ok(ContentEstimate {
        upper: std::f64::consts::PI * n * scale * scale / COVER_EFFICIENCY,
        lower: std::f64::consts::PI * n * (0.2 * scale) * (0.2 * scale),
        centers,
        radius: scale,
    })
}

// ─── Ball-mass comparison ───

#[derive(Debug, Clone, Copy)]
pub struct ComparisonConstants {
    pub c_w: f64,
    pub c_s: f64,
    pub c_d: f64,
}

/// Verifies the two-sided comparisons between deformed-ball masses and radii,
/// and between set mass and 2-content, on a space already carrying the
/// deformed metric.  `r_x` limits where the lower ball bound's hypothesis
/// holds; centers whose ball leaks past it are reported as skipped.
///
/// Content comparisons use the calibrated covering estimate on both sides:
/// the packing witness in [`ContentEstimate::lower`] is a guaranteed but
/// deliberately loose floor (roughly half the covering value on flat data),
/// so treating it as the content would flag true inequalities as failures.
pub fn ball_comparison_check(
    space_q: &MetricMeasureSpace,
    constants: ComparisonConstants,
    samples: &[(usize, f64)],
    r_x: &BTreeMap<usize, f64>,
    content_delta: f64,
) -> Vec<VerificationReport> {
    let ComparisonConstants { c_w, c_s, c_d } = constants;
    let mut reports = Vec::new();

    // Ball-mass upper bound: worst sample of mass(B_q(x,s)) vs C_W^2 s^2.
    let mut worst_upper: Option<(f64, f64, (usize, f64))> = None;
    for &(x, sps) in samples {
        let mass = space_q.ball_mass(x, sps);
        let bound = c_w * c_w * sps * sps;
        if worst_upper
            .map(|(l, r, _)| mass - bound > l - r)
            .unwrap_or(true)
        {
            worst_upper = Some((mass, bound, (x, sps)));
        }
    }
    if let Some((lhs, rhs, w)) = worst_upper {
        reports.push(
            VerificationReport::check("ball_mass_upper", lhs, rhs, json!({"center": w.0, "s": w.1}))
                .with_constant("c_w", c_w),
        );
    }

    // Ball-mass lower bound s^2 / (2 C_S^2 C_D) <= mass(B_q(x,s)), only where
    // the ball stays inside the validity radius of its center.
    let mut worst_lower: Option<(f64, f64, (usize, f64))> = None;
    let mut skipped = 0usize;
    for &(x, sps) in samples {
        let ball = space_q.ball(x, sps);
        let limit = r_x.get(&x).copied().unwrap_or(f64::INFINITY);
        let in_hypothesis = ball
            .members
            .iter()
            .all(|&y| space_q.dist(x, y) <= limit);
        if !in_hypothesis {
            skipped += 1;
            continue;
        }
        let floor = sps * sps / (2.0 * c_s * c_s * c_d);
        if worst_lower
            .map(|(l, r, _)| floor - ball.mass > l - r)
            .unwrap_or(true)
        {
            worst_lower = Some((floor, ball.mass, (x, sps)));
        }
    }
    match worst_lower {
        Some((lhs, rhs, w)) => reports.push(
            VerificationReport::check("ball_mass_lower", lhs, rhs, json!({"center": w.0, "s": w.1}))
                .with_constant("c_s", c_s)
                .with_constant("c_d", c_d)
                .with_note(format!("{skipped} samples outside hypothesis skipped")),
        ),
        None => reports.push(VerificationReport::skipped(
            "ball_mass_lower",
            "no sample satisfied the validity-radius hypothesis",
        )),
    }

    // Content comparison on ball unions: mass(E) <= (C_W^2/pi) H(E) and
    // H(E) / (2 pi C_S^2 C_D^4) <= mass(E), conservative content side each.
    let sets: Vec<Vec<usize>> = {
        let mut sets = Vec::new();
        for chunk in samples.chunks(2) {
            let mut members: Vec<usize> = chunk
                .iter()
                .flat_map(|&(x, sps)| space_q.ball(x, sps).members)
                .collect();
            members.sort_unstable();
            members.dedup();
            if !members.is_empty() {
                sets.push(members);
            }
        }
        sets
    };
    let mut content_upper_rep: Option<(f64, f64, usize)> = None;
    let mut content_lower_rep: Option<(f64, f64, usize)> = None;
    for (k, members) in sets.iter().enumerate() {
        let mass: f64 = members.iter().map(|&i| space_q.weight(i)).sum();
        let Ok(content) = hausdorff2_content(space_q, members, content_delta) else {
            continue;
        };
        let upper_rhs = c_w * c_w / std::f64::consts::PI * content.upper;
        if content_upper_rep.map(|(l, r, _)| mass - upper_rhs > l - r).unwrap_or(true) {
            content_upper_rep = Some((mass, upper_rhs, k));
        }
        let lower_lhs =
            content.upper / (2.0 * std::f64::consts::PI * c_s * c_s * c_d.powi(4));
        if content_lower_rep.map(|(l, r, _)| lower_lhs - mass > l - r).unwrap_or(true) {
            content_lower_rep = Some((lower_lhs, mass, k));
        }
    }
    if let Some((lhs, rhs, k)) = content_upper_rep {
        reports.push(
            VerificationReport::check("set_mass_vs_content", lhs, rhs, json!({"set": k}))
                .with_constant("c_w", c_w),
        );
    }
    if let Some((lhs, rhs, k)) = content_lower_rep {
        reports.push(
            VerificationReport::check("content_vs_set_mass", lhs, rhs, json!({"set": k}))
                .with_constant("c_s", c_s)
                .with_constant("c_d", c_d),
        );
    }

    // Ball-content bound: H(B_q(x,s)) <= 2 pi C_S^2 C_D^4 C_W^2 s^2.
    let mut worst_ball_content: Option<(f64, f64, (usize, f64))> = None;
    for &(x, sps) in samples {
        let ball = space_q.ball(x, sps);
        if ball.members.len() < 2 {
            continue;
        }
        let Ok(content) = hausdorff2_content(space_q, &ball.members, content_delta) else {
            continue;
        };
        let bound = 2.0 * std::f64::consts::PI * c_s * c_s * c_d.powi(4) * c_w * c_w * sps * sps;
        if worst_ball_content
            .map(|(l, r, _)| content.upper - bound > l - r)
            .unwrap_or(true)
        {
            worst_ball_content = Some((content.upper, bound, (x, sps)));
        }
    }
    if let Some((lhs, rhs, w)) = worst_ball_content {
        reports.push(VerificationReport::check(
            "ball_content_upper",
            lhs,
            rhs,
            json!({"center": w.0, "s": w.1}),
        ));
    }

    reports
}

//! Small planar geometry helpers shared across modules: disk areas, circle
//! intersections, arc clipping against axis-aligned cells, and the Möbius /
//! chordal machinery used when normalizing maps of circle domains.

pub type P2 = [f64; 2];

pub fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: P2, b: P2) -> P2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: P2, s: f64) -> P2 {
    [a[0] * s, a[1] * s]
}

pub fn norm(a: P2) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: P2, b: P2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Area of the union of two disks of equal radius `r` whose centers are `d`
/// apart (`d <= 2r`); degenerates to a single disk for `d = 0` and to two
/// disjoint disks for `d >= 2r`.
pub fn two_disk_union_area(r: f64, d: f64) -> f64 {
    let pi = std::f64::consts::PI;
    if d >= 2.0 * r {
        return 2.0 * pi * r * r;
    }
    let half = d / 2.0;
    let lens = 2.0 * r * r * (half / r).acos() - half * (4.0 * r * r - d * d).sqrt();
    2.0 * pi * r * r - lens
}

/// Coefficient `4*pi/3 + sqrt(3)/2` in the area of the union of two disks of
/// radius `t` with centers `t` apart: the shape traced by one chain step.
pub fn step_union_coeff() -> f64 {
    4.0 * std::f64::consts::PI / 3.0 + 3.0_f64.sqrt() / 2.0
}

/// Intersection points of circles `(c0, r0)` and `(c1, r1)`.
///
/// Returns 0, 1, or 2 points; tangency within `tol` of the discriminant is
/// collapsed to a single point.
pub fn circle_circle_intersections(c0: P2, r0: f64, c1: P2, r1: f64, tol: f64) -> Vec<P2> {
    let d = dist(c0, c1);
    if d <= tol {
        return Vec::new(); // concentric: no transversal intersection
    }
    let a = (d * d + r0 * r0 - r1 * r1) / (2.0 * d);
    let h2 = r0 * r0 - a * a;
    let ex = [(c1[0] - c0[0]) / d, (c1[1] - c0[1]) / d];
    let base = [c0[0] + a * ex[0], c0[1] + a * ex[1]];
    if h2 < -tol * (r0 + r1) {
        return Vec::new();
    }
    let h = h2.max(0.0).sqrt();
    if h <= tol {
        return vec![base];
    }
    let n = [-ex[1], ex[0]];
    vec![
        [base[0] + h * n[0], base[1] + h * n[1]],
        [base[0] - h * n[0], base[1] - h * n[1]],
    ]
}

/// Length of the part of circle `(c, r)` lying inside the closed axis-aligned
/// box `[x0,x1] x [y0,y1]`, computed by splitting the circle at every crossing
/// of a box edge line and classifying each sub-arc by its midpoint.
pub fn circle_arc_length_in_box(c: P2, r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let mut cuts: Vec<f64> = Vec::with_capacity(10);
    let push_x = |bound: f64, cuts: &mut Vec<f64>| {
        let u = (bound - c[0]) / r;
        if u.abs() <= 1.0 {
            let t = u.acos();
            cuts.push(t);
            cuts.push(-t);
        }
    };
    let push_y = |bound: f64, cuts: &mut Vec<f64>| {
        let u = (bound - c[1]) / r;
        if u.abs() <= 1.0 {
            let t = u.asin();
            cuts.push(t);
            cuts.push(std::f64::consts::PI - t);
        }
    };
    push_x(x0, &mut cuts);
    push_x(x1, &mut cuts);
    push_y(y0, &mut cuts);
    push_y(y1, &mut cuts);
    let tau = 2.0 * std::f64::consts::PI;
    for t in cuts.iter_mut() {
        *t = t.rem_euclid(tau);
    }
    cuts.push(0.0);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let inside = |t: f64| -> bool {
        let p = [c[0] + r * t.cos(), c[1] + r * t.sin()];
        p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1
    };
    let mut total = 0.0;
    for i in 0..cuts.len() {
        let a = cuts[i];
        let b = if i + 1 < cuts.len() { cuts[i + 1] } else { cuts[0] + tau };
        let span = b - a;
        if span <= 0.0 {
            continue;
        }
        if inside(a + span / 2.0) {
            total += span;
        }
    }
    total * r
}

// ─── Möbius transformations and sphere geometry ───

/// Möbius transformation `z -> (az + b) / (cz + d)` on complex numbers stored
/// as `[re, im]`.
#[derive(Debug, Clone, Copy)]
pub struct Mobius {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
    pub d: [f64; 2],
}

fn cmul(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0]]
}

fn csub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cdiv(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let n = b[0] * b[0] + b[1] * b[1];
    [(a[0] * b[0] + a[1] * b[1]) / n, (a[1] * b[0] - a[0] * b[1]) / n]
}

impl Mobius {
    pub fn identity() -> Self {
        Mobius { a: [1.0, 0.0], b: [0.0, 0.0], c: [0.0, 0.0], d: [1.0, 0.0] }
    }

    /// The transformation sending `p0 -> 0`, `p1 -> 1`, `pinf -> infinity`:
    /// `z -> ((z - p0)(p1 - pinf)) / ((z - pinf)(p1 - p0))`.
    pub fn three_point(p0: P2, p1: P2, pinf: P2) -> Self {
        let k = cdiv(csub(p1, pinf), csub(p1, p0));
        Mobius {
            a: k,
            b: cmul([-1.0, 0.0], cmul(k, p0)),
            c: [1.0, 0.0],
            d: [-pinf[0], -pinf[1]],
        }
    }

    /// Applies the map; returns `None` where the image is the point at
    /// infinity (denominator vanishing to machine precision).
    pub fn apply(&self, z: P2) -> Option<P2> {
        let num = [
            self.a[0] * z[0] - self.a[1] * z[1] + self.b[0],
            self.a[0] * z[1] + self.a[1] * z[0] + self.b[1],
        ];
        let den = [
            self.c[0] * z[0] - self.c[1] * z[1] + self.d[0],
            self.c[0] * z[1] + self.c[1] * z[0] + self.d[1],
        ];
        let n = den[0] * den[0] + den[1] * den[1];
        let scale = num[0] * num[0] + num[1] * num[1];
        if n <= f64::EPSILON * f64::EPSILON * scale.max(1.0) {
            return None;
        }
        Some(cdiv(num, den))
    }
}

/// Chordal distance between two points of the plane viewed on the unit sphere
/// through stereographic projection; `None` stands for the point at infinity.
pub fn chordal(a: Option<P2>, b: Option<P2>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => {
            2.0 * dist(a, b)
                / (((1.0 + a[0] * a[0] + a[1] * a[1]) * (1.0 + b[0] * b[0] + b[1] * b[1])).sqrt())
        }
        (Some(a), None) | (None, Some(a)) => 2.0 / (1.0 + a[0] * a[0] + a[1] * a[1]).sqrt(),
        (None, None) => 0.0,
    }
}

/// Stereographic projection of a point of the unit sphere (north pole
/// `(0,0,1)` maps to infinity) onto the plane.
pub fn stereographic(p: [f64; 3]) -> Option<P2> {
    let denom = 1.0 - p[2];
    if denom.abs() < 1e-14 {
        return None;
    }
    Some([p[0] / denom, p[1] / denom])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn union_area_degenerate_cases() {
        let pi = std::f64::consts::PI;
        assert_relative_eq!(two_disk_union_area(1.0, 0.0), pi, epsilon = 1e-12);
        assert_relative_eq!(two_disk_union_area(1.0, 2.0), 2.0 * pi, epsilon = 1e-12);
        assert_relative_eq!(two_disk_union_area(1.0, 3.0), 2.0 * pi, epsilon = 1e-12);
    }

    #[test]
    fn union_area_at_step_distance_matches_coefficient() {
        for t in [0.1, 1.0, 7.3] {
            assert_relative_eq!(
                two_disk_union_area(t, t),
                step_union_coeff() * t * t,
                max_relative = 1e-12
            );
        }
        // Frozen decimal for the square root of the coefficient.
        assert!((step_union_coeff().sqrt() - 2.2483).abs() < 1e-4);
    }

    #[test]
    fn union_area_monte_carlo() {
        // Independent check of the closed form by area sampling on a grid.
        let (r, d) = (1.0, 1.3);
        let n = 2000usize;
        let span = 2.0 * r + d;
        let h = span / n as f64;
        let mut hits = 0u64;
        for i in 0..n {
            for j in 0..n {
                let x = -r - d / 2.0 + (i as f64 + 0.5) * h;
                let y = -span / 2.0 + (j as f64 + 0.5) * h;
                let da = (x + d / 2.0).hypot(y);
                let db = (x - d / 2.0).hypot(y);
                if da <= r || db <= r {
                    hits += 1;
                }
            }
        }
        let est = hits as f64 * h * h;
        assert_relative_eq!(est, two_disk_union_area(r, d), max_relative = 2e-3);
    }

    #[test]
    fn circle_intersections_basic() {
        let pts = circle_circle_intersections([0.0, 0.0], 1.0, [1.0, 0.0], 1.0, 1e-12);
        assert_eq!(pts.len(), 2);
        for p in pts {
            assert_relative_eq!(norm(p), 1.0, epsilon = 1e-12);
            assert_relative_eq!(dist(p, [1.0, 0.0]), 1.0, epsilon = 1e-12);
        }
        assert!(circle_circle_intersections([0.0, 0.0], 1.0, [3.0, 0.0], 1.0, 1e-12).is_empty());
        let tangent = circle_circle_intersections([0.0, 0.0], 1.0, [2.0, 0.0], 1.0, 1e-9);
        assert_eq!(tangent.len(), 1);
    }

    #[test]
    fn arc_in_box_full_and_clipped() {
        let tau = 2.0 * std::f64::consts::PI;
        // Circle entirely inside the box.
        let full = circle_arc_length_in_box([0.0, 0.0], 1.0, -2.0, 2.0, -2.0, 2.0);
        assert_relative_eq!(full, tau, epsilon = 1e-12);
        // Right half-plane clips exactly half the circle.
        let half = circle_arc_length_in_box([0.0, 0.0], 1.0, 0.0, 2.0, -2.0, 2.0);
        assert_relative_eq!(half, tau / 2.0, epsilon = 1e-9);
        // Quadrant.
        let quarter = circle_arc_length_in_box([0.0, 0.0], 1.0, 0.0, 2.0, 0.0, 2.0);
        assert_relative_eq!(quarter, tau / 4.0, epsilon = 1e-9);
    }

    #[test]
    fn arc_in_box_against_quadrature() {
        let c = [0.37, -0.21];
        let r = 0.93;
        let (x0, x1, y0, y1) = (-0.4, 0.8, -0.9, 0.35);
        let exact = circle_arc_length_in_box(c, r, x0, x1, y0, y1);
        let n = 400_000;
        let mut acc = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) / n as f64 * 2.0 * std::f64::consts::PI;
            let p = [c[0] + r * t.cos(), c[1] + r * t.sin()];
            if p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1 {
                acc += 1.0;
            }
        }
        let est = acc / n as f64 * 2.0 * std::f64::consts::PI * r;
        assert_relative_eq!(exact, est, max_relative = 1e-3);
    }

    #[test]
    fn mobius_three_point_normalization() {
        let m = Mobius::three_point([0.2, 0.1], [1.5, -0.3], [-0.7, 2.0]);
        let z0 = m.apply([0.2, 0.1]).unwrap();
        assert!(norm(z0) < 1e-12);
        let z1 = m.apply([1.5, -0.3]).unwrap();
        assert_relative_eq!(z1[0], 1.0, epsilon = 1e-10);
        assert!(z1[1].abs() < 1e-10);
        assert!(m.apply([-0.7, 2.0]).is_none());
    }

    #[test]
    fn chordal_matches_sphere_distance() {
        // Chordal distance of stereographic images equals the 3-space chord.
        let p = [0.3, -0.4, 0.5];
        let q = [-0.6, 0.0, -0.8];
        let np = norm([p[0], p[1]]).hypot(p[2]);
        let nq = norm([q[0], q[1]]).hypot(q[2]);
        let p = [p[0] / np, p[1] / np, p[2] / np];
        let q = [q[0] / nq, q[1] / nq, q[2] / nq];
        let chord =
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        let d = chordal(stereographic(p), stereographic(q));
        assert_relative_eq!(chord, d, epsilon = 1e-12);
    }
}

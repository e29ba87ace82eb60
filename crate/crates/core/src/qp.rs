//! Small dense solvers for the quadratic programs behind the modulus
//! computations: a Cholesky factorization and a nonnegative active-set solve
//! on a Gram matrix.  Working sets stay in the tens of rows, so everything is
//! plain row-major `Vec<f64>` with cubic-cost factorizations.

/// Solves `A x = b` for a symmetric positive-definite matrix `A` (row-major,
/// `n*n`).  Returns `None` when a pivot falls below `1e-12` times the largest
/// diagonal entry, i.e. the system is numerically singular.
pub(crate) fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let floor = 1e-12
        * (0..n)
            .map(|i| a[i * n + i])
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= floor {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then back substitution
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

/// Solves the restriction of `G x = b` to the index set `set`, with zeros
/// elsewhere.  Falls back to an escalating ridge on the diagonal when the
/// restricted Gram is singular (duplicate or dependent constraint rows).
fn restricted_solve(g: &[f64], n: usize, b: &[f64], set: &[usize]) -> Vec<f64> {
    let m = set.len();
    let mut sub = vec![0.0f64; m * m];
    let mut rhs = vec![0.0f64; m];
    for (p, &i) in set.iter().enumerate() {
        rhs[p] = b[i];
        for (q, &j) in set.iter().enumerate() {
            sub[p * m + q] = g[i * n + j];
        }
    }
    let mut ridge = 0.0f64;
    let scale = (0..m).map(|p| sub[p * m + p]).fold(0.0f64, f64::max);
    loop {
        let mut damped = sub.clone();
        if ridge > 0.0 {
            for p in 0..m {
                damped[p * m + p] += ridge;
            }
        }
        if let Some(z) = cholesky_solve(&damped, m, &rhs) {
            let mut full = vec![0.0f64; n];
            for (p, &i) in set.iter().enumerate() {
                full[i] = z[p];
            }
            return full;
        }
        ridge = if ridge == 0.0 { scale * 1e-10 } else { ridge * 100.0 };
        if ridge > scale {
            // give up on refinement; the zero vector keeps callers safe
            return vec![0.0; n];
        }
    }
}

/// Minimizes `x' G x / 2 - b' x` subject to `x >= 0` for a symmetric
/// positive-semidefinite Gram matrix `G` (row-major, `n*n`), by the
/// Lawson–Hanson active-set method.  Deterministic: ties in the entering
/// gradient pick the lowest index.
pub(crate) fn nonneg_solve(g: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let eps = 1e-11
        * b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0f64; n];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; n];
    let cap = 3 * n + 30;
    for _ in 0..cap {
        // gradient of the objective is G x - b; entering candidate maximizes b - G x
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if in_passive[i] {
                continue;
            }
            let mut w = b[i];
            for j in 0..n {
                w -= g[i * n + j] * x[j];
            }
            if w > eps && best.map(|(_, bw)| w > bw).unwrap_or(true) {
                best = Some((i, w));
            }
        }
        let Some((enter, _)) = best else { break };
        passive.push(enter);
        in_passive[enter] = true;
        // inner loop: restricted solve, stepping back while components go negative
        loop {
            let z = restricted_solve(g, n, b, &passive);
            if passive.iter().all(|&i| z[i] > eps) {
                x = z;
                break;
            }
            // step from x toward z, stopping at the first variable hitting zero
            let mut alpha = 1.0f64;
            for &i in &passive {
                if z[i] <= eps {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            for &i in &passive {
                x[i] += alpha * (z[i] - x[i]);
            }
            let dropped: Vec<usize> =
                passive.iter().copied().filter(|&i| x[i] <= eps).collect();
            if dropped.is_empty() {
                // numerical stall; accept the clamped point
                for &i in &passive {
                    x[i] = x[i].max(0.0);
                }
                break;
            }
            for i in dropped {
                x[i] = 0.0;
                in_passive[i] = false;
            }
            passive.retain(|&i| in_passive[i]);
            if passive.is_empty() {
                break;
            }
        }
    }
    x
}

/// Minimizes `x' G x / 2 - b' x` subject to `x >= 0` by projected coordinate
/// descent from a warm start.  Used by the constraint-generation loop, where
/// the Gram grows one row per iteration and the previous multipliers are an
/// excellent initial point; cost per call is a few `O(n^2)` sweeps instead of
/// a fresh active-set factorization.
pub(crate) fn nonneg_descent(g: &[f64], n: usize, b: &[f64], warm: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0f64; n];
    for (xi, &w) in x.iter_mut().zip(warm) {
        *xi = w.max(0.0);
    }
    let mut gx = vec![0.0f64; n];
    for i in 0..n {
        if x[i] != 0.0 {
            for j in 0..n {
                gx[j] += g[j * n + i] * x[i];
            }
        }
    }
    let scale = b
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..20_000 {
        let mut worst = 0.0f64;
        for i in 0..n {
            let gii = g[i * n + i];
            if gii <= 0.0 {
                continue;
            }
            let grad = gx[i] - b[i];
            let violation = if x[i] > 0.0 { grad.abs() } else { (-grad).max(0.0) };
            worst = worst.max(violation);
            let next = (x[i] - grad / gii).max(0.0);
            let delta = next - x[i];
            if delta != 0.0 {
                x[i] = next;
                for j in 0..n {
                    gx[j] += g[j * n + i] * delta;
                }
            }
        }
        if worst <= 1e-10 * scale {
            break;
        }
    }
    x
}

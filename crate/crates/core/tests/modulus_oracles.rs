//! Cross-checks the constraint-generation modulus solver against a full
//! quadratic program over every simple connecting path, on small graphs
//! where exhaustive enumeration is cheap.
//!
//! Every connecting path contains a simple subpath whose interior avoids
//! both terminal sets, and dropping density-weighted length below one on
//! the superpath implies the same on the subpath, so these interior-free
//! simple paths generate the complete constraint set of the family.

use wmdm::modulus::{
    admissibility_check, modulus_solve, DomainGraph, FamilyKind, PathFamily,
};

// ─── Exhaustive enumeration ───

/// All simple paths from a node of `a` to a node of `b` whose interior
/// nodes avoid `a ∪ b` and stay inside `allowed`.
fn simple_paths(
    graph: &DomainGraph,
    a: &[usize],
    b: &[usize],
    allowed: &[bool],
) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut in_a = vec![false; n];
    let mut in_b = vec![false; n];
    for &i in a {
        in_a[i] = true;
    }
    for &i in b {
        in_b[i] = true;
    }
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut visited = vec![false; n];
    for &start in a {
        if !allowed[start] {
            continue;
        }
        stack.push(start);
        visited[start] = true;
        extend(graph, &in_a, &in_b, allowed, &mut stack, &mut visited, &mut out);
        visited[start] = false;
        stack.pop();
    }
    out.sort();
    out
}

fn extend(
    graph: &DomainGraph,
    in_a: &[bool],
    in_b: &[bool],
    allowed: &[bool],
    stack: &mut Vec<usize>,
    visited: &mut Vec<bool>,
    out: &mut Vec<Vec<usize>>,
) {
    let here = *stack.last().unwrap();
    for &(next, _) in graph.neighbors(here) {
        if visited[next] || !allowed[next] {
            continue;
        }
        if in_b[next] {
            let mut path = stack.clone();
            path.push(next);
            out.push(path);
            continue;
        }
        if in_a[next] {
            continue; // interior must avoid both terminal sets
        }
        stack.push(next);
        visited[next] = true;
        extend(graph, in_a, in_b, allowed, stack, visited, out);
        visited[next] = false;
        stack.pop();
    }
}

// ─── Certified reference QP ───

/// Per-node coefficients of a path: half the incident edge lengths, so the
/// weighted sum against a density equals Σ_edges (ρ_u + ρ_v)/2 · len.
fn path_row(graph: &DomainGraph, path: &[usize]) -> Vec<f64> {
    let mut row = vec![0.0; graph.len()];
    for pair in path.windows(2) {
        let len = graph
            .neighbors(pair[0])
            .iter()
            .find(|&&(v, _)| v == pair[1])
            .map(|&(_, l)| l)
            .expect("enumerated paths follow graph edges");
        row[pair[0]] += 0.5 * len;
        row[pair[1]] += 0.5 * len;
    }
    row
}

struct Reference {
    value: f64,
    gap: f64,
}

/// Solves min Σ ρ²·area subject to row·ρ ≥ 1 for every enumerated path by
/// projected Gauss–Seidel on the dual, and certifies the result with a
/// primal/dual sandwich so the value is trusted independently of how the
/// iteration behaved.
fn reference_modulus(graph: &DomainGraph, paths: &[Vec<usize>]) -> Reference {
    let m = paths.len();
    assert!(m > 0, "reference oracle needs a connected instance");
    let rows: Vec<Vec<f64>> = paths.iter().map(|p| path_row(graph, p)).collect();
    let areas: Vec<f64> = (0..graph.len()).map(|i| graph.area(i)).collect();

    // gram[k][l] = Σ_i rows[k][i] rows[l][i] / area_i
    let mut gram = vec![0.0f64; m * m];
    for k in 0..m {
        for l in k..m {
            let dot: f64 = rows[k]
                .iter()
                .zip(&rows[l])
                .zip(&areas)
                .map(|((x, y), a)| x * y / a)
                .sum();
            gram[k * m + l] = dot;
            gram[l * m + k] = dot;
        }
    }

    // maximize Σλ − λᵀGλ/4 over λ ≥ 0; gλ tracks Gλ incrementally
    let mut lambda = vec![0.0f64; m];
    let mut glambda = vec![0.0f64; m];
    let mut best = Reference { value: f64::NAN, gap: f64::INFINITY };
    for sweep in 0..200_000 {
        for k in 0..m {
            let diag = gram[k * m + k];
            if diag <= 0.0 {
                continue;
            }
            let target = (lambda[k] + (2.0 - glambda[k]) / diag).max(0.0);
            let delta = target - lambda[k];
            if delta != 0.0 {
                lambda[k] = target;
                for l in 0..m {
                    glambda[l] += delta * gram[l * m + k];
                }
            }
        }
        if sweep % 16 != 0 {
            continue;
        }
        // dual lower bound at the current multipliers
        let lam_sum: f64 = lambda.iter().sum();
        let quad: f64 = lambda.iter().zip(&glambda).map(|(l, g)| l * g).sum();
        let lower = lam_sum - quad / 4.0;
        // primal upper bound from the rescaled induced density
        let mut rho: Vec<f64> = vec![0.0; graph.len()];
        for (row, &l) in rows.iter().zip(&lambda) {
            for (r, c) in rho.iter_mut().zip(row) {
                *r += l * c;
            }
        }
        for (r, a) in rho.iter_mut().zip(&areas) {
            *r /= 2.0 * a;
        }
        let shortest = rows
            .iter()
            .map(|row| row.iter().zip(&rho).map(|(c, r)| c * r).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if shortest <= 0.0 {
            continue;
        }
        let objective: f64 =
            rho.iter().zip(&areas).map(|(r, a)| r * r * a).sum();
        let upper = objective / (shortest * shortest);
        let gap = upper - lower;
        if gap < best.gap {
            best = Reference { value: 0.5 * (upper + lower), gap };
        }
        if best.gap <= 1e-10 * upper.max(1.0) {
            break;
        }
    }
    assert!(
        best.gap <= 1e-8 * best.value.max(1.0),
        "reference QP failed to certify: value {} gap {}",
        best.value,
        best.gap,
    );
    best
}

// ─── Shared assertions ───

fn check_case(graph: &DomainGraph, family: &PathFamily, label: &str) {
    let n = graph.len();
    assert!(n <= 12, "{label}: oracle corpus is capped at 12 nodes");
    let allowed = vec![true; n];
    let (a, b, allowed) = match family_sides(family) {
        (a, b, Some(mask)) => {
            let mut al = vec![false; n];
            for &i in &mask {
                al[i] = true;
            }
            (a, b, al)
        }
        (a, b, None) => (a, b, allowed),
    };
    let paths = simple_paths(graph, &a, &b, &allowed);
    let reference = reference_modulus(graph, &paths);

    // tight-tolerance constraint generation agrees with the full program
    let solved = modulus_solve(graph, family, 1e-9).expect(label);
    assert!(
        (solved.modulus - reference.value).abs() <= 1e-6 * reference.value.max(1.0),
        "{label}: constraint generation {} vs exhaustive QP {}",
        solved.modulus,
        reference.value,
    );

    // the explicit-family route over the complete path list lands there too
    let all = PathFamily::explicit(paths.clone());
    let explicit = modulus_solve(graph, &all, 1e-9).expect(label);
    assert!(
        (explicit.modulus - reference.value).abs() <= 1e-6 * reference.value.max(1.0),
        "{label}: explicit full family {} vs exhaustive QP {}",
        explicit.modulus,
        reference.value,
    );

    // the returned density covers every path in the family, not just the
    // generated working set
    let admissible = admissibility_check(graph, &all, &solved.density).expect(label);
    assert!(
        admissible.shortest >= 1.0 - 1e-7,
        "{label}: returned density leaves a path at length {}",
        admissible.shortest,
    );

    // at loose tolerance the sandwich still brackets the true value
    let loose = modulus_solve(graph, family, 0.02).expect(label);
    assert!(
        loose.modulus <= reference.value * (1.0 + 1e-9) + 1e-12,
        "{label}: working-set lower bound {} exceeds exhaustive value {}",
        loose.modulus,
        reference.value,
    );
    assert!(
        loose.upper >= reference.value * (1.0 - 1e-9) - 1e-12,
        "{label}: feasible upper bound {} undercuts exhaustive value {}",
        loose.upper,
        reference.value,
    );
}

fn family_sides(family: &PathFamily) -> (Vec<usize>, Vec<usize>, Option<Vec<usize>>) {
    match &family.kind {
        FamilyKind::Connecting { a, b } => {
            (a.clone(), b.clone(), family.domain.clone())
        }
        FamilyKind::Explicit { .. } => {
            panic!("oracle corpus uses connecting families")
        }
    }
}

// ─── Corpus ───

fn grid(nx: usize, ny: usize, spacing: f64, areas: &[f64]) -> DomainGraph {
    let mut positions = Vec::new();
    let mut edges = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            positions.push([x as f64 * spacing, y as f64 * spacing]);
            let i = y * nx + x;
            if x + 1 < nx {
                edges.push((i, i + 1));
            }
            if y + 1 < ny {
                edges.push((i, i + nx));
            }
        }
    }
    DomainGraph::new(positions, areas.to_vec(), &edges).unwrap()
}

#[test]
fn square_grid_matches_exhaustive_program() {
    let graph = grid(3, 3, 1.0, &[1.0; 9]);
    let family = PathFamily::connecting(vec![0, 3, 6], vec![2, 5, 8]);
    check_case(&graph, &family, "3x3 grid, side to side");
}

#[test]
fn rectangular_grid_with_varied_areas_matches() {
    let areas: Vec<f64> = (0..12).map(|i| 0.2 + 0.03 * i as f64).collect();
    let graph = grid(4, 3, 0.5, &areas);
    let family = PathFamily::connecting(vec![0, 4, 8], vec![3, 7, 11]);
    check_case(&graph, &family, "4x3 grid, varied areas");
}

#[test]
fn masked_domain_matches() {
    // same 4x3 grid, but the family lives on a subdomain with one interior
    // node carved out, forcing routes around the hole
    let areas: Vec<f64> = (0..12).map(|i| 0.25 + 0.02 * i as f64).collect();
    let graph = grid(4, 3, 0.5, &areas);
    let mask: Vec<usize> = (0..12).filter(|&i| i != 5).collect();
    let family = PathFamily::connecting(vec![0, 4, 8], vec![3, 7, 11]).within(mask);
    check_case(&graph, &family, "4x3 grid minus one node");
}

#[test]
fn diagonal_moves_match() {
    // 3x3 lattice with both axis and diagonal adjacency, so edge lengths mix
    // 1 and √2 and the terminal sets are single corners of the middle column
    let mut positions = Vec::new();
    let mut edges = Vec::new();
    for y in 0..3i64 {
        for x in 0..3i64 {
            positions.push([x as f64, y as f64]);
        }
    }
    for i in 0..9usize {
        let (xi, yi) = ((i % 3) as i64, (i / 3) as i64);
        for j in (i + 1)..9usize {
            let (xj, yj) = ((j % 3) as i64, (j / 3) as i64);
            if (xi - xj).abs() <= 1 && (yi - yj).abs() <= 1 {
                edges.push((i, j));
            }
        }
    }
    let graph = DomainGraph::new(positions, vec![1.0; 9], &edges).unwrap();
    let family = PathFamily::connecting(vec![0, 3, 6], vec![2, 5, 8]);
    check_case(&graph, &family, "3x3 king moves, side to side");
}

#[test]
fn braided_irregular_graph_matches() {
    // two braided routes of unequal length between the terminal pairs, a
    // crossover edge, and a dead-end spur that no connecting path can use
    let positions = vec![
        [0.0, 0.0],  // 0: A
        [0.0, 1.0],  // 1: A
        [0.9, 0.2],  // 2
        [1.1, 1.1],  // 3
        [1.8, 0.4],  // 4
        [2.2, 1.3],  // 5
        [1.5, 2.2],  // 6: spur
        [3.0, 0.3],  // 7: B
        [3.0, 1.2],  // 8: B
    ];
    let areas = vec![0.8, 1.1, 0.5, 0.7, 0.4, 0.9, 1.0, 0.6, 1.3];
    let edges = [
        (0, 2),
        (1, 3),
        (2, 3), // crossover
        (2, 4),
        (3, 5),
        (4, 5), // crossover
        (4, 7),
        (5, 8),
        (3, 6), // spur in, nothing out
        (7, 8),
    ];
    let graph = DomainGraph::new(positions, areas, &edges).unwrap();
    let family = PathFamily::connecting(vec![0, 1], vec![7, 8]);
    check_case(&graph, &family, "braided irregular graph");
}

#[test]
fn parallel_chains_match() {
    // three vertex-disjoint chains of different lengths joining two hubs:
    // the modulus adds up chain by chain
    let positions = vec![
        [0.0, 0.0],  // 0: hub A
        [1.0, 1.0],  // 1
        [2.0, 1.0],  // 2
        [1.0, 0.0],  // 3
        [1.5, 0.0],  // 4
        [2.5, 0.0],  // 5
        [1.0, -1.0], // 6
        [3.5, 0.0],  // 7: hub B
    ];
    let areas = vec![1.0, 0.6, 0.6, 0.5, 0.5, 0.5, 0.8, 1.0];
    let edges = [
        (0, 1),
        (1, 2),
        (2, 7),
        (0, 3),
        (3, 4),
        (4, 5),
        (5, 7),
        (0, 6),
        (6, 7),
    ];
    let graph = DomainGraph::new(positions, areas, &edges).unwrap();
    let family = PathFamily::connecting(vec![0], vec![7]);
    check_case(&graph, &family, "three parallel chains");
}

#[test]
fn touching_sides_match() {
    // terminal sets joined by direct edges: the shortest constraints are
    // two-node paths and the program is dominated by them
    let graph = grid(2, 2, 1.0, &[1.0, 2.0, 0.5, 1.5]);
    let family = PathFamily::connecting(vec![0, 2], vec![1, 3]);
    check_case(&graph, &family, "2x2 grid, adjacent sides");
}

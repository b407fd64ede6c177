//! Test-only helpers: seeded instances and exact solvers that share no code
//! with the library's oracle.

#![allow(dead_code)]

use sfp_core::gen::{generate, GeneratorKind, GeneratorSpec};
use sfp_core::instance::Instance;
use sfp_core::metric::{Dist, MetricSpace, PointId, DEFAULT_SCALE};

pub const KINDS: [GeneratorKind; 4] =
    [GeneratorKind::Euclidean2d, GeneratorKind::Grid, GeneratorKind::Clustered, GeneratorKind::Euclidean3d];

/// Instance `j` of a seeded family: `n_pairs` pairs plus `extra` Steiner
/// candidates, generator kind rotating with `j`.
pub fn instance(j: u64, n_pairs: usize, extra: usize, seed: u64) -> (MetricSpace, Instance) {
    let spec = GeneratorSpec {
        kind: KINDS[j as usize % KINDS.len()],
        n_pairs,
        spread: 16.0,
        seed: seed.wrapping_mul(1_000_003).wrapping_add(j),
        extra_points: extra,
    };
    generate(&spec).unwrap().build(DEFAULT_SCALE).unwrap()
}

fn find(p: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while p[r] != r {
        r = p[r];
    }
    let mut y = x;
    while p[y] != r {
        let n = p[y];
        p[y] = r;
        y = n;
    }
    r
}

/// Prim's algorithm on the complete graph over `pts`.
pub fn mst_weight(m: &MetricSpace, pts: &[PointId]) -> Dist {
    if pts.len() < 2 {
        return 0;
    }
    let mut best: Vec<Dist> = pts.iter().map(|&p| m.d(pts[0], p)).collect();
    let mut used = vec![false; pts.len()];
    used[0] = true;
    let mut total = 0;
    for _ in 1..pts.len() {
        let j = (0..pts.len()).filter(|&j| !used[j]).min_by_key(|&j| best[j]).unwrap();
        used[j] = true;
        total += best[j];
        for t in 0..pts.len() {
            if !used[t] {
                best[t] = best[t].min(m.d(pts[j], pts[t]));
            }
        }
    }
    total
}

/// Terminal groups that must end up connected: pairs closed under sharing
/// an endpoint.
pub fn classes(inst: &Instance) -> Vec<Vec<PointId>> {
    let pairs: Vec<(PointId, PointId)> = inst.nontrivial().map(|p| (p.a, p.b)).collect();
    let n = pairs.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in &pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra] = rb;
    }
    let mut terms: Vec<PointId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    terms.sort_unstable();
    terms.dedup();
    let mut out: Vec<Vec<PointId>> = Vec::new();
    let mut roots: Vec<usize> = Vec::new();
    for t in terms {
        let r = find(&mut parent, t);
        match roots.iter().position(|&x| x == r) {
            Some(k) => out[k].push(t),
            None => {
                roots.push(r);
                out.push(vec![t]);
            }
        }
    }
    out
}

/// Minimum Steiner tree weight: in a metric, an optimal Steiner tree is a
/// minimum spanning tree of its own vertex set, so trying every set of extra
/// points is exact.
pub fn steiner_by_subsets(m: &MetricSpace, terms: &[PointId]) -> Dist {
    let others: Vec<PointId> = m.points().filter(|p| !terms.contains(p)).collect();
    let mut best = Dist::MAX;
    for mask in 0u32..(1 << others.len()) {
        let mut pts = terms.to_vec();
        pts.extend((0..others.len()).filter(|&b| mask >> b & 1 == 1).map(|b| others[b]));
        best = best.min(mst_weight(m, &pts));
    }
    best
}

/// Optimal Steiner forest weight: the minimum over groupings of the
/// requirement classes of the sum of the groups' Steiner trees.
pub fn opt_by_subsets(m: &MetricSpace, inst: &Instance) -> Dist {
    let cls = classes(inst);
    let n = cls.len();
    let mut tree = vec![0; 1 << n];
    for (mask, slot) in tree.iter_mut().enumerate().skip(1) {
        let terms: Vec<PointId> = (0..n).filter(|&c| mask >> c & 1 == 1).flat_map(|c| cls[c].clone()).collect();
        *slot = steiner_by_subsets(m, &terms);
    }
    // best[mask]: cheapest cover of the classes in mask
    let mut best = vec![Dist::MAX; 1 << n];
    best[0] = 0;
    for mask in 1usize..(1 << n) {
        let low = mask & mask.wrapping_neg();
        let mut sub = mask;
        while sub > 0 {
            if sub & low != 0 {
                best[mask] = best[mask].min(best[mask ^ sub].saturating_add(tree[sub]));
            }
            sub = (sub - 1) & mask;
        }
    }
    best[(1 << n) - 1]
}

/// Minimum weight over every edge subset of the complete graph that
/// connects all pairs. Only for a handful of points.
pub fn opt_by_edge_subsets(m: &MetricSpace, inst: &Instance) -> Dist {
    let n = m.len();
    assert!(n <= 7, "edge-subset search is limited to 7 points");
    let edges: Vec<(PointId, PointId)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let pairs: Vec<(PointId, PointId)> = inst.nontrivial().map(|p| (p.a, p.b)).collect();
    let mut best = Dist::MAX;
    for mask in 0u64..(1 << edges.len()) {
        let mut w = 0;
        let mut parent: Vec<usize> = (0..n).collect();
        for (b, &(x, y)) in edges.iter().enumerate() {
            if mask >> b & 1 == 1 {
                w += m.d(x, y);
                let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
                parent[rx] = ry;
            }
        }
        if w < best && pairs.iter().all(|&(a, b)| find(&mut parent, a) == find(&mut parent, b)) {
            best = w;
        }
    }
    best
}

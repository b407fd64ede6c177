//! Reference solvers: minimum spanning trees, the primal-dual 2-approximation
//! and an exact oracle for small instances.

mod gw;
mod oracle;

pub use gw::gw_primal_dual;
pub use oracle::{
    brute_force_opt, brute_force_steiner_tree, default_candidates, CertifiedSteinerTree,
    OracleBudget,
};

use crate::forest::Forest;
use crate::metric::{MetricSpace, PointId};
use crate::unionfind::UnionFind;

/// Kruskal on the complete graph over `points`; ties by (length, edge).
pub fn mst(m: &MetricSpace, points: &[PointId]) -> Forest {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    let mut cand = Vec::with_capacity(pts.len() * pts.len() / 2);
    for (i, &a) in pts.iter().enumerate() {
        for (j, &b) in pts.iter().enumerate().skip(i + 1) {
            cand.push((m.d(a, b), a, b, i, j));
        }
    }
    cand.sort_unstable();
    let mut uf = UnionFind::new(pts.len());
    let mut f = Forest::new();
    for (_, a, b, i, j) in cand {
        if uf.union(i, j) {
            f.insert(a, b);
        }
    }
    f
}

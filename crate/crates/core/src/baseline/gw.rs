use std::collections::BTreeMap;

use num_rational::Ratio;

use crate::forest::Forest;
use crate::instance::{is_feasible, Instance};
use crate::metric::{MetricSpace, PointId};
use crate::unionfind::UnionFind;

type Q = Ratio<i128>;

/// Synchronized moat growing over the terminal vertices followed by reverse
/// delete. Duals are exact rationals; ties between tight edges go to the
/// lexicographically smallest edge.
pub fn gw_primal_dual(m: &MetricSpace, inst: &Instance) -> Forest {
    let pairs: Vec<(PointId, PointId)> = inst.nontrivial().map(|p| (p.a, p.b)).collect();
    let terms: Vec<PointId> = {
        let mut t: Vec<PointId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        t.sort_unstable();
        t.dedup();
        t
    };
    let idx: BTreeMap<PointId, usize> = terms.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let req: Vec<(usize, usize)> = pairs.iter().map(|&(a, b)| (idx[&a], idx[&b])).collect();
    let t = terms.len();
    let mut uf = UnionFind::new(t);
    let mut load = vec![Q::from_integer(0); t];
    let mut added: Vec<(PointId, PointId)> = Vec::new();

    loop {
        let mut active = vec![false; t];
        for &(a, b) in &req {
            let (ra, rb) = (uf.find(a), uf.find(b));
            if ra != rb {
                active[ra] = true;
                active[rb] = true;
            }
        }
        let roots: Vec<usize> = (0..t).map(|v| uf.find(v)).collect();
        if !roots.iter().any(|&r| active[r]) {
            break;
        }
        let mut best: Option<(Q, usize, usize)> = None;
        for a in 0..t {
            for b in (a + 1)..t {
                let (ra, rb) = (roots[a], roots[b]);
                if ra == rb {
                    continue;
                }
                let act = active[ra] as i128 + active[rb] as i128;
                if act == 0 {
                    continue;
                }
                let slack = Q::from_integer(m.d(terms[a], terms[b]) as i128) - load[a] - load[b];
                let eps = slack / Q::from_integer(act);
                if best.as_ref().is_none_or(|(be, _, _)| eps < *be) {
                    best = Some((eps, a, b));
                }
            }
        }
        let (eps, a, b) = best.expect("an active moat always has an outgoing edge");
        for v in 0..t {
            if active[roots[v]] {
                load[v] += eps;
            }
        }
        uf.union(a, b);
        added.push((terms[a], terms[b]));
    }

    let mut f = Forest::from_edges(added.iter().copied());
    for &(a, b) in added.iter().rev() {
        let e = crate::forest::Edge::new(a, b).unwrap();
        f.remove(&e);
        if !is_feasible(&f, inst) {
            f.insert(a, b);
        }
    }
    f
}

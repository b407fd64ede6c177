//! Forests as canonical edge sets, with the structural transformations used
//! by the pipeline: net-respecting rerouting, Steiner chains and crossing
//! components.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::baseline::CertifiedSteinerTree;
use crate::error::{Error, Result};
use crate::metric::{floor_log, Dist, MetricSpace, NetHierarchy, PointId};
use crate::unionfind::UnionFind;

/// Undirected edge stored with its smaller endpoint first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge(pub PointId, pub PointId);

impl Edge {
    pub fn new(a: PointId, b: PointId) -> Option<Edge> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Edge(a, b)),
            std::cmp::Ordering::Greater => Some(Edge(b, a)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn len(&self, m: &MetricSpace) -> Dist {
        m.d(self.0, self.1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Forest {
    edges: BTreeSet<Edge>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub vertices: Vec<PointId>,
    pub edges: Vec<Edge>,
    pub weight: Dist,
}

impl Component {
    pub fn contains(&self, p: PointId) -> bool {
        self.vertices.binary_search(&p).is_ok()
    }
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    edges: Vec<[PointId; 2]>,
}

impl Forest {
    pub fn new() -> Self {
        Forest::default()
    }

    pub fn from_edges<I: IntoIterator<Item = (PointId, PointId)>>(it: I) -> Self {
        let mut f = Forest::new();
        for (a, b) in it {
            f.insert(a, b);
        }
        f
    }

    /// Inserts `{a, b}`. Self-loops are ignored.
    pub fn insert(&mut self, a: PointId, b: PointId) -> bool {
        match Edge::new(a, b) {
            Some(e) => self.edges.insert(e),
            None => false,
        }
    }

    pub fn remove(&mut self, e: &Edge) -> bool {
        self.edges.remove(e)
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> + '_ {
        self.edges.iter()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weight(&self, m: &MetricSpace) -> Dist {
        self.edges.iter().map(|e| e.len(m)).sum()
    }

    pub fn extend(&mut self, other: &Forest) {
        self.edges.extend(other.edges.iter().copied());
    }

    pub fn vertices(&self) -> BTreeSet<PointId> {
        self.edges.iter().flat_map(|e| [e.0, e.1]).collect()
    }

    pub fn adjacency(&self) -> BTreeMap<PointId, Vec<PointId>> {
        let mut adj: BTreeMap<PointId, Vec<PointId>> = BTreeMap::new();
        for e in &self.edges {
            adj.entry(e.0).or_default().push(e.1);
            adj.entry(e.1).or_default().push(e.0);
        }
        adj
    }

    /// Connected components, ordered by smallest vertex.
    pub fn components(&self, m: &MetricSpace) -> Vec<Component> {
        let verts: Vec<PointId> = self.vertices().into_iter().collect();
        let pos: BTreeMap<PointId, usize> = verts.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut uf = UnionFind::new(verts.len());
        for e in &self.edges {
            uf.union(pos[&e.0], pos[&e.1]);
        }
        let mut by_root: BTreeMap<usize, Component> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, &p) in verts.iter().enumerate() {
            let r = uf.find(i);
            by_root
                .entry(r)
                .or_insert_with(|| {
                    order.push(r);
                    Component { vertices: Vec::new(), edges: Vec::new(), weight: 0 }
                })
                .vertices
                .push(p);
        }
        for e in &self.edges {
            let c = by_root.get_mut(&uf.find(pos[&e.0])).unwrap();
            c.edges.push(*e);
            c.weight += e.len(m);
        }
        order.into_iter().map(|r| by_root.remove(&r).unwrap()).collect()
    }

    /// True when `a` and `b` are the same point or joined by a path.
    pub fn connects(&self, a: PointId, b: PointId) -> bool {
        if a == b {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = BTreeSet::from([a]);
        let mut stack = vec![a];
        while let Some(v) = stack.pop() {
            for &w in adj.get(&v).map(|v| v.as_slice()).unwrap_or(&[]) {
                if w == b {
                    return true;
                }
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        false
    }

    pub fn is_acyclic(&self) -> bool {
        let verts: Vec<PointId> = self.vertices().into_iter().collect();
        let pos: BTreeMap<PointId, usize> = verts.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let mut uf = UnionFind::new(verts.len());
        self.edges.iter().all(|e| uf.union(pos[&e.0], pos[&e.1]))
    }

    pub fn to_json(&self) -> String {
        let f = ForestFile { edges: self.edges.iter().map(|e| [e.0, e.1]).collect() };
        serde_json::to_string(&f).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Forest> {
        let f: ForestFile = serde_json::from_str(s)?;
        Ok(Forest::from_edges(f.edges.into_iter().map(|[a, b]| (a, b))))
    }
}

/// Height `i` whose net an edge of length `d` must use: `s^i <= e_nr d < s^(i+1)`.
fn required_height(m: &MetricSpace, h: &NetHierarchy, d: Dist, e_nr: f64) -> Option<i64> {
    let scaled = (e_nr * d as f64).floor() as Dist;
    floor_log(h.s(), scaled, m.scale()).map(|i| i.min(h.top() as i64))
}

/// True when both endpoints lie in the net of the height the edge length
/// demands.
pub fn edge_is_net_respecting(m: &MetricSpace, h: &NetHierarchy, e: &Edge, e_nr: f64) -> bool {
    match required_height(m, h, e.len(m), e_nr) {
        None => true,
        Some(i) => h.contains(i, e.0) && h.contains(i, e.1),
    }
}

/// Reroutes every edge `x y` that is not net-respecting through the nearest
/// net points `x', y'` of the required height, recursing on the three pieces.
pub fn make_net_respecting(f: &Forest, m: &MetricSpace, h: &NetHierarchy, e_nr: f64) -> Forest {
    let mut out = Forest::new();
    let cap = 2 * (h.top() + 1);
    for e in f.edges() {
        route_net(m, h, e_nr, e.0, e.1, 0, cap, &mut out);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn route_net(
    m: &MetricSpace,
    h: &NetHierarchy,
    e_nr: f64,
    x: PointId,
    y: PointId,
    depth: usize,
    cap: usize,
    out: &mut Forest,
) {
    if x == y {
        return;
    }
    let i = match required_height(m, h, m.d(x, y), e_nr) {
        None => {
            out.insert(x, y);
            return;
        }
        Some(i) => i,
    };
    if (h.contains(i, x) && h.contains(i, y)) || depth >= cap {
        out.insert(x, y);
        return;
    }
    let net = h.net(i).expect("height clamped to top");
    let xp = m.nearest(x, net).expect("nets are nonempty");
    let yp = m.nearest(y, net).expect("nets are nonempty");
    route_net(m, h, e_nr, x, xp, depth + 1, cap, out);
    route_net(m, h, e_nr, xp, yp, depth + 1, cap, out);
    route_net(m, h, e_nr, yp, y, depth + 1, cap, out);
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    pub points: Vec<PointId>,
    pub weight: Dist,
}

/// Heaviest path whose interior points are non-terminals of degree two.
/// Ties go to the lexicographically smallest endpoint pair.
pub fn find_longest_steiner_chain(
    f: &Forest,
    m: &MetricSpace,
    terminals: &BTreeSet<PointId>,
) -> Result<Option<Chain>> {
    if f.is_empty() {
        return Ok(None);
    }
    let adj = f.adjacency();
    if !f.is_acyclic() || f.components(m).len() != 1 {
        return Err(Error::NotATree);
    }
    let is_end = |v: PointId| terminals.contains(&v) || adj[&v].len() != 2;
    let mut best: Option<((PointId, PointId), Chain)> = None;
    for (&v, nbrs) in &adj {
        if !is_end(v) {
            continue;
        }
        for &first in nbrs {
            let mut path = vec![v, first];
            let mut weight = m.d(v, first);
            while !is_end(*path.last().unwrap()) {
                let cur = *path.last().unwrap();
                let prev = path[path.len() - 2];
                let next = adj[&cur].iter().copied().find(|&w| w != prev).unwrap();
                weight += m.d(cur, next);
                path.push(next);
            }
            let end = *path.last().unwrap();
            if end < v {
                continue;
            }
            let key = (v, end);
            let better = match &best {
                None => true,
                Some((bk, bc)) => weight > bc.weight || (weight == bc.weight && key < *bk),
            };
            if better {
                best = Some((key, Chain { points: path, weight }));
            }
        }
    }
    Ok(best.map(|(_, c)| c))
}

/// Components of `f` with vertices both inside and outside the point set
/// described by `inside`.
pub fn crossing_components<F: Fn(PointId) -> bool>(
    f: &Forest,
    m: &MetricSpace,
    inside: F,
) -> Vec<Component> {
    f.components(m)
        .into_iter()
        .filter(|c| c.vertices.iter().any(|&v| inside(v)) && c.vertices.iter().any(|&v| !inside(v)))
        .collect()
}

/// Checks that every Steiner point of an exact Steiner tree lies within
/// `4 k gamma log2(4 / gamma) D` of the terminals, given that no tree edge
/// is longer than `gamma D`.
pub fn steiner_proximity_check(
    tree: &CertifiedSteinerTree,
    m: &MetricSpace,
    gamma: f64,
    k: f64,
    diam_bound: Dist,
) -> Result<bool> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::PreconditionViolated("gamma must lie in (0, 1]".into()));
    }
    let terminals: Vec<PointId> = tree.terminals().to_vec();
    if diam_bound < m.diameter(&terminals) {
        return Err(Error::PreconditionViolated("D is below the terminal diameter".into()));
    }
    let longest = tree.forest().edges().map(|e| e.len(m)).max().unwrap_or(0);
    if longest as f64 > gamma * diam_bound as f64 {
        return Err(Error::PreconditionViolated("an edge is longer than gamma D".into()));
    }
    let bound = 4.0 * k * gamma * (4.0 / gamma).log2() * diam_bound as f64;
    Ok(tree
        .forest()
        .vertices()
        .into_iter()
        .filter(|v| !terminals.contains(v))
        .all(|r| m.dist_to_set(r, &terminals).unwrap_or(0) as f64 <= bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_SCALE;

    fn line(xs: &[f64]) -> MetricSpace {
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        MetricSpace::from_points(&pts, DEFAULT_SCALE).unwrap()
    }

    #[test]
    fn edges_are_canonical() {
        let mut f = Forest::new();
        assert!(f.insert(3, 1));
        assert!(!f.insert(1, 3));
        assert!(!f.insert(2, 2));
        assert_eq!(f.edges().copied().collect::<Vec<_>>(), vec![Edge(1, 3)]);
    }

    #[test]
    fn components_and_weight() {
        let m = line(&[0.0, 1.0, 2.0, 10.0, 12.0]);
        let f = Forest::from_edges([(0, 1), (1, 2), (3, 4)]);
        let cs = f.components(&m);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].vertices, vec![0, 1, 2]);
        assert_eq!(cs[0].weight, 2 * DEFAULT_SCALE);
        assert_eq!(cs[1].weight, 2 * DEFAULT_SCALE);
        assert_eq!(f.weight(&m), 4 * DEFAULT_SCALE);
        assert!(f.connects(0, 2));
        assert!(!f.connects(0, 3));
    }

    #[test]
    fn json_roundtrip() {
        let f = Forest::from_edges([(0, 1), (4, 2)]);
        let s = f.to_json();
        assert_eq!(s, r#"{"edges":[[0,1],[2,4]]}"#);
        assert_eq!(Forest::from_json(&s).unwrap(), f);
    }

    #[test]
    fn net_respecting_keeps_net_edges() {
        let m = line(&[0.0, 1.0, 2.0, 3.0, 8.0, 9.0]);
        let h = NetHierarchy::build(&m, 2, 4).unwrap();
        let f = Forest::from_edges([(1, 5)]);
        let g = make_net_respecting(&f, &m, &h, 0.5);
        for e in g.edges() {
            assert!(edge_is_net_respecting(&m, &h, e, 0.5));
        }
        assert!(g.connects(1, 5));
        let net = make_net_respecting(&g, &m, &h, 0.5);
        assert_eq!(net, g);
    }

    #[test]
    fn short_edges_untouched() {
        let m = line(&[0.0, 1.0]);
        let h = NetHierarchy::build(&m, 4, 2).unwrap();
        let f = Forest::from_edges([(0, 1)]);
        assert_eq!(make_net_respecting(&f, &m, &h, 0.5), f);
    }

    #[test]
    fn chain_in_path() {
        let m = line(&[0.0, 1.0, 2.0, 3.0]);
        let f = Forest::from_edges([(0, 1), (1, 2), (2, 3)]);
        let c = find_longest_steiner_chain(&f, &m, &BTreeSet::from([0, 3])).unwrap().unwrap();
        assert_eq!(c.points, vec![0, 1, 2, 3]);
        assert_eq!(c.weight, 3 * DEFAULT_SCALE);
        let c = find_longest_steiner_chain(&f, &m, &BTreeSet::from([0, 2, 3])).unwrap().unwrap();
        assert_eq!(c.points, vec![0, 1, 2]);
    }

    #[test]
    fn chain_rejects_cycles() {
        let m = line(&[0.0, 1.0, 2.0]);
        let f = Forest::from_edges([(0, 1), (1, 2), (0, 2)]);
        assert_eq!(find_longest_steiner_chain(&f, &m, &BTreeSet::new()), Err(Error::NotATree));
        let f = Forest::from_edges([(0, 1)]);
        assert!(find_longest_steiner_chain(&f, &m, &BTreeSet::new()).unwrap().is_some());
        assert_eq!(find_longest_steiner_chain(&Forest::new(), &m, &BTreeSet::new()), Ok(None));
    }

    #[test]
    fn crossing() {
        let m = line(&[0.0, 1.0, 2.0, 3.0]);
        let f = Forest::from_edges([(0, 1), (2, 3)]);
        let c = crossing_components(&f, &m, |p| p <= 1);
        assert!(c.is_empty());
        let f = Forest::from_edges([(0, 1), (1, 2)]);
        assert_eq!(crossing_components(&f, &m, |p| p <= 1).len(), 1);
    }
}

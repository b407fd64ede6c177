//! Cell assignment for a forest on a hierarchical decomposition: basic,
//! promoted, virtual and non-basic cells, disjoint regions, and the cell
//! property with its enforcement.
//!
//! Cell sizes are powers of `s`, so every quantity here is represented by
//! its integer exponent and compared exactly.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::decomposition::{ClusterId, Decomposition};
use crate::error::{Error, Result};
use crate::forest::{crossing_components, Component, Forest};
use crate::metric::{Dist, MetricSpace, NetHierarchy, PointId};
use crate::unionfind::UnionFind;

/// `1/gamma0 = s^inv_gamma0` and `1/gamma1 = s^inv_gamma1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellParams {
    pub s: u32,
    pub num_heights: usize,
    pub inv_gamma0: i64,
    pub inv_gamma1: i64,
}

impl CellParams {
    /// `1/gamma0` is `k s^2 L / eps` rounded up to a power of `s`, `1/gamma1`
    /// is `s^2 / eps` rounded down to a power of `s`.
    pub fn from_eps(eps: f64, k: f64, s: u32, num_heights: usize) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) || k <= 0.0 || s < 2 {
            return Err(Error::InvalidParams("need 0 < eps < 1, k > 0, s >= 2".into()));
        }
        let sf = s as f64;
        let g0 = k * sf * sf * num_heights as f64 / eps;
        let g1 = sf * sf / eps;
        let mut a0 = 0i64;
        while sf.powi(a0 as i32) < g0 * (1.0 - 1e-12) {
            a0 += 1;
        }
        let mut a1 = 0i64;
        while sf.powi(a1 as i32 + 1) <= g1 * (1.0 + 1e-12) {
            a1 += 1;
        }
        Self::with_exponents(s, num_heights, a0, a1)
    }

    pub fn with_exponents(s: u32, num_heights: usize, inv_gamma0: i64, inv_gamma1: i64) -> Result<Self> {
        if inv_gamma1 < 0 || inv_gamma0 < inv_gamma1 {
            return Err(Error::InvalidParams("need 1 >= gamma1 >= gamma0".into()));
        }
        Ok(CellParams { s, num_heights, inv_gamma0, inv_gamma1 })
    }
}

/// Largest `e` with `s^e` units `<= l`.
pub fn floor_pow_exp(s: u32, l: Dist, scale: i64) -> Result<i64> {
    if l <= 0 {
        return Err(Error::NonPositiveWeight);
    }
    let (l, scale, s) = (l as i128, scale as i128, s as i128);
    let mut e = 0i64;
    if l >= scale {
        let mut p = scale;
        while p * s <= l {
            p *= s;
            e += 1;
        }
    } else {
        let mut q = l;
        while q < scale {
            q *= s;
            e -= 1;
        }
    }
    Ok(e)
}

/// Exponent of the cell size `h(i, l)`:
/// `gamma1 s^i` when `floor_s(l) >= s^i`, `gamma1 floor_s(l)` when
/// `(gamma0/gamma1) s^i <= floor_s(l) < s^i`, and `gamma0 s^i` otherwise.
pub fn h_exponent(i: i64, l: Dist, p: &CellParams, scale: i64) -> Result<i64> {
    let e = floor_pow_exp(p.s, l, scale)?;
    Ok(if e >= i {
        i - p.inv_gamma1
    } else if e >= i - (p.inv_gamma0 - p.inv_gamma1) {
        e - p.inv_gamma1
    } else {
        i - p.inv_gamma0
    })
}

/// `h(i, l)` in units, as an exact rational.
pub fn h_function(i: i64, l: Dist, p: &CellParams, scale: i64) -> Result<Ratio<i128>> {
    let e = h_exponent(i, l, p, scale)?;
    let s = p.s as i128;
    Ok(if e >= 0 {
        Ratio::from_integer(s.pow(e as u32))
    } else {
        Ratio::new(1, s.pow((-e) as u32))
    })
}

/// Height of the basic cells a component of weight `l` gets in a cluster of
/// height `i`, clamped to existing heights.
pub fn cell_height(i: usize, l: Dist, p: &CellParams, scale: i64) -> usize {
    match h_exponent(i as i64, l, p, scale) {
        Ok(e) => e.clamp(0, i as i64) as usize,
        Err(_) => 0,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCells {
    pub bas: Vec<ClusterId>,
    /// Basic cell to the index (in `Forest::components` order) of the
    /// lightest component that induced it.
    pub owner: BTreeMap<ClusterId, usize>,
    pub pro: Vec<ClusterId>,
    pub vir: Vec<ClusterId>,
    pub nbas: Vec<ClusterId>,
}

impl ClusterCells {
    pub fn eff(&self) -> Vec<ClusterId> {
        let mut v: Vec<ClusterId> = self.bas.iter().chain(&self.nbas).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellAssignment {
    pub clusters: Vec<ClusterCells>,
}

impl CellAssignment {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cells serialize")
    }
}

/// Basic cells of cluster `c`: for each crossing component `A`, the
/// sub-clusters of height `h(Ht(c), w(A))` meeting `A` inside `c`.
pub fn basic_cells(
    f: &Forest,
    m: &MetricSpace,
    d: &Decomposition,
    c: ClusterId,
    p: &CellParams,
) -> (Vec<ClusterId>, BTreeMap<ClusterId, usize>) {
    let comps = f.components(m);
    basic_cells_from(&comps, m, d, c, p)
}

fn basic_cells_from(
    comps: &[Component],
    m: &MetricSpace,
    d: &Decomposition,
    c: ClusterId,
    p: &CellParams,
) -> (Vec<ClusterId>, BTreeMap<ClusterId, usize>) {
    let ht = d.cluster(c).height;
    let mut owner: BTreeMap<ClusterId, (Dist, usize)> = BTreeMap::new();
    for (idx, a) in comps.iter().enumerate() {
        let inside: Vec<PointId> = a.vertices.iter().copied().filter(|&v| d.contains(c, v)).collect();
        if inside.is_empty() || inside.len() == a.vertices.len() {
            continue;
        }
        let h = cell_height(ht, a.weight, p, m.scale());
        for v in inside {
            let cell = d.cluster_at(h, v);
            let cand = (a.weight, idx);
            owner.entry(cell).and_modify(|o| *o = (*o).min(cand)).or_insert(cand);
        }
    }
    let bas = owner.keys().copied().collect();
    (bas, owner.into_iter().map(|(k, v)| (k, v.1)).collect())
}

/// Siblings of basic cells that are not basic become promoted (replaced by
/// their basic descendants for the highest sub-cluster where they are
/// basic) or virtual.
pub fn promoted_virtual(
    d: &Decomposition,
    c: ClusterId,
    all_bas: &[Vec<ClusterId>],
) -> (Vec<ClusterId>, Vec<ClusterId>) {
    let bas: BTreeSet<ClusterId> = all_bas[c].iter().copied().collect();
    let mut siblings = BTreeSet::new();
    for &e in &bas {
        if e == c {
            continue;
        }
        if let Some(par) = d.cluster(e).parent {
            for &sib in &d.cluster(par).children {
                if sib != e && !bas.contains(&sib) {
                    siblings.insert(sib);
                }
            }
        }
    }
    let ht = d.cluster(c).height;
    let mut pro = BTreeSet::new();
    let mut vir = BTreeSet::new();
    for e in siblings {
        let he = d.cluster(e).height;
        let mut found = false;
        for hh in (he..ht).rev() {
            let a = d.ancestor_at(e, hh);
            if all_bas[a].contains(&e) {
                for &x in &all_bas[a] {
                    if d.is_descendant(x, e) {
                        pro.insert(x);
                    }
                }
                found = true;
                break;
            }
        }
        if !found {
            vir.insert(e);
        }
    }
    (pro.into_iter().collect(), vir.into_iter().collect())
}

/// `e ∩ c` for clusters of a laminar hierarchy.
fn intersect(d: &Decomposition, e: ClusterId, c: ClusterId) -> Option<ClusterId> {
    if d.is_descendant(e, c) {
        Some(e)
    } else if d.is_descendant(c, e) {
        Some(c)
    } else {
        None
    }
}

/// `{e ∩ c : e ∈ Pro ∪ Vir ∪ NBas(parent)} \ Bas(c)`.
pub fn nonbasic_cells(
    d: &Decomposition,
    c: ClusterId,
    pro: &[ClusterId],
    vir: &[ClusterId],
    bas: &[ClusterId],
    parent_nbas: &[ClusterId],
) -> Vec<ClusterId> {
    let out: BTreeSet<ClusterId> = pro
        .iter()
        .chain(vir)
        .chain(parent_nbas)
        .filter_map(|&e| intersect(d, e, c))
        .filter(|e| !bas.contains(e))
        .collect();
    out.into_iter().collect()
}

pub fn assign_cells(f: &Forest, m: &MetricSpace, d: &Decomposition, p: &CellParams) -> CellAssignment {
    let comps = f.components(m);
    let n = d.clusters.len();
    let mut cells = vec![ClusterCells::default(); n];
    for c in 0..n {
        let (bas, owner) = basic_cells_from(&comps, m, d, c, p);
        cells[c].bas = bas;
        cells[c].owner = owner;
    }
    let all_bas: Vec<Vec<ClusterId>> = cells.iter().map(|x| x.bas.clone()).collect();
    for c in 0..n {
        let (pro, vir) = promoted_virtual(d, c, &all_bas);
        cells[c].pro = pro;
        cells[c].vir = vir;
    }
    // parents have smaller ids than their children
    for c in 0..n {
        let parent_nbas = match d.cluster(c).parent {
            Some(par) => cells[par].nbas.clone(),
            None => Vec::new(),
        };
        cells[c].nbas = nonbasic_cells(d, c, &cells[c].pro, &cells[c].vir, &cells[c].bas, &parent_nbas);
    }
    CellAssignment { clusters: cells }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub cell: ClusterId,
    pub height: usize,
    pub points: Vec<PointId>,
}

/// Each cell minus the cells of the family strictly below it. Empty regions
/// are kept so that every cell induces exactly one region.
pub fn disjointify(cells: &[ClusterId], d: &Decomposition) -> Result<Vec<Region>> {
    let mut cs = cells.to_vec();
    cs.sort_unstable();
    cs.dedup();
    for (k, &a) in cs.iter().enumerate() {
        for &b in &cs[k + 1..] {
            let nested = d.is_descendant(a, b) || d.is_descendant(b, a);
            if !nested && d.cluster(a).members.iter().any(|&p| d.contains(b, p)) {
                return Err(Error::NotLaminar);
            }
        }
    }
    Ok(cs
        .iter()
        .map(|&u| {
            let below: Vec<ClusterId> =
                cs.iter().copied().filter(|&e| e != u && d.is_descendant(e, u)).collect();
            let points = d
                .cluster(u)
                .members
                .iter()
                .copied()
                .filter(|&p| !below.iter().any(|&e| d.contains(e, p)))
                .collect();
            Region { cell: u, height: d.cluster(u).height, points }
        })
        .collect())
}

/// `s1` refines `s2`: every cell of `s2` is in `s1` or has all its children
/// in `s1`.
pub fn check_refinement(s1: &[ClusterId], s2: &[ClusterId], d: &Decomposition) -> bool {
    s2.iter()
        .all(|e| s1.contains(e) || d.cluster(*e).children.iter().all(|ch| s1.contains(ch)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellViolation {
    pub cluster: ClusterId,
    pub cell: ClusterId,
    pub components: usize,
}

/// Regions (of the cells chosen by `cells_of`) that meet two or more
/// components crossing their cluster.
pub fn check_cell_property<F: Fn(ClusterId) -> Vec<ClusterId>>(
    f: &Forest,
    m: &MetricSpace,
    d: &Decomposition,
    cells_of: F,
) -> Vec<CellViolation> {
    let mut out = Vec::new();
    for c in 0..d.clusters.len() {
        let crossing = crossing_components(f, m, |p| d.contains(c, p));
        if crossing.len() < 2 {
            continue;
        }
        let regions = disjointify(&cells_of(c), d).expect("hierarchy cells are laminar");
        for r in regions {
            let k = crossing
                .iter()
                .filter(|a| r.points.iter().any(|&p| a.contains(p)))
                .count();
            if k >= 2 {
                out.push(CellViolation { cluster: c, cell: r.cell, components: k });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforceReport {
    pub added_edges: usize,
    pub components_before: usize,
    pub sweeps: usize,
}

/// Joins components that share a region, sweeping clusters from the top
/// height down and regions in non-decreasing height, until both the basic
/// and the effective cells satisfy the cell property. Each added edge is the
/// shortest pair between the first component in the region and another one,
/// with both endpoints in the region.
pub fn enforce_cell_property(
    f: &Forest,
    m: &MetricSpace,
    d: &Decomposition,
    p: &CellParams,
) -> (Forest, EnforceReport) {
    let mut g = f.clone();
    let mut report = EnforceReport { components_before: f.components(m).len(), ..Default::default() };
    loop {
        report.sweeps += 1;
        let mut changed = false;
        for ht in (0..=d.root_height()).rev() {
            let ids: Vec<ClusterId> = d.at_height(ht).map(|c| c.id).collect();
            for c in ids {
                let (bas, _) = basic_cells(&g, m, d, c, p);
                changed |= join_in_regions(&mut g, m, d, c, &bas, &mut report);
            }
        }
        let cells = assign_cells(&g, m, d, p);
        for c in 0..d.clusters.len() {
            changed |= join_in_regions(&mut g, m, d, c, &cells.clusters[c].eff(), &mut report);
        }
        if !changed {
            return (g, report);
        }
    }
}

fn join_in_regions(
    g: &mut Forest,
    m: &MetricSpace,
    d: &Decomposition,
    c: ClusterId,
    cells: &[ClusterId],
    report: &mut EnforceReport,
) -> bool {
    let mut regions = disjointify(cells, d).expect("hierarchy cells are laminar");
    regions.sort_by_key(|r| (r.height, r.cell));
    let mut changed = false;
    for r in regions {
        let crossing = crossing_components(g, m, |p| d.contains(c, p));
        let touching: Vec<Vec<PointId>> = crossing
            .iter()
            .map(|a| r.points.iter().copied().filter(|&p| a.contains(p)).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect();
        if touching.len() < 2 {
            continue;
        }
        let mut uf = UnionFind::new(touching.len());
        for j in 1..touching.len() {
            if !uf.union(0, j) {
                continue;
            }
            let (x, y) = touching[0]
                .iter()
                .flat_map(|&x| touching[j].iter().map(move |&y| (x, y)))
                .min_by_key(|&(x, y)| (m.d(x, y), x.min(y), x.max(y)))
                .unwrap();
            g.insert(x, y);
            report.added_edges += 1;
            changed = true;
        }
    }
    changed
}

/// Net points of heights `Ht(c) - 2 inv_gamma0 ..= Ht(c)` close enough to
/// the center of `c` to center one of its sub-clusters.
pub fn candidate_centers(
    m: &MetricSpace,
    h: &NetHierarchy,
    d: &Decomposition,
    c: ClusterId,
    p: &CellParams,
) -> Vec<PointId> {
    let cl = d.cluster(c);
    if cl.height == 0 {
        return vec![cl.center];
    }
    let i = cl.height as i64;
    let reach = 2 * m.pow(p.s, i) + 2 * m.pow(p.s, i - 1);
    let lo = (i - 2 * p.inv_gamma0).max(0);
    let mut out = BTreeSet::new();
    for j in lo..=i {
        for &u in h.net(j).expect("height within hierarchy") {
            if m.d(u, cl.center) <= reach {
                out.insert(u);
            }
        }
    }
    out.into_iter().collect()
}

/// Structural checks of a cell assignment on a forest, and of the cell
/// property enforcement applied to it.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureAudit {
    /// Clusters whose effective cells are not refined by their children's.
    pub refinement_failures: Vec<ClusterId>,
    /// Clusters with more effective cells than the cap.
    pub over_cap: Vec<ClusterId>,
    /// Clusters with an effective cell centered outside the candidates.
    pub outside_candidates: Vec<ClusterId>,
    pub enforce: EnforceReport,
    pub violations_after: usize,
}

impl StructureAudit {
    /// Everything holds except clusters that are flagged as over the cap.
    pub fn ok(&self) -> bool {
        self.refinement_failures.is_empty()
            && self.outside_candidates.is_empty()
            && self.violations_after == 0
            && self.enforce.added_edges + 1 <= self.enforce.components_before.max(1)
    }
}

pub fn audit_structure(
    f: &Forest,
    m: &MetricSpace,
    h: &NetHierarchy,
    d: &Decomposition,
    p: &CellParams,
    rho_cap: usize,
) -> StructureAudit {
    let (g, enforce) = enforce_cell_property(f, m, d, p);
    let cells = assign_cells(&g, m, d, p);
    let mut audit = StructureAudit { enforce, ..Default::default() };
    audit.violations_after = check_cell_property(&g, m, d, |c| cells.clusters[c].bas.clone()).len()
        + check_cell_property(&g, m, d, |c| cells.clusters[c].eff()).len();
    for c in 0..d.clusters.len() {
        let eff = cells.clusters[c].eff();
        let kids: Vec<ClusterId> = d
            .cluster(c)
            .children
            .iter()
            .flat_map(|&k| cells.clusters[k].eff())
            .collect();
        if !d.cluster(c).children.is_empty() && !check_refinement(&kids, &eff, d) {
            audit.refinement_failures.push(c);
        }
        if eff.len() > rho_cap {
            audit.over_cap.push(c);
        }
        let can = candidate_centers(m, h, d, c, p);
        if eff.iter().any(|&e| can.binary_search(&d.cluster(e).center).is_err()) {
            audit.outside_candidates.push(c);
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::DecompositionParams;
    use crate::metric::DEFAULT_SCALE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SC: i64 = DEFAULT_SCALE;

    fn small() -> CellParams {
        CellParams::with_exponents(4, 5, 3, 1).unwrap()
    }

    #[test]
    fn h_cases() {
        let p = small();
        // heavy component: gamma1 s^i = s^(3-1)
        assert_eq!(h_exponent(3, 100 * SC, &p, SC).unwrap(), 2);
        // middle band: floor_s(l) = s^2, gamma1 s^2 = s^1
        assert_eq!(h_exponent(3, 20 * SC, &p, SC).unwrap(), 1);
        // light: gamma0 s^i = s^0
        assert_eq!(h_exponent(3, SC, &p, SC).unwrap(), 0);
        assert_eq!(h_exponent(3, 0, &p, SC), Err(Error::NonPositiveWeight));
        assert_eq!(h_function(3, 100 * SC, &p, SC).unwrap(), Ratio::from_integer(16));
        assert_eq!(h_function(1, SC, &p, SC).unwrap(), Ratio::new(1, 4));
        assert_eq!(h_function(1, SC / 16, &p, SC).unwrap(), Ratio::new(1, 16));
    }

    #[test]
    fn params_from_eps() {
        let p = CellParams::from_eps(0.5, 2.0, 4, 4).unwrap();
        // k s^2 L / eps = 256 = 4^4; s^2 / eps = 32 -> 16 = 4^2
        assert_eq!((p.inv_gamma0, p.inv_gamma1), (4, 2));
    }

    #[test]
    fn floor_pow_fractional() {
        assert_eq!(floor_pow_exp(4, SC / 4, SC).unwrap(), -1);
        assert_eq!(floor_pow_exp(4, SC / 4 - 1, SC).unwrap(), -2);
        assert_eq!(floor_pow_exp(4, 4 * SC, SC).unwrap(), 1);
    }

    fn setup() -> (MetricSpace, NetHierarchy, Decomposition) {
        let pts: Vec<Vec<f64>> = (0..16).map(|k| vec![(k % 4) as f64 * 3.0, (k / 4) as f64 * 3.0]).collect();
        let m = MetricSpace::from_points(&pts, SC).unwrap();
        let top = NetHierarchy::auto_num_heights(&m, 4);
        let h = NetHierarchy::build(&m, 4, top).unwrap();
        let d = Decomposition::build(&m, &h, &DecompositionParams::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (m, h, d)
    }

    #[test]
    fn disjoint_regions_partition() {
        let (_, _, d) = setup();
        let root = d.root;
        let kids = d.cluster(root).children.clone();
        let mut cells = vec![root];
        cells.extend(kids.iter().take(1));
        let regions = disjointify(&cells, &d).unwrap();
        let total: usize = regions.iter().map(|r| r.points.len()).sum();
        assert_eq!(total, d.cluster(root).members.len());
    }

    #[test]
    fn enforcement_clears_violations() {
        let (m, h, d) = setup();
        let p = CellParams::with_exponents(4, h.top(), 3, 1).unwrap();
        let f = Forest::from_edges([(0, 15), (1, 14), (4, 11), (5, 6)]);
        let before = f.components(&m).len();
        let (g, rep) = enforce_cell_property(&f, &m, &d, &p);
        assert!(rep.added_edges < before);
        let cells = assign_cells(&g, &m, &d, &p);
        assert!(check_cell_property(&g, &m, &d, |c| cells.clusters[c].bas.clone()).is_empty());
        assert!(check_cell_property(&g, &m, &d, |c| cells.clusters[c].eff()).is_empty());
        for c in 0..d.clusters.len() {
            let can = candidate_centers(&m, &h, &d, c, &p);
            for e in cells.clusters[c].eff() {
                assert!(can.contains(&d.cluster(e).center));
            }
        }
    }

    #[test]
    fn refinement_basic() {
        let (_, _, d) = setup();
        let root = d.root;
        let kids = d.cluster(root).children.clone();
        assert!(check_refinement(&kids, &[root], &d));
        assert!(!check_refinement(&kids[1..], &[root], &d) || kids.len() == 1);
    }
}

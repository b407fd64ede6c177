use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::cells::disjointify;
use crate::decomposition::{ClusterId, Decomposition};
use crate::forest::Edge;
use crate::metric::PointId;
use crate::unionfind::UnionFind;

use super::DpContext;

/// One table cell: active portals `r` with their connectivity `y`, basic and
/// non-basic cells, the parts of `y` each region is connected to (`g`, keyed
/// by the inducing cell), and the promised merges `p` of parts of `y`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Entry {
    pub cluster: ClusterId,
    pub r: Vec<PointId>,
    pub y: Vec<Vec<PointId>>,
    pub bas: Vec<ClusterId>,
    pub nbas: Vec<ClusterId>,
    pub g: Vec<(ClusterId, Vec<u8>)>,
    pub p: Vec<Vec<u8>>,
}

impl Entry {
    pub fn base(leaf: ClusterId, x: PointId) -> Entry {
        Entry {
            cluster: leaf,
            r: vec![x],
            y: vec![vec![x]],
            bas: vec![leaf],
            nbas: Vec::new(),
            g: vec![(leaf, vec![0])],
            p: vec![vec![0]],
        }
    }

    pub fn final_entry(root: ClusterId) -> Entry {
        Entry {
            cluster: root,
            r: Vec::new(),
            y: Vec::new(),
            bas: Vec::new(),
            nbas: Vec::new(),
            g: Vec::new(),
            p: Vec::new(),
        }
    }

    pub fn cells(&self) -> Vec<ClusterId> {
        self.g.iter().map(|x| x.0).collect()
    }

    pub fn g_of(&self, cell: ClusterId) -> &[u8] {
        match self.g.binary_search_by_key(&cell, |x| x.0) {
            Ok(k) => &self.g[k].1,
            Err(_) => &[],
        }
    }

    /// Index of the part of `y` containing portal `x`.
    pub fn part_of(&self, x: PointId) -> Option<usize> {
        self.y.iter().position(|part| part.binary_search(&x).is_ok())
    }
}

/// Sorts parts internally and by smallest member.
pub fn canonical_partition<T: Ord + Copy>(mut parts: Vec<Vec<T>>) -> Vec<Vec<T>> {
    for p in parts.iter_mut() {
        p.sort_unstable();
        p.dedup();
    }
    parts.retain(|p| !p.is_empty());
    parts.sort_unstable_by_key(|p| p[0]);
    parts
}

fn is_partition_of<T: Ord + Copy>(parts: &[Vec<T>], set: &[T]) -> bool {
    let mut all: Vec<T> = parts.iter().flatten().copied().collect();
    let n = all.len();
    all.sort_unstable();
    all.dedup();
    all.len() == n && all == set && parts.iter().all(|p| !p.is_empty())
}

/// Local validity of an entry, independent of its children.
pub fn internal_constraints_ok(e: &Entry, ctx: &DpContext) -> Result<(), &'static str> {
    let d = ctx.d;
    let c = e.cluster;
    if e.r.len() > ctx.caps.r_cap {
        return Err("too many active portals");
    }
    if !e.r.windows(2).all(|w| w[0] < w[1]) {
        return Err("portals not sorted");
    }
    if !e.r.iter().all(|&x| d.is_portal(c, x)) {
        return Err("active point is not a portal of the cluster");
    }
    if !is_partition_of(&e.y, &e.r) {
        return Err("connectivity is not a partition of the portals");
    }
    if e.bas.iter().any(|x| e.nbas.contains(x)) {
        return Err("basic and non-basic cells overlap");
    }
    let mut cells: Vec<ClusterId> = e.bas.iter().chain(&e.nbas).copied().collect();
    cells.sort_unstable();
    if cells.len() > ctx.caps.rho_cap {
        return Err("too many cells");
    }
    if cells != e.cells() {
        return Err("connection map domain differs from the cells");
    }
    for &x in &cells {
        if !d.is_descendant(x, c) {
            return Err("cell outside the cluster");
        }
        if !ctx.can[c].contains(&d.cluster(x).center) {
            return Err("cell center is not a candidate center");
        }
    }
    for &x in &e.bas {
        if x == c {
            continue;
        }
        let par = d.cluster(x).parent.expect("proper sub-cluster has a parent");
        if !d.cluster(par).children.iter().all(|s| cells.contains(s)) {
            return Err("sibling of a basic cell is missing");
        }
    }
    let ny = e.y.len() as u8;
    if e.g.iter().any(|(_, parts)| parts.iter().any(|&k| k >= ny)) {
        return Err("connection map refers to a missing part");
    }
    let idx: Vec<u8> = (0..ny).collect();
    if !is_partition_of(&e.p, &idx) {
        return Err("promise is not a partition of the parts");
    }
    for (_, parts) in &e.g {
        if let Some(&first) = parts.first() {
            let home = e.p.iter().position(|q| q.contains(&first)).unwrap();
            if !parts.iter().all(|k| e.p[home].contains(k)) {
                return Err("a region is connected to parts with different promises");
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConsistencyFailure {
    pub step: u8,
    pub reason: &'static str,
}

fn fail(step: u8, reason: &'static str) -> Result<(), ConsistencyFailure> {
    Err(ConsistencyFailure { step, reason })
}

/// Full consistency of a parent entry with one entry per child and a portal
/// graph on the children's active portals. Used as the reference checker;
/// the table builder derives parents directly and is tested against it.
pub fn consistency_check(
    e: &Entry,
    kids: &[&Entry],
    graph: &[Edge],
    ctx: &DpContext,
) -> Result<(), ConsistencyFailure> {
    let d: &Decomposition = ctx.d;
    let c = e.cluster;
    let children = &d.cluster(c).children;
    if children.is_empty() {
        let base = Entry::base(c, d.cluster(c).members[0]);
        return if *e == base && kids.is_empty() && graph.is_empty() { Ok(()) } else { fail(0, "leaf entry must be the base entry") };
    }
    if kids.len() != children.len() || kids.iter().zip(children).any(|(k, &ch)| k.cluster != ch) {
        return fail(0, "children do not match the decomposition");
    }

    // step 1
    let lhs: BTreeSet<PointId> = kids
        .iter()
        .flat_map(|k| d.cluster(k.cluster).members.iter().chain(&k.r).copied())
        .collect();
    let rhs: BTreeSet<PointId> = d.cluster(c).members.iter().chain(&e.r).copied().collect();
    if lhs != rhs {
        return fail(1, "clusters and portals do not cover the same points");
    }

    // step 2
    let rp: Vec<PointId> = {
        let s: BTreeSet<PointId> = kids.iter().flat_map(|k| k.r.iter().copied()).collect();
        s.into_iter().collect()
    };
    let pos = |x: PointId| rp.binary_search(&x).ok();
    let mut uf = UnionFind::new(rp.len());
    for k in kids {
        for part in &k.y {
            for w in part.windows(2) {
                uf.union(pos(w[0]).unwrap(), pos(w[1]).unwrap());
            }
        }
    }
    for ed in graph {
        match (pos(ed.0), pos(ed.1)) {
            (Some(a), Some(b)) => {
                uf.union(a, b);
            }
            _ => return fail(2, "portal graph uses an inactive point"),
        }
    }
    let block: Vec<usize> = (0..rp.len()).map(|k| uf.find(k)).collect();
    let mut restricted: BTreeMap<usize, Vec<PointId>> = BTreeMap::new();
    for &x in &e.r {
        match pos(x) {
            Some(k) => restricted.entry(block[k]).or_default().push(x),
            None => return fail(2, "active portal not active in any child"),
        }
    }
    let yr = canonical_partition(restricted.values().cloned().collect());
    if yr != e.y {
        return fail(2, "connectivity does not match the merged children");
    }
    // Y index of the block with root b, if the block meets R.
    let block_part = |b: usize| -> Option<u8> {
        e.r.iter()
            .find(|&&x| block[pos(x).unwrap()] == b)
            .map(|&x| e.part_of(x).unwrap() as u8)
    };
    let part_block = |k: &Entry, part: u8| -> usize { block[pos(k.y[part as usize][0]).unwrap()] };

    // step 3
    let kid_bas: BTreeSet<ClusterId> = kids.iter().flat_map(|k| k.bas.iter().copied()).collect();
    let kid_cells: BTreeSet<ClusterId> = kids.iter().flat_map(|k| k.cells()).collect();
    for &u in &e.bas {
        if !kid_bas.iter().any(|&x| x == u || d.cluster(x).parent == Some(u)) {
            return fail(3, "basic cell not present in the children");
        }
    }

    // step 4
    for &u in &e.nbas {
        if !kid_cells.contains(&u) && !d.cluster(u).children.iter().all(|ch| kid_cells.contains(ch)) {
            return fail(4, "non-basic cell not refined by the children");
        }
    }

    // step 5: regions of each child with their restricted connections
    let mut child_regions = Vec::with_capacity(kids.len());
    for k in kids {
        let regions = disjointify(&k.cells(), d).map_err(|_| ConsistencyFailure { step: 5, reason: "not laminar" })?;
        let mut rs = Vec::with_capacity(regions.len());
        for reg in regions {
            let mut gp: BTreeSet<u8> = BTreeSet::new();
            for &part in k.g_of(reg.cell) {
                if let Some(yk) = block_part(part_block(k, part)) {
                    gp.insert(yk);
                }
            }
            rs.push((reg, gp));
        }
        child_regions.push(rs);
    }
    for (k, rs) in kids.iter().zip(&child_regions) {
        for &u in &k.bas {
            let um = &d.cluster(u).members;
            let live = rs
                .iter()
                .any(|(reg, gp)| !gp.is_empty() && reg.points.iter().all(|p| um.binary_search(p).is_ok()));
            if live {
                let par = d.cluster(u).parent;
                if !e.bas.contains(&u) && !par.is_some_and(|pp| e.bas.contains(&pp)) {
                    return fail(5, "live child cell dropped");
                }
            }
        }
    }

    // step 6
    let parent_regions = disjointify(&e.cells(), d).map_err(|_| ConsistencyFailure { step: 6, reason: "not laminar" })?;
    for (reg, _) in child_regions.iter().flatten() {
        if reg.points.is_empty() {
            continue;
        }
        for pr in &parent_regions {
            let inside = reg.points.iter().filter(|p| pr.points.binary_search(p).is_ok()).count();
            if inside != 0 && inside != reg.points.len() {
                return fail(6, "child region straddles a parent region");
            }
        }
    }
    for pr in &parent_regions {
        let mut gp: BTreeSet<u8> = BTreeSet::new();
        for (reg, rg) in child_regions.iter().flatten() {
            if reg.points.iter().all(|p| pr.points.binary_search(p).is_ok()) {
                gp.extend(rg.iter().copied());
            }
        }
        let want: BTreeSet<u8> = e.g_of(pr.cell).iter().copied().collect();
        if gp != want {
            return fail(6, "connection map does not match the children");
        }
    }

    let p_home = |yk: u8| e.p.iter().position(|q| q.contains(&yk));
    let one_promise = |parts: &BTreeSet<u8>| -> bool {
        let homes: BTreeSet<Option<usize>> = parts.iter().map(|&k| p_home(k)).collect();
        homes.len() == 1 && !homes.contains(&None)
    };

    // step 7
    for k in kids {
        for promise in &k.p {
            let blocks: BTreeSet<usize> = promise.iter().map(|&part| part_block(k, part)).collect();
            if blocks.len() <= 1 {
                continue;
            }
            let mut parts = BTreeSet::new();
            for &b in &blocks {
                match block_part(b) {
                    Some(yk) => {
                        parts.insert(yk);
                    }
                    None => return fail(7, "promise neither kept nor forwarded"),
                }
            }
            if !one_promise(&parts) {
                return fail(7, "forwarded promise split");
            }
        }
    }

    // step 8
    let region_of = |i: usize, a: PointId| -> Option<usize> {
        child_regions[i].iter().position(|(reg, _)| reg.points.binary_search(&a).is_ok())
    };
    let child_of = |a: PointId| -> usize {
        children.iter().position(|&ch| d.contains(ch, a)).expect("point inside the cluster")
    };
    for &(a, b) in &ctx.pairs {
        if !(d.contains(c, a) && d.contains(c, b)) {
            continue;
        }
        let (i, j) = (child_of(a), child_of(b));
        if i == j {
            continue;
        }
        let (ra, rb) = match (region_of(i, a), region_of(j, b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return fail(8, "terminal outside every region"),
        };
        let ga = kids[i].g_of(child_regions[i][ra].0.cell);
        let gb = kids[j].g_of(child_regions[j][rb].0.cell);
        let joined = ga
            .iter()
            .any(|&x| gb.iter().any(|&y| part_block(kids[i], x) == part_block(kids[j], y)));
        if joined {
            continue;
        }
        let (pa, pb) = (&child_regions[i][ra].1, &child_regions[j][rb].1);
        let both: BTreeSet<u8> = pa.union(pb).copied().collect();
        if pa.is_empty() || pb.is_empty() || !one_promise(&both) {
            return fail(8, "terminal pair neither joined nor forwarded");
        }
    }

    // step 9
    for &(a, b) in &ctx.pairs {
        for (x, y) in [(a, b), (b, a)] {
            if d.contains(c, x) && !d.contains(c, y) {
                let i = child_of(x);
                match region_of(i, x) {
                    Some(r) if !child_regions[i][r].1.is_empty() => {}
                    _ => return fail(9, "terminal with an outside partner is cut off"),
                }
            }
        }
    }
    Ok(())
}

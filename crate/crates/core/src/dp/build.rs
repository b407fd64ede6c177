use std::collections::HashMap;

use crate::decomposition::ClusterId;
use crate::forest::Edge;
use crate::metric::{Dist, PointId};
use crate::unionfind::UnionFind;

use super::entry::{canonical_partition, Entry};
use super::{BackPointer, ClusterStats, DpContext, Table};

/// Per-entry lookups used when the entry serves as a child.
#[derive(Clone, Debug)]
pub(crate) struct KidInfo {
    cells: Vec<ClusterId>,
    bas: Vec<bool>,
    g: Vec<Vec<u8>>,
    /// Indices of the cells at or below each cell.
    below: Vec<Vec<usize>>,
    /// Terminal and the index of the deepest cell containing it.
    term_cell: Vec<(PointId, usize)>,
}

impl KidInfo {
    fn new(e: &Entry, ctx: &DpContext) -> KidInfo {
        let d = ctx.d;
        let cells = e.cells();
        let bas = cells.iter().map(|x| e.bas.binary_search(x).is_ok()).collect();
        let g = e.g.iter().map(|x| x.1.clone()).collect();
        let below = cells
            .iter()
            .map(|&u| (0..cells.len()).filter(|&k| d.is_descendant(cells[k], u)).collect())
            .collect();
        let top = d.cluster(e.cluster).height;
        let mut term_cell = Vec::new();
        for &a in &ctx.terminals {
            if !d.contains(e.cluster, a) {
                continue;
            }
            for h in 0..=top {
                if let Ok(k) = cells.binary_search(&d.cluster_at(h, a)) {
                    term_cell.push((a, k));
                    break;
                }
            }
        }
        KidInfo { cells, bas, g, below, term_cell }
    }

    fn cell_of(&self, a: PointId) -> Option<usize> {
        self.term_cell.iter().find(|x| x.0 == a).map(|x| x.1)
    }
}

/// A parent candidate produced from one choice of children, portal graph and
/// active portals.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub entry: Entry,
    pub children: Vec<u32>,
    pub edges: Vec<Edge>,
    pub value: Dist,
}

struct Builder<'a, 'b> {
    ctx: &'a DpContext<'b>,
    c: ClusterId,
    is_root: bool,
    kids: &'a [&'a Table],
    bound: Dist,
    len_cap: Dist,
    cross: Vec<(usize, PointId, usize, PointId)>,
    isolated: Vec<(usize, PointId)>,
    suffix_min: Vec<Dist>,
    best: HashMap<Entry, (Dist, Dist, BackPointer)>,
    all: Option<Vec<Candidate>>,
    stats: ClusterStats,
    stop: bool,
}

/// One entry per child, with their active-portal parts as super-nodes.
struct Combo {
    choice: Vec<u32>,
    partial: Dist,
    sn_points: Vec<Vec<PointId>>,
    offset: Vec<usize>,
}

impl<'a, 'b> Builder<'a, 'b> {
    fn combos(&mut self, i: usize, partial: Dist, choice: &mut Vec<u32>) {
        if self.stop {
            return;
        }
        if i == self.kids.len() {
            self.process(choice.clone(), partial);
            return;
        }
        let t = self.kids[i];
        for k in 0..t.len() {
            let v = partial + t.values[k];
            if v.saturating_add(self.suffix_min[i + 1]) > self.bound {
                break;
            }
            choice.push(k as u32);
            self.combos(i + 1, v, choice);
            choice.pop();
            if self.stop {
                return;
            }
        }
    }

    fn process(&mut self, choice: Vec<u32>, partial: Dist) {
        let m = self.ctx.m;
        let mut sn_points = Vec::new();
        let mut offset = Vec::with_capacity(self.kids.len());
        for (t, &k) in self.kids.iter().zip(&choice) {
            offset.push(sn_points.len());
            sn_points.extend(t.entries[k as usize].y.iter().cloned());
        }
        let n = sn_points.len();
        if n > 64 {
            self.stats.edge_cap_rejections += 1;
            return;
        }
        let mut dmin = vec![vec![None; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let mut best: Option<(Dist, Edge)> = None;
                for &x in &sn_points[a] {
                    for &y in &sn_points[b] {
                        let l = m.d(x, y);
                        let e = Edge::new(x, y).unwrap();
                        if l <= self.len_cap && best.is_none_or(|(bl, be)| (l, e) < (bl, be)) {
                            best = Some((l, e));
                        }
                    }
                }
                dmin[a][b] = best;
                dmin[b][a] = best;
            }
        }
        if n > 0 && n - 1 > self.ctx.caps.edge_cap {
            self.stats.edge_cap_rejections += 1;
        }
        let mut cand_edges: Vec<(Dist, Edge, usize, usize)> = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if let Some((l, e)) = dmin[a][b] {
                    cand_edges.push((l, e, a, b));
                }
            }
        }
        cand_edges.sort_unstable();
        let combo = Combo { choice, partial, sn_points, offset };
        let must = if self.is_root {
            match self.root_groups(&combo) {
                Some(g) => g,
                None => return,
            }
        } else {
            Vec::new()
        };
        let mut comp: Vec<usize> = (0..n).collect();
        let mut picked = Vec::new();
        let mut forbidden = Vec::new();
        self.forests(&combo, &cand_edges, &must, 0, &mut comp, &mut picked, &mut forbidden, 0);
    }

    /// Super-node groups the root's portal graph must join, since nothing is
    /// forwarded past the root. `None` if some pair can never be joined.
    fn root_groups(&self, combo: &Combo) -> Option<Vec<u64>> {
        let sn_mask = |i: usize, parts: &[u8]| parts.iter().fold(0u64, |acc, &p| acc | 1 << (combo.offset[i] + p as usize));
        let mut groups = Vec::new();
        for (i, t) in self.kids.iter().enumerate() {
            for promise in &t.entries[combo.choice[i] as usize].p {
                groups.push(sn_mask(i, promise));
            }
        }
        for &(i, a, j, b) in &self.cross {
            let ia = &self.kids[i].info[combo.choice[i] as usize];
            let ib = &self.kids[j].info[combo.choice[j] as usize];
            let (ca, cb) = (ia.cell_of(a)?, ib.cell_of(b)?);
            let (ma, mb) = (sn_mask(i, &ia.g[ca]), sn_mask(j, &ib.g[cb]));
            if ma == 0 || mb == 0 {
                return None;
            }
            if ma.count_ones() == 1 && mb.count_ones() == 1 {
                groups.push(ma | mb);
            }
        }
        groups.retain(|g| g.count_ones() > 1);
        Some(groups)
    }

    /// Walks the candidate edges in increasing order, each either taken (when
    /// it joins two blocks) or forbidden. A forbidden edge keeps its two
    /// blocks apart for good, so every partition is met exactly once, with
    /// its minimum spanning forest, and the cost only grows along the way.
    #[allow(clippy::too_many_arguments)]
    fn forests(
        &mut self,
        combo: &Combo,
        cand: &[(Dist, Edge, usize, usize)],
        must: &[u64],
        k: usize,
        comp: &mut Vec<usize>,
        picked: &mut Vec<Edge>,
        forbidden: &mut Vec<(usize, usize)>,
        cost: Dist,
    ) {
        if self.stop {
            return;
        }
        if k == cand.len() {
            self.with_partition(combo, comp, picked, cost);
            return;
        }
        let (l, e, a, b) = cand[k];
        let (ca, cb) = (comp[a], comp[b]);
        if ca == cb {
            self.forests(combo, cand, must, k + 1, comp, picked, forbidden, cost);
            return;
        }
        let blocked = forbidden
            .iter()
            .any(|&(x, y)| (comp[x] == ca && comp[y] == cb) || (comp[x] == cb && comp[y] == ca));
        if !blocked && picked.len() < self.ctx.caps.edge_cap && combo.partial + cost + l <= self.bound {
            let saved = comp.clone();
            for c in comp.iter_mut() {
                if *c == cb {
                    *c = ca;
                }
            }
            picked.push(e);
            self.forests(combo, cand, must, k + 1, comp, picked, forbidden, cost + l);
            picked.pop();
            *comp = saved;
        }
        let in_comp = |c: usize| comp.iter().enumerate().fold(0u64, |acc, (x, &cx)| if cx == c { acc | 1 << x } else { acc });
        let (ma, mb) = (in_comp(ca), in_comp(cb));
        if must.iter().any(|g| g & ma != 0 && g & mb != 0) {
            return;
        }
        forbidden.push((a, b));
        self.forests(combo, cand, must, k + 1, comp, picked, forbidden, cost);
        forbidden.pop();
    }

    fn with_partition(&mut self, combo: &Combo, comp: &[usize], picked: &[Edge], cost: Dist) {
        // blocks numbered in order of their first super-node
        let mut label = vec![usize::MAX; comp.len()];
        let mut assign = vec![0usize; comp.len()];
        let mut nblocks = 0;
        for (s, &c) in comp.iter().enumerate() {
            if label[c] == usize::MAX {
                label[c] = nblocks;
                nblocks += 1;
            }
            assign[s] = label[c];
        }
        let assign = &assign[..];
        let mut edges = picked.to_vec();
        edges.sort_unstable();
        let value = combo.partial + cost;
        if value > self.bound {
            return;
        }

        let block_of = |i: usize, part: u8| assign[combo.offset[i] + part as usize];
        let mut required: u64 = 0;
        let mut groups: Vec<u64> = Vec::new();
        for (i, t) in self.kids.iter().enumerate() {
            let e = &t.entries[combo.choice[i] as usize];
            for promise in &e.p {
                let mask = promise.iter().fold(0u64, |acc, &part| acc | 1 << block_of(i, part));
                if mask.count_ones() > 1 {
                    required |= mask;
                    groups.push(mask);
                }
            }
        }
        let kid_mask = |i: usize, cell: usize| -> u64 {
            let info = &self.kids[i].info[combo.choice[i] as usize];
            info.g[cell].iter().fold(0u64, |acc, &part| acc | 1 << block_of(i, part))
        };
        for &(i, a, j, b) in &self.cross {
            let ia = &self.kids[i].info[combo.choice[i] as usize];
            let ib = &self.kids[j].info[combo.choice[j] as usize];
            let (Some(ca), Some(cb)) = (ia.cell_of(a), ib.cell_of(b)) else { return };
            let (ma, mb) = (kid_mask(i, ca), kid_mask(j, cb));
            if ma & mb != 0 {
                continue;
            }
            if ma == 0 || mb == 0 {
                return;
            }
            required |= ma | mb;
            groups.push(ma | mb);
        }
        for &(i, a) in &self.isolated {
            let ia = &self.kids[i].info[combo.choice[i] as usize];
            let Some(ca) = ia.cell_of(a) else { return };
            let ma = kid_mask(i, ca);
            if ma == 0 {
                return;
            }
            required |= ma;
        }

        if self.is_root {
            if required == 0 {
                self.emit(combo, assign, &edges, value, &[], &groups);
            }
            return;
        }
        if required.count_ones() as usize > self.ctx.caps.r_cap {
            self.stats.r_cap_rejections += 1;
            return;
        }
        let d = self.ctx.d;
        let mut cand: Vec<(PointId, usize)> = Vec::new();
        for (s, pts) in combo.sn_points.iter().enumerate() {
            for &x in pts {
                if d.is_portal(self.c, x) {
                    cand.push((x, assign[s]));
                }
            }
        }
        cand.sort_unstable();
        let mut chosen = Vec::new();
        self.subsets(combo, assign, &edges, value, &cand, 0, required, 0, &mut chosen, &groups);
    }

    #[allow(clippy::too_many_arguments)]
    fn subsets(
        &mut self,
        combo: &Combo,
        assign: &[usize],
        edges: &[Edge],
        value: Dist,
        cand: &[(PointId, usize)],
        k: usize,
        required: u64,
        covered: u64,
        chosen: &mut Vec<PointId>,
        groups: &[u64],
    ) {
        if self.stop {
            return;
        }
        let missing = (required & !covered).count_ones() as usize;
        if missing > self.ctx.caps.r_cap - chosen.len() {
            return;
        }
        if k == cand.len() {
            if missing == 0 {
                let r = chosen.clone();
                self.emit(combo, assign, edges, value, &r, groups);
            }
            return;
        }
        let (x, b) = cand[k];
        if chosen.len() < self.ctx.caps.r_cap {
            chosen.push(x);
            self.subsets(combo, assign, edges, value, cand, k + 1, required, covered | 1 << b, chosen, groups);
            chosen.pop();
        }
        self.subsets(combo, assign, edges, value, cand, k + 1, required, covered, chosen, groups);
    }

    fn emit(&mut self, combo: &Combo, assign: &[usize], edges: &[Edge], value: Dist, r: &[PointId], groups: &[u64]) {
        self.stats.tuples += 1;
        if self.stats.tuples >= self.ctx.caps.max_tuples {
            self.stats.tuple_cap_hit = true;
            self.stop = true;
        }
        let Some((entry, lb)) = self.make_entry(combo, assign, r, groups) else { return };
        if value.saturating_add(lb) > self.bound {
            return;
        }
        let bp = BackPointer { children: combo.choice.clone(), edges: edges.to_vec() };
        if let Some(all) = self.all.as_mut() {
            all.push(Candidate { entry: entry.clone(), children: bp.children.clone(), edges: bp.edges.clone(), value });
        }
        match self.best.get_mut(&entry) {
            Some(cur) if cur.0 <= value => {}
            Some(cur) => *cur = (value, lb, bp),
            None => {
                self.best.insert(entry, (value, lb, bp));
            }
        }
    }

    fn make_entry(
        &mut self,
        combo: &Combo,
        assign: &[usize],
        r: &[PointId],
        groups: &[u64],
    ) -> Option<(Entry, Dist)> {
        let d = self.ctx.d;
        let c = self.c;
        let nblocks = assign.iter().max().map_or(0, |x| x + 1);
        let block_of_point = |x: PointId| -> usize {
            let s = combo.sn_points.iter().position(|p| p.binary_search(&x).is_ok()).unwrap();
            assign[s]
        };
        // connectivity of the active portals
        let mut parts: Vec<(usize, Vec<PointId>)> = Vec::new();
        for &x in r {
            let b = block_of_point(x);
            match parts.iter_mut().find(|p| p.0 == b) {
                Some(p) => p.1.push(x),
                None => parts.push((b, vec![x])),
            }
        }
        parts.sort_by_key(|p| p.1[0]);
        let mut block_y: Vec<Option<u8>> = vec![None; nblocks];
        for (k, p) in parts.iter().enumerate() {
            block_y[p.0] = Some(k as u8);
        }
        let y: Vec<Vec<PointId>> = parts.into_iter().map(|p| p.1).collect();

        let mut cells: Vec<(ClusterId, bool, u16)> = Vec::new();
        // part mask of the region holding each terminal, as seen by the parent
        let mut term_mask: Vec<(PointId, u16)> = Vec::new();
        if !self.is_root {
            for (i, t) in self.kids.iter().enumerate() {
                let ci = t.cluster;
                let info = &t.info[combo.choice[i] as usize];
                let masks: Vec<u16> = info
                    .g
                    .iter()
                    .map(|parts| {
                        parts.iter().fold(0u16, |acc, &part| {
                            match block_y[assign[combo.offset[i] + part as usize]] {
                                Some(yk) => acc | 1 << yk,
                                None => acc,
                            }
                        })
                    })
                    .collect();
                let union = masks.iter().fold(0u16, |a, &b| a | b);
                let coarse = d.cluster(ci).height == 0
                    || (union.count_ones() <= 1
                        && info.cells.iter().zip(&info.bas).any(|(&x, &b)| b && d.cluster(x).parent == Some(ci))
                        && (0..info.cells.len()).all(|u| {
                            !info.bas[u]
                                || d.cluster(info.cells[u]).parent == Some(ci)
                                || info.below[u].iter().all(|&x| masks[x] == 0)
                        }));
                for &(a, k) in &info.term_cell {
                    term_mask.push((a, if coarse { union } else { masks[k] }));
                }
                if coarse {
                    cells.push((ci, true, union));
                } else {
                    cells.push((ci, false, 0));
                    for (k, &x) in info.cells.iter().enumerate() {
                        cells.push((x, info.bas[k], masks[k]));
                    }
                }
            }
        }
        if cells.len() > self.ctx.caps.rho_cap {
            self.stats.rho_rejections += 1;
            return None;
        }
        if cells.iter().any(|x| !self.ctx.can[c].contains(&d.cluster(x.0).center)) {
            self.stats.candidate_rejections += 1;
            return None;
        }
        cells.sort_unstable_by_key(|x| x.0);

        let ny = y.len();
        let mut uf = UnionFind::new(ny);
        let join = |mask: u64, uf: &mut UnionFind| {
            let ys: Vec<usize> = (0..nblocks)
                .filter(|&b| mask >> b & 1 == 1)
                .filter_map(|b| block_y[b].map(|k| k as usize))
                .collect();
            for w in ys.windows(2) {
                uf.union(w[0], w[1]);
            }
        };
        for &gm in groups {
            join(gm, &mut uf);
        }
        for &(_, _, gm) in &cells {
            let ys: Vec<usize> = (0..16).filter(|&k| gm >> k & 1 == 1).collect();
            for w in ys.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let mut p: Vec<Vec<u8>> = vec![Vec::new(); ny];
        for k in 0..ny {
            p[uf.find(k)].push(k as u8);
        }
        let p = canonical_partition(p);
        let to_parts = |gm: u16| (0..16u8).filter(|&k| gm >> k & 1 == 1).collect::<Vec<u8>>();
        let lb = self.remaining_lower_bound(&y, &term_mask);
        let entry = Entry {
            cluster: c,
            r: r.to_vec(),
            y,
            bas: cells.iter().filter(|x| x.1).map(|x| x.0).collect(),
            nbas: cells.iter().filter(|x| !x.1).map(|x| x.0).collect(),
            g: cells.iter().map(|x| (x.0, to_parts(x.2))).collect(),
            p,
        };
        Some((entry, lb))
    }

    /// Every unmet requirement still needs a path leaving the cluster from
    /// the active part of its terminal; the longest such detour is a lower
    /// bound on the cost not yet paid.
    fn remaining_lower_bound(&self, y: &[Vec<PointId>], term_mask: &[(PointId, u16)]) -> Dist {
        let m = self.ctx.m;
        let mask_of = |a: PointId| term_mask.iter().find(|x| x.0 == a).map_or(0, |x| x.1);
        let part = |mask: u16| -> Option<&Vec<PointId>> {
            (mask != 0).then(|| &y[mask.trailing_zeros() as usize])
        };
        let mut lb = 0;
        for &(a, b) in &self.ctx.pairs {
            let (ia, ib) = (self.ctx.d.contains(self.c, a), self.ctx.d.contains(self.c, b));
            let need = match (ia, ib) {
                (true, false) => part(mask_of(a)).map(|pa| pa.iter().map(|&x| m.d(x, b)).min().unwrap()),
                (false, true) => part(mask_of(b)).map(|pb| pb.iter().map(|&x| m.d(x, a)).min().unwrap()),
                (true, true) => {
                    let (ma, mb) = (mask_of(a), mask_of(b));
                    match (part(ma), part(mb)) {
                        (Some(pa), Some(pb)) if ma & mb == 0 => pa
                            .iter()
                            .flat_map(|&x| pb.iter().map(move |&z| m.d(x, z)))
                            .min(),
                        _ => None,
                    }
                }
                _ => None,
            };
            lb = lb.max(need.unwrap_or(0));
        }
        lb
    }
}

fn new_builder<'a, 'b>(
    ctx: &'a DpContext<'b>,
    c: ClusterId,
    kids: &'a [&'a Table],
    bound: Dist,
    keep_all: bool,
) -> Builder<'a, 'b> {
    let d = ctx.d;
    let cl = d.cluster(c);
    let child_of = |a: PointId| cl.children.iter().position(|&ch| d.contains(ch, a));
    let mut cross = Vec::new();
    let mut isolated = Vec::new();
    for &(a, b) in &ctx.pairs {
        match (child_of(a), child_of(b)) {
            (Some(i), Some(j)) if i != j => cross.push((i, a, j, b)),
            (Some(i), None) => isolated.push((i, a)),
            (None, Some(j)) => isolated.push((j, b)),
            _ => {}
        }
    }
    let mut suffix_min = vec![0; kids.len() + 1];
    for i in (0..kids.len()).rev() {
        suffix_min[i] = suffix_min[i + 1] + kids[i].values.first().copied().unwrap_or(0);
    }
    Builder {
        ctx,
        c,
        is_root: c == d.root,
        kids,
        bound,
        len_cap: 4 * ctx.m.pow(d.s, cl.height as i64),
        cross,
        isolated,
        suffix_min,
        best: HashMap::new(),
        all: keep_all.then(Vec::new),
        stats: ClusterStats { cluster: c, height: cl.height, ..ClusterStats::default() },
        stop: false,
    }
}

pub(super) fn build_table(ctx: &DpContext, c: ClusterId, kids: &[&Table], bound: Dist) -> (Table, ClusterStats) {
    let mut b = new_builder(ctx, c, kids, bound, false);
    b.run();
    finish(ctx, b)
}

/// Every parent candidate derivable from the given child tables, before
/// deduplication. Meant for cross-checking the builder on small inputs.
pub fn enumerate_candidates(ctx: &DpContext, c: ClusterId, kids: &[&Table]) -> Vec<Candidate> {
    let mut b = new_builder(ctx, c, kids, Dist::MAX, true);
    b.run();
    b.all.take().unwrap_or_default()
}

impl Builder<'_, '_> {
    fn run(&mut self) {
        let d = self.ctx.d;
        let cl = d.cluster(self.c);
        if cl.children.is_empty() {
            let x = cl.members[0];
            let entry = Entry::base(self.c, x);
            self.stats.tuples = 1;
            if let Some(all) = self.all.as_mut() {
                all.push(Candidate { entry: entry.clone(), children: Vec::new(), edges: Vec::new(), value: 0 });
            }
            self.best.insert(entry, (0, 0, BackPointer { children: Vec::new(), edges: Vec::new() }));
            return;
        }
        if self.kids.iter().any(|t| t.is_empty()) {
            return;
        }
        let mut choice = Vec::with_capacity(self.kids.len());
        self.combos(0, 0, &mut choice);
    }
}

fn finish(ctx: &DpContext, b: Builder) -> (Table, ClusterStats) {
    let mut stats = b.stats;
    let mut rows: Vec<(Dist, Dist, Entry, BackPointer)> =
        b.best.into_iter().map(|(e, (v, lb, bp))| (v, lb, e, bp)).collect();
    if rows.len() > ctx.caps.max_entries {
        // keep the entries with the best estimated total
        rows.sort_by(|x, y| (x.0 + x.1, x.0, &x.2).cmp(&(y.0 + y.1, y.0, &y.2)));
        rows.truncate(ctx.caps.max_entries);
        stats.beam_cap_hit = true;
    }
    rows.sort_by(|x, y| (x.0, &x.2).cmp(&(y.0, &y.2)));
    stats.entries = rows.len();
    let mut t = Table { cluster: b.c, entries: Vec::new(), values: Vec::new(), back: Vec::new(), info: Vec::new() };
    for (v, _, e, bp) in rows {
        t.info.push(KidInfo::new(&e, ctx));
        t.values.push(v);
        t.entries.push(e);
        t.back.push(bp);
    }
    (t, stats)
}

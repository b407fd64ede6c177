use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::instance::Instance;
use crate::metric::{Dist, MetricSpace, PointId};
use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleBudget {
    pub max_terminals: usize,
    pub max_candidate_steiner: usize,
    pub time_cap_ms: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget { max_terminals: 12, max_candidate_steiner: 24, time_cap_ms: 60_000 }
    }
}

/// Optimal Steiner tree as returned by the exact oracle. Only the oracle can
/// construct one, which is what the proximity check relies on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CertifiedSteinerTree {
    forest: Forest,
    terminals: Vec<PointId>,
    weight: Dist,
}

impl CertifiedSteinerTree {
    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn terminals(&self) -> &[PointId] {
        &self.terminals
    }

    pub fn weight(&self) -> Dist {
        self.weight
    }
}

/// Every point for small spaces; otherwise the points within the largest
/// pair distance of some terminal.
pub fn default_candidates(m: &MetricSpace, inst: &Instance) -> Vec<PointId> {
    if m.len() <= 16 {
        return m.points().collect();
    }
    let terms: Vec<PointId> = inst.terminals().into_iter().collect();
    let r = inst.pairs().iter().map(|p| m.d(p.a, p.b)).max().unwrap_or(0);
    m.points()
        .filter(|&p| m.dist_to_set(p, &terms).is_some_and(|d| d <= r))
        .collect()
}

/// Dreyfus-Wagner table over the complete metric graph on `nodes`, whose
/// first `t` entries are the terminals.
struct SteinerTable {
    nodes: Vec<PointId>,
    cost: Vec<Dist>,
    via: Vec<u32>,
    split: Vec<u32>,
}

impl SteinerTable {
    fn build(m: &MetricSpace, terms: &[PointId], extra: &[PointId], deadline: (Instant, u64)) -> Result<Self> {
        let t = terms.len();
        let mut nodes = terms.to_vec();
        nodes.extend(extra.iter().copied().filter(|p| !terms.contains(p)));
        let v = nodes.len();
        let full = 1usize << t;
        let mut cost = vec![Dist::MAX; full * v];
        let mut via = vec![0u32; full * v];
        let mut split = vec![0u32; full * v];
        let mut merged = vec![Dist::MAX; v];
        let mut merged_split = vec![0u32; v];
        for mask in 1..full {
            if mask & 0xff == 0 && deadline.0.elapsed().as_millis() as u64 > deadline.1 {
                return Err(Error::BudgetExceeded("time cap".into()));
            }
            if mask.is_power_of_two() {
                let k = mask.trailing_zeros() as usize;
                for x in 0..v {
                    cost[mask * v + x] = m.d(nodes[k], nodes[x]);
                    via[mask * v + x] = k as u32;
                }
                continue;
            }
            let low = mask & mask.wrapping_neg();
            for x in 0..v {
                merged[x] = Dist::MAX;
                let rest = mask ^ low;
                let mut sub = rest;
                loop {
                    let a = sub | low;
                    if a != mask {
                        let c = cost[a * v + x].saturating_add(cost[(mask ^ a) * v + x]);
                        if c < merged[x] {
                            merged[x] = c;
                            merged_split[x] = a as u32;
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & rest;
                }
            }
            for x in 0..v {
                let mut best = Dist::MAX;
                let mut arg = 0;
                for u in 0..v {
                    let c = merged[u].saturating_add(m.d(nodes[u], nodes[x]));
                    if c < best {
                        best = c;
                        arg = u;
                    }
                }
                cost[mask * v + x] = best;
                via[mask * v + x] = arg as u32;
                split[mask * v + x] = merged_split[arg];
            }
        }
        Ok(SteinerTable { nodes, cost, via, split })
    }

    fn tree_cost(&self, mask: usize) -> Dist {
        let k = mask.trailing_zeros() as usize;
        self.cost[mask * self.nodes.len() + k]
    }

    fn collect(&self, mask: usize, x: usize, out: &mut Forest) {
        let v = self.nodes.len();
        let u = self.via[mask * v + x] as usize;
        if mask.is_power_of_two() {
            out.insert(self.nodes[u], self.nodes[x]);
            return;
        }
        out.insert(self.nodes[u], self.nodes[x]);
        let a = self.split[mask * v + x] as usize;
        self.collect(a, u, out);
        self.collect(mask ^ a, u, out);
    }

    fn tree(&self, mask: usize) -> Forest {
        let mut f = Forest::new();
        self.collect(mask, mask.trailing_zeros() as usize, &mut f);
        f
    }
}

fn check_budget(t: usize, extra: usize, budget: &OracleBudget) -> Result<()> {
    if t > budget.max_terminals {
        return Err(Error::BudgetExceeded(format!("{t} terminals > {}", budget.max_terminals)));
    }
    if extra > budget.max_candidate_steiner {
        return Err(Error::BudgetExceeded(format!(
            "{extra} candidate Steiner points > {}",
            budget.max_candidate_steiner
        )));
    }
    Ok(())
}

/// Removes Steiner leaves and short-cuts Steiner points of degree two; the
/// weight never increases.
fn tidy(mut f: Forest, m: &MetricSpace, terminals: &[PointId]) -> Forest {
    loop {
        let adj = f.adjacency();
        let target = adj
            .iter()
            .find(|(v, n)| !terminals.contains(v) && n.len() <= 2)
            .map(|(&v, n)| (v, n.clone()));
        match target {
            None => return f,
            Some((v, n)) => {
                for &w in &n {
                    f.remove(&crate::forest::Edge::new(v, w).unwrap());
                }
                if n.len() == 2 && m.d(n[0], n[1]) <= m.d(v, n[0]) + m.d(v, n[1]) {
                    f.insert(n[0], n[1]);
                }
            }
        }
    }
}

/// Exact minimum Steiner tree on `terminals` using `candidates` as possible
/// Steiner points.
pub fn brute_force_steiner_tree(
    m: &MetricSpace,
    terminals: &[PointId],
    candidates: &[PointId],
    budget: &OracleBudget,
) -> Result<CertifiedSteinerTree> {
    let mut terms = terminals.to_vec();
    terms.sort_unstable();
    terms.dedup();
    let extra: Vec<PointId> = candidates.iter().copied().filter(|p| !terms.contains(p)).collect();
    check_budget(terms.len(), extra.len(), budget)?;
    if terms.len() <= 1 {
        return Ok(CertifiedSteinerTree { forest: Forest::new(), terminals: terms, weight: 0 });
    }
    let table = SteinerTable::build(m, &terms, &extra, (Instant::now(), budget.time_cap_ms))?;
    let full = (1usize << terms.len()) - 1;
    let forest = tidy(table.tree(full), m, &terms);
    let weight = forest.weight(m);
    debug_assert_eq!(weight, table.tree_cost(full));
    Ok(CertifiedSteinerTree { forest, terminals: terms, weight })
}

/// Exact minimum Steiner forest. Requirement classes (terminals linked by
/// pairs) are grouped in every possible way; each group is served by one
/// optimal Steiner tree.
pub fn brute_force_opt(
    m: &MetricSpace,
    inst: &Instance,
    candidates: Option<&[PointId]>,
    budget: &OracleBudget,
) -> Result<Forest> {
    let start = Instant::now();
    let pairs: Vec<(PointId, PointId)> = inst.nontrivial().map(|p| (p.a, p.b)).collect();
    let mut terms: Vec<PointId> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    terms.sort_unstable();
    terms.dedup();
    let default;
    let candidates = match candidates {
        Some(c) => c,
        None => {
            default = default_candidates(m, inst);
            &default
        }
    };
    let extra: Vec<PointId> = candidates.iter().copied().filter(|p| !terms.contains(p)).collect();
    check_budget(terms.len(), extra.len(), budget)?;
    if terms.is_empty() {
        return Ok(Forest::new());
    }
    let idx: BTreeMap<PointId, usize> = terms.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut uf = UnionFind::new(terms.len());
    for &(a, b) in &pairs {
        uf.union(idx[&a], idx[&b]);
    }
    let mut class_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut class_mask: Vec<usize> = Vec::new();
    for i in 0..terms.len() {
        let r = uf.find(i);
        let c = *class_of_root.entry(r).or_insert_with(|| {
            class_mask.push(0);
            class_mask.len() - 1
        });
        class_mask[c] |= 1 << i;
    }
    let table = SteinerTable::build(m, &terms, &extra, (start, budget.time_cap_ms))?;
    let c = class_mask.len();
    let terminal_mask = |cm: usize| -> usize {
        (0..c).filter(|&k| cm & (1 << k) != 0).fold(0, |acc, k| acc | class_mask[k])
    };
    let full = (1usize << c) - 1;
    let mut best = vec![Dist::MAX; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0;
    for cm in 1..=full {
        let low = cm & cm.wrapping_neg();
        let rest = cm ^ low;
        let mut sub = rest;
        loop {
            let group = sub | low;
            let v = table.tree_cost(terminal_mask(group)).saturating_add(best[cm ^ group]);
            if v < best[cm] {
                best[cm] = v;
                choice[cm] = group;
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    let mut f = Forest::new();
    let mut cm = full;
    while cm != 0 {
        let g = choice[cm];
        f.extend(&table.tree(terminal_mask(g)));
        cm ^= g;
    }
    let f = tidy(f, m, &terms);
    debug_assert_eq!(f.weight(m), best[full]);
    Ok(f)
}

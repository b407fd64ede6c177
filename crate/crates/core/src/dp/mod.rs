//! Dynamic program over a hierarchical decomposition. Each cluster keeps a
//! table of [`Entry`] values built bottom-up from its children's tables.

mod build;
mod entry;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cells::{candidate_centers, CellParams};
use crate::decomposition::{ClusterId, Decomposition};
use crate::error::{Error, Result};
use crate::forest::{Edge, Forest};
use crate::instance::Instance;
use crate::metric::{Dist, MetricSpace, NetHierarchy, PointId};

pub use build::enumerate_candidates;
pub use entry::{
    canonical_partition, consistency_check, internal_constraints_ok, ConsistencyFailure, Entry,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpCaps {
    /// Active portals per entry.
    pub r_cap: usize,
    /// Basic plus non-basic cells per entry.
    pub rho_cap: usize,
    /// Portal graph edges added at one cluster.
    pub edge_cap: usize,
    /// Table size per cluster; the cheapest entries are kept.
    pub max_entries: usize,
    /// Candidate tuples examined per cluster.
    pub max_tuples: u64,
}

impl Default for DpCaps {
    fn default() -> Self {
        DpCaps { r_cap: 4, rho_cap: 12, edge_cap: 6, max_entries: 300, max_tuples: 300_000 }
    }
}

/// Everything the table builder needs besides the tables themselves.
pub struct DpContext<'a> {
    pub m: &'a MetricSpace,
    pub d: &'a Decomposition,
    pub caps: DpCaps,
    /// Nontrivial pairs.
    pub pairs: Vec<(PointId, PointId)>,
    /// Candidate cell centers per cluster.
    pub can: Vec<BTreeSet<PointId>>,
    pub(crate) terminals: Vec<PointId>,
}

impl<'a> DpContext<'a> {
    pub fn new(
        m: &'a MetricSpace,
        h: &NetHierarchy,
        d: &'a Decomposition,
        inst: &Instance,
        cells: &CellParams,
        caps: DpCaps,
    ) -> Self {
        let pairs: Vec<(PointId, PointId)> = inst.nontrivial().map(|p| (p.a, p.b)).collect();
        let can = (0..d.clusters.len())
            .map(|c| candidate_centers(m, h, d, c, cells).into_iter().collect())
            .collect();
        let terminals = inst.terminals().into_iter().collect();
        DpContext { m, d, caps, pairs, can, terminals }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BackPointer {
    /// Index into each child's table.
    pub children: Vec<u32>,
    pub edges: Vec<Edge>,
}

/// Entries of one cluster, sorted by value.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub cluster: ClusterId,
    pub entries: Vec<Entry>,
    pub values: Vec<Dist>,
    pub back: Vec<BackPointer>,
    #[serde(skip)]
    pub(crate) info: Vec<build::KidInfo>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, e: &Entry) -> Option<usize> {
        self.entries.iter().position(|x| x == e)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ClusterStats {
    pub cluster: ClusterId,
    pub height: usize,
    pub entries: usize,
    pub tuples: u64,
    pub rho_rejections: u64,
    pub candidate_rejections: u64,
    pub r_cap_rejections: u64,
    pub edge_cap_rejections: u64,
    pub tuple_cap_hit: bool,
    pub beam_cap_hit: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DpStats {
    pub clusters: Vec<ClusterStats>,
    pub entries: usize,
    pub tuples: u64,
    pub per_height_ms: Vec<f64>,
    pub per_height_entries: Vec<usize>,
    pub upper_bound: Option<Dist>,
}

impl DpStats {
    /// Some cap cut the search space, so the value may exceed the optimum
    /// over the unrestricted family.
    pub fn cap_exceeded(&self) -> bool {
        self.clusters.iter().any(|c| {
            c.tuple_cap_hit
                || c.beam_cap_hit
                || c.rho_rejections > 0
                || c.candidate_rejections > 0
                || c.r_cap_rejections > 0
                || c.edge_cap_rejections > 0
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

pub struct DpRun {
    pub tables: Vec<Table>,
    /// Value of the final entry, `None` if it is unreachable.
    pub value: Option<Dist>,
    pub stats: DpStats,
}

impl DpRun {
    pub fn eval_value(&self, e: &Entry) -> Option<Dist> {
        let t = &self.tables[e.cluster];
        t.find(e).map(|k| t.values[k])
    }
}

/// Fills all tables bottom-up. Entries whose value exceeds `upper_bound` are
/// discarded; this is exact whenever the optimum is at most the bound.
pub fn run_dp(ctx: &DpContext, upper_bound: Option<Dist>) -> DpRun {
    let d = ctx.d;
    let bound = upper_bound.unwrap_or(Dist::MAX);
    let top = d.root_height();
    let mut stats = DpStats {
        per_height_ms: vec![0.0; top + 1],
        per_height_entries: vec![0; top + 1],
        upper_bound,
        ..DpStats::default()
    };
    let mut tables: Vec<Option<Table>> = (0..d.clusters.len()).map(|_| None).collect();
    // children always have larger ids than their parent
    for c in (0..d.clusters.len()).rev() {
        let started = Instant::now();
        let (table, cs) = {
            let kids: Vec<&Table> = d
                .cluster(c)
                .children
                .iter()
                .map(|&ch| tables[ch].as_ref().expect("child built first"))
                .collect();
            build::build_table(ctx, c, &kids, bound)
        };
        let h = d.cluster(c).height;
        stats.per_height_ms[h] += started.elapsed().as_secs_f64() * 1e3;
        stats.per_height_entries[h] += table.len();
        stats.entries += table.len();
        stats.tuples += cs.tuples;
        stats.clusters.push(cs);
        tables[c] = Some(table);
    }
    stats.clusters.sort_by_key(|c| c.cluster);
    let tables: Vec<Table> = tables.into_iter().map(|t| t.unwrap()).collect();
    let fin = Entry::final_entry(d.root);
    let value = tables[d.root].find(&fin).map(|k| tables[d.root].values[k]);
    DpRun { tables, value, stats }
}

/// Follows back-pointers from the final entry and collects the portal graph
/// edges of every cluster.
pub fn extract_solution(run: &DpRun, d: &Decomposition) -> Result<Forest> {
    let root = d.root;
    let fin = Entry::final_entry(root);
    let k = run.tables[root].find(&fin).ok_or(Error::Infeasible)?;
    let mut f = Forest::new();
    let mut stack = vec![(root, k)];
    while let Some((c, k)) = stack.pop() {
        let bp = run.tables[c].back.get(k).ok_or(Error::MissingBackPointer(c))?;
        for e in &bp.edges {
            f.insert(e.0, e.1);
        }
        for (&ch, &ki) in d.cluster(c).children.iter().zip(&bp.children) {
            stack.push((ch, ki as usize));
        }
    }
    Ok(f)
}

/// Whether `f` can be represented within `caps`: it respects portals, and at
/// every cluster it has at most `r_cap` exit points and at most `edge_cap`
/// edges whose endpoints first meet there.
pub fn witness_fits(f: &Forest, d: &Decomposition, caps: &DpCaps) -> bool {
    if d.first_portal_violation(f).is_some() {
        return false;
    }
    let mut exits: Vec<BTreeSet<PointId>> = vec![BTreeSet::new(); d.clusters.len()];
    let mut edges = vec![0usize; d.clusters.len()];
    for e in f.edges() {
        for h in 0..=d.root_height() {
            let (ca, cb) = (d.cluster_at(h, e.0), d.cluster_at(h, e.1));
            if ca == cb {
                edges[ca] += 1;
                break;
            }
            exits[ca].insert(e.0);
            exits[cb].insert(e.1);
        }
    }
    exits.iter().all(|x| x.len() <= caps.r_cap) && edges.iter().all(|&n| n <= caps.edge_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::brute_force_opt;
    use crate::baseline::OracleBudget;
    use crate::decomposition::DecompositionParams;
    use crate::instance::is_feasible;
    use crate::metric::DEFAULT_SCALE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        m: MetricSpace,
        h: NetHierarchy,
        d: Decomposition,
        cells: CellParams,
    }

    fn setup(pts: &[[f64; 2]], seed: u64) -> Setup {
        let pts: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
        let m = MetricSpace::from_points(&pts, DEFAULT_SCALE).unwrap();
        let top = NetHierarchy::auto_num_heights(&m, 4);
        let h = NetHierarchy::build(&m, 4, top).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Decomposition::build(&m, &h, &DecompositionParams::default(), &mut rng).unwrap();
        let cells = CellParams::from_eps(0.5, 2.0, 4, top).unwrap();
        Setup { m, h, d, cells }
    }

    const PTS: [[f64; 2]; 7] = [[0.0, 0.0], [6.0, 1.0], [3.0, 5.0], [9.0, 7.0], [1.0, 8.0], [5.0, 3.0], [8.0, 0.0]];

    #[test]
    fn extraction_matches_value() {
        let inst = Instance::new([(0, 3), (4, 6)]);
        for seed in 0..4 {
            let s = setup(&PTS, seed);
            let ctx = DpContext::new(&s.m, &s.h, &s.d, &inst, &s.cells, DpCaps::default());
            let run = run_dp(&ctx, None);
            let val = run.value.expect("final entry reachable");
            let f = extract_solution(&run, &s.d).unwrap();
            assert!(is_feasible(&f, &inst));
            assert!(f.is_acyclic());
            assert_eq!(f.weight(&s.m), val);
            let opt = brute_force_opt(&s.m, &inst, None, &OracleBudget::default()).unwrap();
            assert!(val >= opt.weight(&s.m));
        }
    }

    #[test]
    fn deterministic() {
        let inst = Instance::new([(0, 3), (2, 6)]);
        let s = setup(&PTS, 3);
        let ctx = DpContext::new(&s.m, &s.h, &s.d, &inst, &s.cells, DpCaps::default());
        let a = run_dp(&ctx, None);
        let b = run_dp(&ctx, None);
        assert_eq!(a.value, b.value);
        assert_eq!(extract_solution(&a, &s.d).unwrap(), extract_solution(&b, &s.d).unwrap());
        for (x, y) in a.tables.iter().zip(&b.tables) {
            assert_eq!(x.entries, y.entries);
            assert_eq!(x.values, y.values);
        }
    }

    #[test]
    fn bound_is_exact_when_loose() {
        let inst = Instance::new([(0, 3), (4, 6)]);
        let s = setup(&PTS, 1);
        let ctx = DpContext::new(&s.m, &s.h, &s.d, &inst, &s.cells, DpCaps::default());
        let free = run_dp(&ctx, None).value.unwrap();
        assert_eq!(run_dp(&ctx, Some(free)).value, Some(free));
        assert_eq!(run_dp(&ctx, Some(free - 1)).value, None);
    }

    #[test]
    fn candidates_pass_reference_checker() {
        let inst = Instance::new([(0, 3), (1, 4)]);
        let s = setup(&PTS[..6], 2);
        let ctx = DpContext::new(&s.m, &s.h, &s.d, &inst, &s.cells, DpCaps::default());
        let run = run_dp(&ctx, None);
        let mut checked = 0;
        for c in 0..s.d.clusters.len() {
            let kids: Vec<&Table> = s.d.cluster(c).children.iter().map(|&k| &run.tables[k]).collect();
            for cand in enumerate_candidates(&ctx, c, &kids) {
                internal_constraints_ok(&cand.entry, &ctx).unwrap();
                let ks: Vec<&Entry> = kids
                    .iter()
                    .zip(&cand.children)
                    .map(|(t, &k)| &t.entries[k as usize])
                    .collect();
                if let Err(e) = consistency_check(&cand.entry, &ks, &cand.edges, &ctx) {
                    panic!("cluster {c}: {e:?} for {:?}", cand.entry);
                }
                checked += 1;
                if checked > 20000 {
                    return;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn checker_rejects_broken_parent() {
        let inst = Instance::new([(0, 3)]);
        let s = setup(&PTS[..4], 0);
        let ctx = DpContext::new(&s.m, &s.h, &s.d, &inst, &s.cells, DpCaps::default());
        let run = run_dp(&ctx, None);
        let root = s.d.root;
        let kids: Vec<&Table> = s.d.cluster(root).children.iter().map(|&k| &run.tables[k]).collect();
        let cands = enumerate_candidates(&ctx, root, &kids);
        let cand = cands.iter().min_by_key(|c| c.value).unwrap();
        let ks: Vec<&Entry> = kids.iter().zip(&cand.children).map(|(t, &k)| &t.entries[k as usize]).collect();
        assert!(consistency_check(&cand.entry, &ks, &cand.edges, &ctx).is_ok());
        // an entry claiming an active portal that no child offers
        let mut bad = cand.entry.clone();
        bad.r = vec![usize::MAX];
        bad.y = vec![vec![usize::MAX]];
        bad.p = vec![vec![0]];
        assert!(consistency_check(&bad, &ks, &cand.edges, &ctx).is_err());
    }
}

//! Empirical invariant suites run by the `validate` command and the
//! acceptance tests.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baseline::{brute_force_steiner_tree, gw_primal_dual, OracleBudget};
use crate::cells::{audit_structure, CellParams, StructureAudit};
use crate::decomposition::{make_portal_respecting, sample_single_scale, Decomposition, DecompositionParams};
use crate::error::Result;
use crate::forest::{find_longest_steiner_chain, make_net_respecting, steiner_proximity_check};
use crate::instance::Instance;
use crate::metric::{verify_packing_cover, Dist, MetricSpace, NetHierarchy, PointId};

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub checks: usize,
    pub failures: usize,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(name: &str) -> Self {
        SuiteReport { name: name.into(), ..Default::default() }
    }

    fn check(&mut self, ok: bool, note: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            self.notes.push(note());
        }
    }

    pub fn ok(&self) -> bool {
        self.failures == 0
    }
}

/// Packing, covering, nesting and the size bound at every level `>= 1`.
pub fn nets_suite(m: &MetricSpace, h: &NetHierarchy, dim_bound: Option<f64>) -> SuiteReport {
    let mut r = SuiteReport::new("nets");
    let all: Vec<PointId> = m.points().collect();
    for i in 1..=h.top() {
        let net = h.net(i as i64).expect("level exists");
        let rho = m.pow(h.s(), i as i64);
        r.check(verify_packing_cover(m, net, &all, rho, dim_bound), || format!("level {i} is not a net"));
        let lower = h.net(i as i64 - 1).expect("level exists");
        r.check(net.iter().all(|p| lower.binary_search(p).is_ok()), || format!("level {i} is not nested"));
    }
    r
}

#[derive(Clone, Debug, Serialize)]
pub struct CutEstimate {
    pub set: Vec<PointId>,
    pub height: usize,
    pub diam: Dist,
    pub frequency: f64,
    pub bound: f64,
    pub sigma: f64,
}

impl CutEstimate {
    pub fn ok(&self) -> bool {
        self.frequency <= self.bound + 3.0 * self.sigma
    }
}

/// Frequency with which `set` is split by `samples` single-scale partitions
/// at height `i`, against `c_cut k Diam / s^i`.
pub fn cut_frequency(
    m: &MetricSpace,
    h: &NetHierarchy,
    set: &[PointId],
    i: usize,
    k: f64,
    c_cut: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> CutEstimate {
    let chi = 2f64.powf(k).max(2.0);
    let mut cut = 0usize;
    for _ in 0..samples {
        let centers = sample_single_scale(m, h, i, chi, rng);
        if set.iter().any(|&p| centers[p] != centers[set[0]]) {
            cut += 1;
        }
    }
    let diam = m.diameter(set);
    let bound = c_cut * k * diam as f64 / m.pow(h.s(), i as i64) as f64;
    let b = bound.min(1.0);
    CutEstimate {
        set: set.to_vec(),
        height: i,
        diam,
        frequency: cut as f64 / samples as f64,
        bound,
        sigma: (b * (1.0 - b) / samples as f64).sqrt(),
    }
}

/// Test sets for height `i`: the closest pair, the widest pair with
/// `Diam <= s^i / 4`, and the closest triple around the first point of the
/// closest pair.
pub fn cut_test_sets(m: &MetricSpace, h: &NetHierarchy, i: usize) -> Vec<Vec<PointId>> {
    let limit = m.pow(h.s(), i as i64) / 4;
    let mut pairs: Vec<(Dist, PointId, PointId)> = Vec::new();
    for a in m.points() {
        for b in a + 1..m.len() {
            if m.d(a, b) <= limit {
                pairs.push((m.d(a, b), a, b));
            }
        }
    }
    pairs.sort_unstable();
    let mut out: Vec<Vec<PointId>> = Vec::new();
    if let Some(&(_, a, b)) = pairs.first() {
        out.push(vec![a, b]);
        let mut near: Vec<(Dist, PointId)> =
            m.points().filter(|&p| p != a && p != b).map(|p| (m.d(a, p).max(m.d(b, p)), p)).collect();
        near.sort_unstable();
        if let Some(&(_, c)) = near.first() {
            if m.diameter(&[a, b, c]) <= limit {
                out.push(vec![a, b, c]);
            }
        }
    }
    if pairs.len() > 1 {
        let &(_, a, b) = pairs.last().unwrap();
        out.push(vec![a, b]);
    }
    out
}

pub fn cut_suite(m: &MetricSpace, h: &NetHierarchy, k: f64, c_cut: f64, samples: usize, seed: u64) -> (SuiteReport, Vec<CutEstimate>) {
    let mut r = SuiteReport::new("cut-probability");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for i in 1..h.top() {
        for set in cut_test_sets(m, h, i) {
            let e = cut_frequency(m, h, &set, i, k, c_cut, samples, &mut rng);
            r.check(e.ok(), || format!("height {i} set {:?}: {} > {} + 3 x {}", e.set, e.frequency, e.bound, e.sigma));
            all.push(e);
        }
    }
    (r, all)
}

/// Proximity of Steiner points in the exact Steiner tree on `terminals`.
/// `D` is the terminal diameter (or the longest edge, if larger) and `gamma`
/// is the longest edge over `D`.
pub fn near_terminal_check(m: &MetricSpace, terminals: &[PointId], k: f64) -> Result<bool> {
    let all: Vec<PointId> = m.points().collect();
    let tree = brute_force_steiner_tree(m, terminals, &all, &OracleBudget::default())?;
    let longest = tree.forest().edges().map(|e| e.len(m)).max().unwrap_or(0);
    let diam = m.diameter(terminals).max(longest);
    if diam == 0 {
        return Ok(true);
    }
    let gamma = (longest as f64 / diam as f64 * (1.0 + 1e-12)).min(1.0);
    steiner_proximity_check(&tree, m, gamma, k, diam)
}

pub fn near_terminal_suite(m: &MetricSpace, inst: &Instance, k: f64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("near-terminal");
    let terms: Vec<PointId> = inst.terminals().into_iter().collect();
    let ok = near_terminal_check(m, &terms, k)?;
    r.check(ok, || format!("Steiner point too far from terminals {terms:?}"));
    Ok(r)
}

/// Records the longest Steiner chain of the exact tree on the terminals and
/// of its net-respecting version, relative to the terminal diameter. Nothing
/// is asserted.
pub fn long_chain_suite(m: &MetricSpace, h: &NetHierarchy, inst: &Instance, eps: f64) -> Result<SuiteReport> {
    let mut r = SuiteReport::new("long-chain");
    let terms: Vec<PointId> = inst.terminals().into_iter().collect();
    if terms.len() < 2 {
        return Ok(r);
    }
    let all: Vec<PointId> = m.points().collect();
    let tree = brute_force_steiner_tree(m, &terms, &all, &OracleBudget::default())?;
    let set: BTreeSet<PointId> = terms.iter().copied().collect();
    let diam = m.diameter(&terms).max(1) as f64;
    let plain = find_longest_steiner_chain(tree.forest(), m, &set)?;
    let net = make_net_respecting(tree.forest(), m, h, eps);
    let routed = find_longest_steiner_chain(&net, m, &set).ok().flatten();
    r.checks += 1;
    r.notes.push(format!(
        "exact tree chain {:.4} D, net-respecting chain {:.4} D",
        plain.map_or(0.0, |c| c.weight as f64 / diam),
        routed.map_or(0.0, |c| c.weight as f64 / diam)
    ));
    Ok(r)
}

/// Structural audit of a portal-respecting GW forest on one decomposition.
#[allow(clippy::too_many_arguments)]
pub fn structure_suite(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    params: &DecompositionParams,
    cells: &CellParams,
    rho_cap: usize,
    seed: u64,
) -> Result<(SuiteReport, StructureAudit)> {
    let mut r = SuiteReport::new("refinement and cell property");
    let d = Decomposition::build(m, h, params, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let f = make_portal_respecting(&gw_primal_dual(m, inst), m, &d);
    let a = audit_structure(&f, m, h, &d, cells, rho_cap);
    r.check(a.refinement_failures.is_empty(), || format!("refinement fails at {:?}", a.refinement_failures));
    r.check(a.outside_candidates.is_empty(), || format!("centers outside candidates at {:?}", a.outside_candidates));
    r.check(a.violations_after == 0, || format!("{} violations after enforcement", a.violations_after));
    r.check(a.ok(), || "enforcement added too many edges".into());
    if !a.over_cap.is_empty() {
        r.notes.push(format!("{} clusters over the cell cap (flagged)", a.over_cap.len()));
    }
    Ok((r, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_SCALE;

    fn grid() -> MetricSpace {
        let p: Vec<Vec<f64>> = (0..16).map(|k| vec![(k % 4) as f64, (k / 4) as f64]).collect();
        MetricSpace::from_points(&p, DEFAULT_SCALE).unwrap()
    }

    #[test]
    fn suites_pass_on_grid() {
        let m = grid();
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        assert!(nets_suite(&m, &h, Some(2.0 * 5f64.log2())).ok());
        let inst = Instance::new([(0, 15), (3, 12)]);
        assert!(near_terminal_suite(&m, &inst, 2.0).unwrap().ok());
        let cells = CellParams::from_eps(0.5, 2.0, 4, h.top()).unwrap();
        let (r, _) = structure_suite(&m, &h, &inst, &DecompositionParams::default(), &cells, 12, 3).unwrap();
        assert!(r.ok(), "{:?}", r.notes);
        assert_eq!(long_chain_suite(&m, &h, &inst, 0.5).unwrap().notes.len(), 1);
    }

    #[test]
    fn identical_points_never_cut() {
        let m = grid();
        let h = NetHierarchy::build(&m, 4, 3).unwrap();
        let e = cut_frequency(&m, &h, &[5], 1, 2.0, 2.0, 50, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(e.frequency, 0.0);
    }
}

//! The generic algorithm: sparsity scan, critical splits, and the best of
//! several randomized DP runs on sparse instances.

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{brute_force_opt, gw_primal_dual, OracleBudget};
use crate::cells::{audit_structure, CellParams, StructureAudit};
use crate::decomposition::{make_portal_respecting, Decomposition, DecompositionParams, PortalMode};
use crate::dp::{extract_solution, run_dp, DpCaps, DpContext, DpStats};
use crate::error::{Error, Result};
use crate::forest::{make_net_respecting, Forest};
use crate::instance::{auxiliary_subinstance, is_feasible, rescale_instance, split_critical, Instance};
use crate::metric::{Dist, MetricSpace, NetHierarchy, PointId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Practical,
    Theory,
}

/// Sparsity threshold, in multiples of `s^i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `factor` times the median positive `H / s^i` of a warm-up scan.
    Calibrated { factor: f64 },
    Fixed(f64),
    /// Never critical.
    Disabled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub eps: f64,
    pub k: f64,
    pub s: u32,
    /// Number of heights; derived from the diameter when absent.
    pub num_heights: Option<usize>,
    pub q0: Threshold,
    pub n_trials: usize,
    pub caps: DpCaps,
    /// Instances with at most this many nontrivial pairs go to the oracle.
    pub base_case_size: usize,
    pub mode: Mode,
    pub portal_drop: u32,
    pub c_cut: f64,
    /// Separation width; `eps / (8 k)` when absent.
    pub delta: Option<f64>,
    /// The DP sees at most this many points: the terminals and the
    /// non-terminals closest to them.
    pub dp_points: usize,
    pub max_recursion_nodes: usize,
    /// Run the structural audit on every DP output.
    pub audit: bool,
    pub seed: u64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            eps: 0.5,
            k: 2.0,
            s: 4,
            num_heights: None,
            q0: Threshold::Calibrated { factor: 4.0 },
            n_trials: 8,
            caps: DpCaps::default(),
            base_case_size: 1,
            mode: Mode::Practical,
            portal_drop: 2,
            c_cut: 2.0,
            delta: None,
            dp_points: 12,
            max_recursion_nodes: 32,
            audit: false,
            seed: 0,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParams("eps must lie in (0, 1)".into()));
        }
        if self.s < 2 || (self.mode == Mode::Theory && self.s < 4) {
            return Err(Error::InvalidParams("s is too small".into()));
        }
        if self.k <= 0.0 || self.n_trials == 0 {
            return Err(Error::InvalidParams("k and n_trials must be positive".into()));
        }
        match self.q0 {
            Threshold::Fixed(q) if !(q > 0.0) => Err(Error::InvalidParams("q0 must be positive".into())),
            Threshold::Calibrated { factor } if !(factor > 0.0) => {
                Err(Error::InvalidParams("q0 factor must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.eps / (8.0 * self.k))
    }

    fn decomposition_params(&self) -> DecompositionParams {
        DecompositionParams {
            s: self.s,
            k: self.k,
            mode: match self.mode {
                Mode::Practical => PortalMode::Practical,
                Mode::Theory => PortalMode::Theory,
            },
            portal_drop: self.portal_drop,
            eps: self.eps,
            c_cut: self.c_cut,
        }
    }

    fn heights(&self, m: &MetricSpace) -> usize {
        self.num_heights.unwrap_or_else(|| NetHierarchy::auto_num_heights(m, self.s))
    }
}

/// Weight of a net-respecting GW solution of the auxiliary sub-instance
/// around `u` at scale `t s^i`.
#[allow(clippy::too_many_arguments)]
pub fn heuristic_t(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    i: i64,
    u: PointId,
    t: f64,
    delta: f64,
    eps: f64,
) -> Result<Dist> {
    let sub = auxiliary_subinstance(m, h, inst, i, u, t, delta)?;
    if sub.nontrivial().next().is_none() {
        return Ok(0);
    }
    let f = gw_primal_dual(m, &sub);
    Ok(make_net_respecting(&f, m, h, eps).weight(m))
}

/// All `(i, u, H / s^i)` for heights below the top.
fn scan_values(m: &MetricSpace, h: &NetHierarchy, inst: &Instance, delta: f64, eps: f64) -> Result<Vec<(usize, PointId, f64)>> {
    let mut out = Vec::new();
    for i in 0..h.top() {
        let si = m.pow(h.s(), i as i64) as f64;
        for &u in h.net(i as i64)? {
            let v = heuristic_t(m, h, inst, i as i64, u, 4.0, delta, eps)?;
            out.push((i, u, v as f64 / si));
        }
    }
    Ok(out)
}

/// The threshold in multiples of `s^i`; infinite when disabled or when the
/// warm-up scan sees nothing.
pub fn resolve_q0(m: &MetricSpace, h: &NetHierarchy, inst: &Instance, cfg: &DriverConfig) -> Result<f64> {
    match cfg.q0 {
        Threshold::Disabled => Ok(f64::INFINITY),
        Threshold::Fixed(q) => Ok(q),
        Threshold::Calibrated { factor } => {
            if cfg.mode == Mode::Theory {
                return Ok((cfg.s as f64 * cfg.k / cfg.eps).powf(cfg.k));
            }
            let mut v: Vec<f64> = scan_values(m, h, inst, cfg.delta(), cfg.eps)?
                .into_iter()
                .map(|x| x.2)
                .filter(|&x| x > 0.0)
                .collect();
            if v.is_empty() {
                return Ok(f64::INFINITY);
            }
            v.sort_by(f64::total_cmp);
            Ok(factor * v[v.len() / 2])
        }
    }
}

/// Smallest height with some `H^(i)_u > q0 s^i`, with the maximizing net
/// point (smallest id on ties).
pub fn sparsity_scan(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    q0: f64,
    delta: f64,
    eps: f64,
) -> Result<Option<(usize, PointId)>> {
    if q0.is_infinite() || inst.nontrivial().next().is_none() {
        return Ok(None);
    }
    for i in 0..h.top() {
        let si = m.pow(h.s(), i as i64) as f64;
        let mut best: Option<(Dist, PointId)> = None;
        for &u in h.net(i as i64)? {
            let v = heuristic_t(m, h, inst, i as i64, u, 4.0, delta, eps)?;
            if best.is_none_or(|(bv, _)| v > bv) {
                best = Some((v, u));
            }
        }
        if let Some((v, u)) = best {
            if v as f64 > q0 * si {
                return Ok(Some((i, u)));
            }
        }
    }
    Ok(None)
}

/// Smallest `lambda < k` with `T(lambda + 1) <= 30 k T(lambda)`, where
/// `T(lambda)` is the heuristic at scale `4 + 2 lambda`; otherwise the
/// `lambda` with the smallest ratio.
#[allow(clippy::too_many_arguments)]
pub fn choose_lambda(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    i: usize,
    u: PointId,
    k: f64,
    delta: f64,
    eps: f64,
) -> Result<u32> {
    let kk = (k.ceil() as u32).max(1);
    let t: Vec<Dist> = (0..=kk)
        .map(|l| heuristic_t(m, h, inst, i as i64, u, 4.0 + 2.0 * l as f64, delta, eps))
        .collect::<Result<_>>()?;
    let mut best = (f64::INFINITY, 0);
    for l in 0..kk as usize {
        if t[l + 1] as f64 <= 30.0 * k * t[l] as f64 {
            return Ok(l as u32);
        }
        let ratio = if t[l] == 0 { f64::INFINITY } else { t[l + 1] as f64 / t[l] as f64 };
        if ratio < best.0 {
            best = (ratio, l as u32);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub value: Option<Dist>,
    pub cap_exceeded: bool,
    pub entries: usize,
    pub tuples: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AlgOutput {
    #[serde(skip)]
    pub forest: Forest,
    pub cost: Dist,
    pub feasible: bool,
    pub recursion_nodes: usize,
    pub critical_splits: usize,
    pub dp_calls: usize,
    /// DP calls that produced nothing and were answered by GW instead.
    pub dp_fallbacks: usize,
    pub cap_exceeded: bool,
    pub q0: f64,
    pub trials: Vec<TrialRecord>,
    #[serde(skip)]
    pub dp_stats: Vec<DpStats>,
    #[serde(skip)]
    pub audits: Vec<StructureAudit>,
}

struct Run<'a> {
    m: &'a MetricSpace,
    h: NetHierarchy,
    cfg: &'a DriverConfig,
    rng: ChaCha8Rng,
    q0: f64,
    out: AlgOutput,
}

/// Terminals plus the closest non-terminals, up to `limit` points in all.
fn relevant_points(m: &MetricSpace, inst: &Instance, limit: usize) -> Vec<PointId> {
    let terms: Vec<PointId> = inst.terminals().into_iter().collect();
    if m.len() <= limit.max(terms.len()) {
        return m.points().collect();
    }
    let mut rest: Vec<(Dist, PointId)> = m
        .points()
        .filter(|p| terms.binary_search(p).is_err())
        .map(|p| (m.dist_to_set(p, &terms).unwrap_or(0), p))
        .collect();
    rest.sort_unstable();
    let mut keep = terms;
    keep.extend(rest.into_iter().take(limit.saturating_sub(keep.len())).map(|x| x.1));
    keep.sort_unstable();
    keep
}

impl Run<'_> {
    fn node(&mut self, inst: &Instance) -> Result<Forest> {
        self.out.recursion_nodes += 1;
        let nontrivial = inst.nontrivial().count();
        if nontrivial == 0 {
            return Ok(Forest::new());
        }
        if nontrivial <= self.cfg.base_case_size {
            if let Ok(f) = brute_force_opt(self.m, inst, None, &OracleBudget::default()) {
                return Ok(f);
            }
        }
        if self.out.recursion_nodes >= self.cfg.max_recursion_nodes {
            return self.sparse(inst);
        }
        let crit = sparsity_scan(self.m, &self.h, inst, self.q0, self.cfg.delta(), self.cfg.eps)?;
        let Some((i, u)) = crit else { return self.sparse(inst) };
        let lambda = choose_lambda(self.m, &self.h, inst, i, u, self.cfg.k, self.cfg.delta(), self.cfg.eps)?;
        let hh: f64 = self.rng.gen_range(0.0..=0.5);
        let (i1, i2) = split_critical(self.m, &self.h, inst, i as i64, u, lambda, hh, self.cfg.delta())?;
        debug!("critical at height {i} around {u}: lambda {lambda}, {} local pairs", i1.len());
        if i1.nontrivial().next().is_none() || i2 == *inst {
            return self.sparse(inst);
        }
        self.out.critical_splits += 1;
        let mut f = self.sparse(&i1)?;
        f.extend(&self.node(&i2)?);
        if !is_feasible(&f, inst) {
            warn!("union of split solutions is infeasible; solving the node directly");
            return self.sparse(inst);
        }
        Ok(f)
    }

    /// Best of `n_trials` DP runs on fresh decompositions.
    fn sparse(&mut self, inst: &Instance) -> Result<Forest> {
        self.out.dp_calls += 1;
        let cfg = self.cfg;
        let keep = relevant_points(self.m, inst, cfg.dp_points);
        let sub = self.m.restrict(&keep);
        let local = inst.map_points(|p| keep.binary_search(&p).expect("terminal kept"));
        let heights = cfg.heights(&sub);
        let h = NetHierarchy::build(&sub, cfg.s, heights)?;
        let cells = CellParams::from_eps(cfg.eps, cfg.k, cfg.s, heights)?;
        let gw = gw_primal_dual(&sub, &local);
        let params = cfg.decomposition_params();
        let mut best: Option<(Dist, Forest)> = None;
        for t in 0..cfg.n_trials {
            let mut trng = ChaCha8Rng::seed_from_u64(self.rng.gen());
            let d = match Decomposition::build(&sub, &h, &params, &mut trng) {
                Ok(d) => d,
                Err(e) => {
                    warn!("trial {t}: decomposition failed: {e}");
                    continue;
                }
            };
            let ctx = DpContext::new(&sub, &h, &d, &local, &cells, cfg.caps);
            let witness = make_portal_respecting(&gw, &sub, &d).weight(&sub);
            let bound = best.as_ref().map_or(witness, |b| b.0.min(witness));
            let mut run = run_dp(&ctx, Some(bound));
            if run.value.is_none() && best.is_none() {
                run = run_dp(&ctx, None);
            }
            let capped = run.stats.cap_exceeded();
            self.out.cap_exceeded |= capped;
            self.out.trials.push(TrialRecord {
                trial: t,
                value: run.value,
                cap_exceeded: capped,
                entries: run.stats.entries,
                tuples: run.stats.tuples,
            });
            if let Some(v) = run.value {
                let f = extract_solution(&run, &d)?;
                assert_eq!(f.weight(&sub), v, "extracted weight equals the table value");
                assert!(is_feasible(&f, &local), "extracted forest is feasible");
                if cfg.audit {
                    self.out.audits.push(audit_structure(&f, &sub, &h, &d, &cells, cfg.caps.rho_cap));
                }
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, f));
                }
            }
            self.out.dp_stats.push(run.stats);
        }
        let f = match best {
            Some((_, f)) => f,
            None => {
                self.out.dp_fallbacks += 1;
                self.out.cap_exceeded = true;
                warn!("no trial produced a solution; using GW");
                gw
            }
        };
        Ok(Forest::from_edges(f.edges().map(|e| (keep[e.0], keep[e.1]))))
    }
}

/// Runs the generic algorithm directly on `m`.
pub fn alg(m: &MetricSpace, inst: &Instance, cfg: &DriverConfig) -> Result<AlgOutput> {
    cfg.validate()?;
    inst.check_points(m.len())?;
    let h = NetHierarchy::build(m, cfg.s, cfg.heights(m))?;
    let q0 = resolve_q0(m, &h, inst, cfg)?;
    let mut run = Run {
        m,
        h,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        q0,
        out: AlgOutput { q0, ..AlgOutput::default() },
    };
    let f = run.node(inst)?;
    let mut out = run.out;
    out.feasible = is_feasible(&f, inst);
    if !out.feasible {
        return Err(Error::Infeasible);
    }
    out.cost = f.weight(m);
    out.forest = f;
    info!(
        "cost {} after {} nodes, {} splits, {} DP calls",
        out.cost, out.recursion_nodes, out.critical_splits, out.dp_calls
    );
    Ok(out)
}

/// Snaps and rescales the instance, runs [`alg`], and lifts the result back
/// to the original points.
pub fn solve(m: &MetricSpace, inst: &Instance, cfg: &DriverConfig) -> Result<AlgOutput> {
    if inst.nontrivial().next().is_none() {
        return Ok(AlgOutput { feasible: true, ..AlgOutput::default() });
    }
    let r = rescale_instance(m, inst, cfg.eps)?;
    let mut out = alg(&r.metric, &r.instance, cfg)?;
    let f = r.lift(&out.forest, inst);
    out.feasible = is_feasible(&f, inst);
    if !out.feasible {
        return Err(Error::Infeasible);
    }
    out.cost = f.weight(m);
    out.forest = f;
    Ok(out)
}

/// The result record written by the command line tool.
#[derive(Clone, Debug, Serialize)]
pub struct ResultRecord {
    pub cost: Dist,
    pub cost_units: f64,
    pub feasible: bool,
    pub ratio_vs_oracle: Option<f64>,
    pub ratio_vs_gw: f64,
    pub recursion_nodes: usize,
    pub trials: usize,
    pub critical_splits: usize,
    pub dp_fallbacks: usize,
    pub cap_exceeded: bool,
    pub seed: u64,
    pub config: DriverConfig,
}

impl ResultRecord {
    pub fn new(m: &MetricSpace, out: &AlgOutput, gw_cost: Dist, oracle_cost: Option<Dist>, cfg: &DriverConfig) -> Self {
        let ratio = |base: Dist| if base == 0 { 1.0 } else { out.cost as f64 / base as f64 };
        ResultRecord {
            cost: out.cost,
            cost_units: m.to_units(out.cost),
            feasible: out.feasible,
            ratio_vs_oracle: oracle_cost.map(ratio),
            ratio_vs_gw: ratio(gw_cost),
            recursion_nodes: out.recursion_nodes,
            trials: out.trials.len(),
            critical_splits: out.critical_splits,
            dp_fallbacks: out.dp_fallbacks,
            cap_exceeded: out.cap_exceeded,
            seed: cfg.seed,
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_SCALE;

    fn pts(p: &[[f64; 2]]) -> MetricSpace {
        let v: Vec<Vec<f64>> = p.iter().map(|x| x.to_vec()).collect();
        MetricSpace::from_points(&v, DEFAULT_SCALE).unwrap()
    }

    #[test]
    fn single_pair_is_direct() {
        let m = pts(&[[0.0, 0.0], [3.0, 4.0], [1.0, 1.0]]);
        let out = solve(&m, &Instance::new([(0, 1)]), &DriverConfig::default()).unwrap();
        assert_eq!(out.cost, 5 * DEFAULT_SCALE);
    }

    #[test]
    fn empty_heuristic_and_disabled_scan() {
        let m = pts(&[[0.0, 0.0], [3.0, 4.0]]);
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        assert_eq!(heuristic_t(&m, &h, &Instance::default(), 0, 0, 4.0, 0.06, 0.5).unwrap(), 0);
        let inst = Instance::new([(0, 1)]);
        assert_eq!(sparsity_scan(&m, &h, &inst, f64::INFINITY, 0.06, 0.5).unwrap(), None);
    }

    #[test]
    fn lambda_zero_when_stable() {
        // every pair sits well inside the smallest ball
        let m = pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let h = NetHierarchy::build(&m, 4, 3).unwrap();
        let inst = Instance::new([(0, 3), (1, 2)]);
        let u = h.net(1).unwrap()[0];
        assert_eq!(choose_lambda(&m, &h, &inst, 1, u, 2.0, 0.06, 0.5).unwrap(), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = pts(&[[0.0, 0.0], [9.0, 1.0], [2.0, 7.0], [8.0, 8.0], [4.0, 4.0], [1.0, 3.0]]);
        let inst = Instance::new([(0, 3), (1, 2)]);
        let cfg = DriverConfig { n_trials: 3, seed: 11, ..DriverConfig::default() };
        let a = solve(&m, &inst, &cfg).unwrap();
        let b = solve(&m, &inst, &cfg).unwrap();
        assert_eq!(a.forest, b.forest);
        let gw = gw_primal_dual(&m, &inst).weight(&m);
        let ra = ResultRecord::new(&m, &a, gw, None, &cfg).to_json();
        assert_eq!(ra, ResultRecord::new(&m, &b, gw, None, &cfg).to_json());
        assert!(a.feasible);
    }

    #[test]
    fn single_pair_heuristic_within_twice() {
        let m = pts(&[[0.0, 0.0], [3.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        let u = h.net(1).unwrap()[0];
        let v = heuristic_t(&m, &h, &Instance::new([(0, 1)]), 1, u, 4.0, 0.0625, 0.5).unwrap();
        assert!(v >= 3 * DEFAULT_SCALE && v as f64 <= 2.0 * 1.5 * 3.0 * DEFAULT_SCALE as f64);
    }

    #[test]
    fn dense_clump_is_critical_at_low_height() {
        // all pairs live in a unit clump; one far point stretches the space
        let m = pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [60.0, 0.0]]);
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        let inst = Instance::new([(0, 3), (1, 2)]);
        let (i, u) = sparsity_scan(&m, &h, &inst, 1e-3, 0.0625, 0.5).unwrap().unwrap();
        assert!(i <= 1);
        assert!(m.d(u, 0) <= 2 * DEFAULT_SCALE);
    }

    #[test]
    fn lambda_passes_ratio_test() {
        // pairs at two radii around the origin
        let m = pts(&[[0.0, 0.0], [1.0, 0.0], [0.0, 5.0], [5.0, 0.0], [0.0, 30.0], [30.0, 0.0]]);
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        let inst = Instance::new([(0, 1), (2, 3), (4, 5)]);
        let k = 2.0;
        let lambda = choose_lambda(&m, &h, &inst, 1, 0, k, 0.0625, 0.5).unwrap();
        let t = |l: u32| heuristic_t(&m, &h, &inst, 1, 0, 4.0 + 2.0 * l as f64, 0.0625, 0.5).unwrap() as f64;
        assert!(lambda < 2);
        assert!(t(lambda + 1) <= 30.0 * k * t(lambda));
    }

    #[test]
    fn clustered_instance_goes_critical() {
        use crate::gen::{generate, GeneratorKind, GeneratorSpec};
        let spec = GeneratorSpec { kind: GeneratorKind::Clustered, n_pairs: 2, spread: 40.0, seed: 1, extra_points: 2 };
        let (m, inst) = generate(&spec).unwrap().build(DEFAULT_SCALE).unwrap();
        let h = NetHierarchy::build(&m, 4, NetHierarchy::auto_num_heights(&m, 4)).unwrap();
        assert!(sparsity_scan(&m, &h, &inst, 1e-3, 0.0625, 0.5).unwrap().is_some());
    }

    #[test]
    fn critical_path_is_feasible() {
        // two far clumps with a tiny threshold force splits
        let m = pts(&[
            [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0],
            [40.0, 0.0], [41.0, 0.0], [40.0, 1.0], [41.0, 1.0],
        ]);
        let inst = Instance::new([(0, 3), (1, 2), (4, 7), (0, 5)]);
        let cfg = DriverConfig { q0: Threshold::Fixed(1e-3), n_trials: 2, ..DriverConfig::default() };
        let out = alg(&m, &inst, &cfg).unwrap();
        assert!(out.feasible);
        assert!(out.recursion_nodes >= 1);
    }
}

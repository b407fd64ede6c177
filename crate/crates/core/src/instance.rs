//! Terminal-pair instances, the instance file format, rescaling and the two
//! instance-splitting operations used by the driver.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::metric::{floor_log, greedy_net, Dist, MetricSpace, NetHierarchy, PointId};
use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TerminalPair {
    pub a: PointId,
    pub b: PointId,
}

impl TerminalPair {
    pub fn new(a: PointId, b: PointId) -> Self {
        TerminalPair { a, b }
    }

    fn canonical(self) -> Self {
        TerminalPair { a: self.a.min(self.b), b: self.a.max(self.b) }
    }

    pub fn is_trivial(&self) -> bool {
        self.a == self.b
    }
}

/// Set of unordered terminal pairs, kept sorted and deduplicated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pairs: Vec<TerminalPair>,
}

impl Instance {
    pub fn new<I: IntoIterator<Item = (PointId, PointId)>>(pairs: I) -> Self {
        let mut v: Vec<TerminalPair> = pairs
            .into_iter()
            .map(|(a, b)| TerminalPair::new(a, b).canonical())
            .collect();
        v.sort_unstable();
        v.dedup();
        Instance { pairs: v }
    }

    pub fn pairs(&self) -> &[TerminalPair] {
        &self.pairs
    }

    pub fn nontrivial(&self) -> impl Iterator<Item = &TerminalPair> + '_ {
        self.pairs.iter().filter(|p| !p.is_trivial())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn terminals(&self) -> BTreeSet<PointId> {
        self.pairs.iter().flat_map(|p| [p.a, p.b]).collect()
    }

    pub fn union(&self, other: &Instance) -> Instance {
        Instance::new(self.pairs.iter().chain(other.pairs.iter()).map(|p| (p.a, p.b)))
    }

    pub fn map_points<F: Fn(PointId) -> PointId>(&self, f: F) -> Instance {
        Instance::new(self.pairs.iter().map(|p| (f(p.a), f(p.b))))
    }

    pub fn check_points(&self, n: usize) -> Result<()> {
        match self.pairs.iter().flat_map(|p| [p.a, p.b]).find(|&p| p >= n) {
            Some(p) => Err(Error::UnknownPoint(p)),
            None => Ok(()),
        }
    }
}

/// True when every pair is joined by `f`.
pub fn is_feasible(f: &Forest, inst: &Instance) -> bool {
    let n = inst
        .terminals()
        .into_iter()
        .chain(f.vertices())
        .max()
        .map_or(0, |v| v + 1);
    let mut uf = UnionFind::new(n);
    for e in f.edges() {
        uf.union(e.0, e.1);
    }
    inst.pairs().iter().all(|p| uf.same(p.a, p.b))
}

/// On-disk instance: either coordinates or a distance matrix, plus pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub pairs: Vec<[PointId; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_bound: Option<f64>,
}

impl InstanceFile {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn build(&self, scale: i64) -> Result<(MetricSpace, Instance)> {
        let m = match (&self.points, &self.matrix) {
            (Some(p), None) => MetricSpace::from_points(p, scale)?,
            (None, Some(d)) => MetricSpace::from_matrix(d, scale)?,
            _ => {
                return Err(Error::MalformedMetric(
                    "exactly one of points or matrix is required".into(),
                ))
            }
        };
        let inst = Instance::new(self.pairs.iter().map(|&[a, b]| (a, b)));
        inst.check_points(m.len())?;
        Ok((m, inst))
    }
}

/// Result of snapping an instance to a fine net and rescaling so the
/// smallest nonzero distance is at least one unit.
#[derive(Clone, Debug)]
pub struct Rescaled {
    pub metric: MetricSpace,
    pub instance: Instance,
    /// New id to original id.
    pub original: Vec<PointId>,
    /// Original id to new id of its snap target.
    pub snap: Vec<PointId>,
    pub net_radius: Dist,
    pub factor: (i64, i64),
}

impl Rescaled {
    /// Maps a forest on the rescaled space back to original ids and adds the
    /// snapping edges of the original terminals.
    pub fn lift(&self, f: &Forest, original: &Instance) -> Forest {
        let mut out = Forest::from_edges(f.edges().map(|e| (self.original[e.0], self.original[e.1])));
        for t in original.terminals() {
            out.insert(t, self.original[self.snap[t]]);
        }
        out
    }
}

pub fn rescale_instance(m: &MetricSpace, inst: &Instance, eps: f64) -> Result<Rescaled> {
    if inst.is_empty() {
        return Err(Error::EmptyInstance);
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParams("eps must lie in (0, 1)".into()));
    }
    inst.check_points(m.len())?;
    let r = inst.pairs().iter().map(|p| m.d(p.a, p.b)).max().unwrap();
    if r == 0 {
        return Err(Error::DegenerateInstance);
    }
    let n = inst.len() as f64;
    let rho = (eps * r as f64 / (32.0 * n * n)).floor() as Dist;
    let all: Vec<PointId> = m.points().collect();
    let net = greedy_net(m, &all, rho);
    let snap: Vec<PointId> = all
        .iter()
        .map(|&p| {
            let q = m.nearest(p, &net).unwrap();
            net.binary_search(&q).unwrap()
        })
        .collect();
    let sub = m.restrict(&net);
    let (num, den) = match sub.min_positive_distance() {
        Some(min) if min < m.scale() => (m.scale(), min),
        _ => (1, 1),
    };
    let metric = if num == den { sub } else { sub.scaled_by(num, den) };
    let instance = inst.map_points(|p| snap[p]);
    Ok(Rescaled { metric, instance, original: net, snap, net_radius: rho, factor: (num, den) })
}

/// Smallest height `e >= 0` with `s^e >= x`.
fn ceil_log(s: u32, x: Dist, scale: i64) -> i64 {
    let mut e = 0;
    let mut p = scale as i128;
    while p < x as i128 {
        p *= s as i128;
        e += 1;
    }
    e
}

fn scaled_mul(c: f64, base: Dist) -> Dist {
    (c * base as f64).floor() as Dist
}

/// Restriction of `inst` to the ball `B(u, t s^i)`: pairs inside or barely
/// outside are kept, a pair leaving the ball by more than `delta s^i` is
/// replaced by its inside endpoint and that endpoint's nearest net point at
/// height `j` with `s^j < delta s^i <= s^(j+1)`; pairs entirely outside are
/// dropped.
pub fn auxiliary_subinstance(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    i: i64,
    u: PointId,
    t: f64,
    delta: f64,
) -> Result<Instance> {
    if i < 0 || i > h.top() as i64 {
        return Err(Error::HeightUnderflow(i));
    }
    if !h.contains(i, u) {
        return Err(Error::InvalidParams(format!("{u} is not a net point at height {i}")));
    }
    let si = m.pow(h.s(), i);
    let r_in = scaled_mul(t, si);
    let r_out = scaled_mul(t + delta, si);
    let j = ceil_log(h.s(), scaled_mul(delta, si), m.scale()) - 1;
    let net = h.net(j)?;
    let mut out = Vec::new();
    for p in inst.pairs() {
        let (a, b) = if m.d(u, p.a) <= r_in { (p.a, p.b) } else { (p.b, p.a) };
        if m.d(u, a) > r_in {
            continue;
        }
        if m.d(u, b) <= r_out {
            out.push((a, b));
        } else {
            out.push((a, m.nearest(a, net).unwrap()));
        }
    }
    Ok(Instance::new(out))
}

/// Splits `inst` around the ball `B = B(u, (4 + 2 lambda + h) s^i)` into a
/// local part and a remainder. A pair leaving `B` by more than `delta s^i`
/// is cut at the nearest net point `a'` of height `j` with
/// `s^j <= delta s^i < s^(j+1)`.
#[allow(clippy::too_many_arguments)]
pub fn split_critical(
    m: &MetricSpace,
    h: &NetHierarchy,
    inst: &Instance,
    i: i64,
    u: PointId,
    lambda: u32,
    hh: f64,
    delta: f64,
) -> Result<(Instance, Instance)> {
    if i < 0 || i > h.top() as i64 {
        return Err(Error::HeightUnderflow(i));
    }
    let si = m.pow(h.s(), i);
    let base = 4.0 + 2.0 * lambda as f64 + hh;
    let r_b = scaled_mul(base, si);
    let r_hat = scaled_mul(base + delta, si);
    let j = floor_log(h.s(), scaled_mul(delta, si), m.scale()).unwrap_or(0);
    let net = h.net(j)?;
    let mut local = Vec::new();
    let mut rest = Vec::new();
    for p in inst.pairs() {
        let (a, b) = if m.d(u, p.a) <= r_b { (p.a, p.b) } else { (p.b, p.a) };
        if m.d(u, a) > r_b {
            rest.push((a, b));
        } else if m.d(u, b) <= r_hat {
            local.push((a, b));
        } else {
            let ap = m.nearest(a, net).unwrap();
            local.push((a, ap));
            rest.push((ap, b));
        }
    }
    Ok((Instance::new(local), Instance::new(rest)))
}

//! Randomized hierarchical decomposition with truncated-exponential radii,
//! portals, and portal-respecting rerouting of forests.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{crossing_components, Forest};
use crate::metric::{floor_log, Dist, MetricSpace, NetHierarchy, PointId};

pub type ClusterId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PortalMode {
    #[default]
    Practical,
    Theory,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionParams {
    pub s: u32,
    /// Doubling dimension bound; the radius distribution uses `chi = 2^k`.
    pub k: f64,
    pub mode: PortalMode,
    /// Practical mode: portals of a height-`i` cluster come from height
    /// `i - portal_drop`.
    pub portal_drop: u32,
    pub eps: f64,
    /// Cut-probability constant used by the theory-mode portal height.
    pub c_cut: f64,
}

impl Default for DecompositionParams {
    fn default() -> Self {
        DecompositionParams { s: 4, k: 2.0, mode: PortalMode::Practical, portal_drop: 2, eps: 0.5, c_cut: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RadiusSample {
    pub height: usize,
    pub center: PointId,
    /// `r_u - s^i`, in `[0, s^i]`.
    pub extra: Dist,
}

impl RadiusSample {
    pub fn radius(&self, m: &MetricSpace, s: u32) -> Dist {
        m.pow(s, self.height as i64) + self.extra
    }
}

/// Draws `h = -s^i ln(1 - U (chi - 1) / chi) / ln chi` for `U` uniform in
/// `[0, 1)`; the result is supported on `[0, s^i]`.
pub fn sample_radius<R: Rng>(m: &MetricSpace, s: u32, i: usize, u: PointId, chi: f64, rng: &mut R) -> RadiusSample {
    let si = m.pow(s, i as i64);
    let uu: f64 = rng.gen();
    let h = -(si as f64) * (1.0 - uu * (chi - 1.0) / chi).ln() / chi.ln();
    let extra = (h.floor() as Dist).clamp(0, si);
    RadiusSample { height: i, center: u, extra }
}

/// Assigns each point to the first center (in the given order) whose ball
/// contains it. Returns the index into `centers`, or `None` if uncovered.
pub fn build_single_scale(
    m: &MetricSpace,
    centers: &[PointId],
    radii: &[Dist],
    points: &[PointId],
) -> Vec<Option<usize>> {
    points
        .iter()
        .map(|&p| (0..centers.len()).find(|&c| m.d(centers[c], p) <= radii[c]))
        .collect()
}

/// One single-scale partition of all points at height `i`: returns the
/// assigned center for every point.
pub fn sample_single_scale<R: Rng>(
    m: &MetricSpace,
    h: &NetHierarchy,
    i: usize,
    chi: f64,
    rng: &mut R,
) -> Vec<PointId> {
    let centers = h.net(i as i64).expect("height within hierarchy");
    let radii: Vec<Dist> = centers
        .iter()
        .map(|&u| sample_radius(m, h.s(), i, u, chi, rng).radius(m, h.s()))
        .collect();
    let all: Vec<PointId> = m.points().collect();
    build_single_scale(m, centers, &radii, &all)
        .into_iter()
        .map(|c| centers[c.expect("nets cover every point")])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub height: usize,
    pub center: PointId,
    pub members: Vec<PointId>,
    pub parent: Option<ClusterId>,
    pub children: Vec<ClusterId>,
    pub portals: Vec<PointId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Decomposition {
    pub s: u32,
    pub clusters: Vec<Cluster>,
    pub root: ClusterId,
    pub radii: Vec<Vec<RadiusSample>>,
    /// `cluster_at[height][point]`.
    #[serde(skip)]
    cluster_at: Vec<Vec<ClusterId>>,
    #[serde(skip)]
    portal_mask: Vec<Vec<bool>>,
}

impl Decomposition {
    /// Builds heights `top - 1` down to `0` where `top = h.top()`. Height 0
    /// clusters are singletons.
    pub fn build<R: Rng>(
        m: &MetricSpace,
        h: &NetHierarchy,
        params: &DecompositionParams,
        rng: &mut R,
    ) -> Result<Decomposition> {
        if h.top() < 1 {
            return Err(Error::InvalidParams("hierarchy needs at least two heights".into()));
        }
        let root_h = h.top() - 1;
        let chi = 2f64.powf(params.k).max(2.0);
        let mut radii = vec![Vec::new(); root_h + 1];
        let mut clusters: Vec<Cluster> = Vec::new();
        // frontier: (members, parent)
        let mut frontier: Vec<(Vec<PointId>, Option<ClusterId>)> = vec![(m.points().collect(), None)];
        for i in (1..=root_h).rev() {
            let centers = h.net(i as i64)?;
            let samples: Vec<RadiusSample> = centers
                .iter()
                .map(|&u| sample_radius(m, h.s(), i, u, chi, rng))
                .collect();
            let r: Vec<Dist> = samples.iter().map(|x| x.radius(m, h.s())).collect();
            radii[i] = samples;
            let mut next = Vec::new();
            for (members, parent) in frontier {
                let assign = build_single_scale(m, centers, &r, &members);
                let mut groups: Vec<(usize, Vec<PointId>)> = Vec::new();
                for (p, c) in members.iter().zip(assign) {
                    let c = c.expect("nets cover every point");
                    match groups.iter_mut().find(|g| g.0 == c) {
                        Some(g) => g.1.push(*p),
                        None => groups.push((c, vec![*p])),
                    }
                }
                groups.sort_by_key(|g| g.0);
                if parent.is_none() && groups.len() != 1 {
                    return Err(Error::NonUniqueRoot(groups.len()));
                }
                for (c, mut pts) in groups {
                    pts.sort_unstable();
                    let id = clusters.len();
                    clusters.push(Cluster {
                        id,
                        height: i,
                        center: centers[c],
                        members: pts.clone(),
                        parent,
                        children: Vec::new(),
                        portals: Vec::new(),
                    });
                    if let Some(p) = parent {
                        clusters[p].children.push(id);
                    }
                    next.push((pts, Some(id)));
                }
            }
            frontier = next;
        }
        for (members, parent) in frontier {
            for p in members {
                let id = clusters.len();
                clusters.push(Cluster {
                    id,
                    height: 0,
                    center: p,
                    members: vec![p],
                    parent,
                    children: Vec::new(),
                    portals: vec![p],
                });
                clusters[parent.unwrap()].children.push(id);
            }
        }
        let mut d = Decomposition {
            s: h.s(),
            clusters,
            root: 0,
            radii,
            cluster_at: Vec::new(),
            portal_mask: Vec::new(),
        };
        for c in 0..d.clusters.len() {
            if d.clusters[c].height > 0 {
                d.clusters[c].portals = compute_portals(m, h, &d.clusters[c], params, root_h + 1);
            }
        }
        d.reindex(m.len());
        Ok(d)
    }

    /// Rebuilds lookup tables; needed after deserialization.
    pub fn reindex(&mut self, n: usize) {
        let top = self.clusters[self.root].height;
        self.cluster_at = vec![vec![usize::MAX; n]; top + 1];
        self.portal_mask = vec![Vec::new(); self.clusters.len()];
        for c in &self.clusters {
            for &p in &c.members {
                self.cluster_at[c.height][p] = c.id;
            }
            let mut mask = vec![false; n];
            for &p in &c.portals {
                mask[p] = true;
            }
            self.portal_mask[c.id] = mask;
        }
    }

    pub fn cluster(&self, c: ClusterId) -> &Cluster {
        &self.clusters[c]
    }

    pub fn root_height(&self) -> usize {
        self.clusters[self.root].height
    }

    pub fn cluster_at(&self, height: usize, p: PointId) -> ClusterId {
        self.cluster_at[height][p]
    }

    pub fn leaf(&self, p: PointId) -> ClusterId {
        self.cluster_at[0][p]
    }

    pub fn contains(&self, c: ClusterId, p: PointId) -> bool {
        let cl = &self.clusters[c];
        self.cluster_at[cl.height][p] == c
    }

    pub fn is_portal(&self, c: ClusterId, p: PointId) -> bool {
        self.portal_mask[c][p]
    }

    /// True when `a` is `b` or one of its descendants.
    pub fn is_descendant(&self, a: ClusterId, b: ClusterId) -> bool {
        let (ha, hb) = (self.clusters[a].height, self.clusters[b].height);
        ha <= hb && self.cluster_at[hb][self.clusters[a].members[0]] == b
    }

    /// Ancestor of `c` at height `height >= Ht(c)`.
    pub fn ancestor_at(&self, c: ClusterId, height: usize) -> ClusterId {
        self.cluster_at[height][self.clusters[c].members[0]]
    }

    pub fn at_height(&self, height: usize) -> impl Iterator<Item = &Cluster> + '_ {
        self.clusters.iter().filter(move |c| c.height == height)
    }

    /// Descendants of `c` including `c`, in id order.
    pub fn descendants(&self, c: ClusterId) -> Vec<ClusterId> {
        let mut out = vec![c];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.clusters[out[k]].children.iter().copied());
            k += 1;
        }
        out.sort_unstable();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("decomposition serializes")
    }

    /// First cluster boundary crossed by edge `{x, y}` where the endpoint on
    /// that cluster's side is not one of its portals, scanning from the top.
    pub fn violation(&self, x: PointId, y: PointId) -> Option<(ClusterId, PointId)> {
        for j in (0..=self.root_height()).rev() {
            let (cx, cy) = (self.cluster_at[j][x], self.cluster_at[j][y]);
            if cx == cy {
                continue;
            }
            if !self.is_portal(cx, x) {
                return Some((cx, x));
            }
            if !self.is_portal(cy, y) {
                return Some((cy, y));
            }
        }
        None
    }

    pub fn first_portal_violation(&self, f: &Forest) -> Option<ClusterId> {
        f.edges().find_map(|e| self.violation(e.0, e.1).map(|v| v.0))
    }
}

fn compute_portals(
    m: &MetricSpace,
    h: &NetHierarchy,
    c: &Cluster,
    params: &DecompositionParams,
    num_heights: usize,
) -> Vec<PointId> {
    let i = c.height as i64;
    let mut ip = match params.mode {
        PortalMode::Practical => (i - params.portal_drop as i64).max(0),
        PortalMode::Theory => {
            let beta = params.c_cut * params.k;
            let target = params.eps / (4.0 * beta * num_heights as f64) * m.pow(params.s, i) as f64;
            floor_log(params.s, target.floor() as Dist, m.scale()).unwrap_or(0).min(i)
        }
    };
    loop {
        let portals: Vec<PointId> = c.members.iter().copied().filter(|&p| h.contains(ip, p)).collect();
        if !portals.is_empty() || ip == 0 {
            return portals;
        }
        ip -= 1;
    }
}

/// Reroutes every edge that leaves a cluster through a non-portal endpoint
/// via the nearest portal of that cluster, recursively.
pub fn make_portal_respecting(f: &Forest, m: &MetricSpace, d: &Decomposition) -> Forest {
    let mut out = Forest::new();
    let cap = 4 * (d.root_height() + 2);
    for e in f.edges() {
        route_portal(m, d, e.0, e.1, 0, cap, &mut out);
    }
    out
}

fn route_portal(
    m: &MetricSpace,
    d: &Decomposition,
    x: PointId,
    y: PointId,
    depth: usize,
    cap: usize,
    out: &mut Forest,
) {
    if x == y {
        return;
    }
    match d.violation(x, y) {
        Some((c, side)) if depth < cap => {
            let other = if side == x { y } else { x };
            let p = m.nearest(side, &d.cluster(c).portals).expect("clusters have portals");
            route_portal(m, d, side, p, depth + 1, cap, out);
            route_portal(m, d, p, other, depth + 1, cap, out);
        }
        _ => {
            out.insert(x, y);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLightness {
    pub cluster: ClusterId,
    pub portals_used: usize,
    pub crossing_components: usize,
}

/// Per cluster: distinct portals carrying edges that leave it, and the
/// number of components crossing its boundary.
pub fn lightness_report(f: &Forest, m: &MetricSpace, d: &Decomposition) -> Result<Vec<ClusterLightness>> {
    if let Some(c) = d.first_portal_violation(f) {
        return Err(Error::NotPortalRespecting(c));
    }
    let mut out = Vec::with_capacity(d.clusters.len());
    for c in &d.clusters {
        let mut used: Vec<PointId> = f
            .edges()
            .filter_map(|e| match (d.contains(c.id, e.0), d.contains(c.id, e.1)) {
                (true, false) => Some(e.0),
                (false, true) => Some(e.1),
                _ => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        let crossing = crossing_components(f, m, |p| d.contains(c.id, p)).len();
        out.push(ClusterLightness { cluster: c.id, portals_used: used.len(), crossing_components: crossing });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_SCALE;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> MetricSpace {
        let pts: Vec<Vec<f64>> = (0..n * n).map(|k| vec![(k % n) as f64, (k / n) as f64]).collect();
        MetricSpace::from_points(&pts, DEFAULT_SCALE).unwrap()
    }

    fn decomp(m: &MetricSpace, seed: u64) -> Decomposition {
        let top = NetHierarchy::auto_num_heights(m, 4);
        let h = NetHierarchy::build(m, 4, top).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Decomposition::build(m, &h, &DecompositionParams::default(), &mut rng).unwrap()
    }

    #[test]
    fn radius_range() {
        let m = grid(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let r = sample_radius(&m, 4, 2, 0, 4.0, &mut rng);
            assert!(r.extra >= 0 && r.extra <= 16 * DEFAULT_SCALE);
        }
    }

    #[test]
    fn single_center_takes_everything() {
        let m = grid(3);
        let all: Vec<_> = m.points().collect();
        let assign = build_single_scale(&m, &[4], &[10 * DEFAULT_SCALE], &all);
        assert!(assign.iter().all(|a| *a == Some(0)));
    }

    #[test]
    fn laminar_and_complete() {
        let m = grid(5);
        let d = decomp(&m, 7);
        let root = d.cluster(d.root);
        assert_eq!(root.members.len(), 25);
        for c in &d.clusters {
            if c.height == 0 {
                assert_eq!(c.members.len(), 1);
                assert!(c.children.is_empty());
                continue;
            }
            let mut union: Vec<PointId> =
                c.children.iter().flat_map(|&k| d.cluster(k).members.clone()).collect();
            union.sort_unstable();
            assert_eq!(union, c.members);
            for &k in &c.children {
                assert_eq!(d.cluster(k).height + 1, c.height);
                assert_eq!(d.cluster(k).parent, Some(c.id));
            }
            assert!(!c.portals.is_empty());
            assert!(c.portals.iter().all(|&p| d.contains(c.id, p)));
        }
    }

    #[test]
    fn rerouting_respects_portals() {
        let m = grid(5);
        let d = decomp(&m, 3);
        let f = Forest::from_edges([(0, 24), (3, 21), (12, 13)]);
        let g = make_portal_respecting(&f, &m, &d);
        assert_eq!(d.first_portal_violation(&g), None);
        assert!(g.connects(0, 24) && g.connects(3, 21) && g.connects(12, 13));
        let report = lightness_report(&g, &m, &d).unwrap();
        assert_eq!(report.len(), d.clusters.len());
        assert_eq!(report[d.root].portals_used, 0);
    }

    #[test]
    fn json_dump_roundtrip() {
        let m = grid(3);
        let d = decomp(&m, 1);
        let mut back: Decomposition = serde_json::from_str(&d.to_json()).unwrap();
        back.reindex(m.len());
        assert_eq!(back.clusters, d.clusters);
        assert_eq!(back.cluster_at(0, 4), d.cluster_at(0, 4));
    }
}

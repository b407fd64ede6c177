//! Finite metric spaces with scaled-integer distances, greedy nets and
//! nested net hierarchies.
//!
//! A distance of one unit is stored as `scale` (default `10^6`). All
//! comparisons are exact integer comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PointId = usize;
pub type Dist = i64;

pub const DEFAULT_SCALE: i64 = 1_000_000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricSpace {
    n: usize,
    scale: i64,
    d: Vec<Dist>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<Vec<Vec<f64>>>,
}

impl MetricSpace {
    /// Euclidean metric on the given coordinates. Distances are rounded up,
    /// which keeps the triangle inequality intact.
    pub fn from_points(points: &[Vec<f64>], scale: i64) -> Result<Self> {
        if scale <= 0 {
            return Err(Error::InvalidParams("scale must be positive".into()));
        }
        let n = points.len();
        if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
            return Err(Error::MalformedMetric(format!(
                "mixed dimensions {} and {}",
                points[0].len(),
                p.len()
            )));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::MalformedMetric("non-finite coordinate".into()));
        }
        let mut d = vec![0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let sq: f64 = points[a]
                    .iter()
                    .zip(&points[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let v = (sq.sqrt() * scale as f64).ceil() as Dist;
                d[a * n + b] = v;
                d[b * n + a] = v;
            }
        }
        let m = MetricSpace {
            n,
            scale,
            d,
            coords: Some(points.to_vec()),
        };
        m.check_triangle()?;
        Ok(m)
    }

    /// Metric from a matrix given in units. Entries are rounded to the
    /// nearest scaled integer and then validated.
    pub fn from_matrix(matrix: &[Vec<f64>], scale: i64) -> Result<Self> {
        if scale <= 0 {
            return Err(Error::InvalidParams("scale must be positive".into()));
        }
        let n = matrix.len();
        let mut rows = Vec::with_capacity(n);
        for (a, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MalformedMetric(format!("row {a} has {} entries", row.len())));
            }
            let mut r = Vec::with_capacity(n);
            for (b, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::MalformedMetric("non-finite distance".into()));
                }
                if v < 0.0 {
                    return Err(Error::NegativeDistance { a, b, value: v });
                }
                r.push((v * scale as f64).round() as Dist);
            }
            rows.push(r);
        }
        Self::from_scaled(rows, scale)
    }

    pub fn from_scaled(rows: Vec<Vec<Dist>>, scale: i64) -> Result<Self> {
        let n = rows.len();
        let mut d = Vec::with_capacity(n * n);
        for (a, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MalformedMetric(format!("row {a} has {} entries", row.len())));
            }
            for (b, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(Error::NegativeDistance { a, b, value: v as f64 / scale as f64 });
                }
            }
            if row[a] != 0 {
                return Err(Error::MalformedMetric(format!("nonzero diagonal at {a}")));
            }
            d.extend_from_slice(row);
        }
        for a in 0..n {
            for b in 0..a {
                if d[a * n + b] != d[b * n + a] {
                    return Err(Error::MalformedMetric(format!("asymmetric at ({a},{b})")));
                }
            }
        }
        let m = MetricSpace { n, scale, d, coords: None };
        m.check_triangle()?;
        Ok(m)
    }

    fn check_triangle(&self) -> Result<()> {
        let n = self.n;
        for b in 0..n {
            for a in 0..n {
                let ab = self.d[a * n + b];
                for c in (a + 1)..n {
                    if self.d[a * n + c] > ab + self.d[b * n + c] {
                        return Err(Error::TriangleViolation { a, b, c });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn scale(&self) -> i64 {
        self.scale
    }

    pub fn coords(&self) -> Option<&[Vec<f64>]> {
        self.coords.as_deref()
    }

    #[inline]
    pub fn d(&self, a: PointId, b: PointId) -> Dist {
        self.d[a * self.n + b]
    }

    pub fn points(&self) -> std::ops::Range<PointId> {
        0..self.n
    }

    /// Converts a length in units to scaled integers, rounding down.
    pub fn units(&self, x: f64) -> Dist {
        (x * self.scale as f64).floor() as Dist
    }

    pub fn to_units(&self, x: Dist) -> f64 {
        x as f64 / self.scale as f64
    }

    /// `s^i` units as a scaled integer, saturating. Negative heights round down.
    pub fn pow(&self, s: u32, i: i64) -> Dist {
        scaled_pow(s, i, self.scale)
    }

    pub fn diameter(&self, pts: &[PointId]) -> Dist {
        let mut best = 0;
        for (k, &a) in pts.iter().enumerate() {
            for &b in &pts[k + 1..] {
                best = best.max(self.d(a, b));
            }
        }
        best
    }

    pub fn dist_to_set(&self, p: PointId, set: &[PointId]) -> Option<Dist> {
        set.iter().map(|&q| self.d(p, q)).min()
    }

    /// Nearest point of `set`, ties broken by ascending id.
    pub fn nearest(&self, p: PointId, set: &[PointId]) -> Option<PointId> {
        set.iter().copied().min_by_key(|&q| (self.d(p, q), q))
    }

    pub fn ball(&self, u: PointId, radius: Dist) -> Vec<PointId> {
        self.points().filter(|&p| self.d(u, p) <= radius).collect()
    }

    pub fn min_positive_distance(&self) -> Option<Dist> {
        self.d.iter().copied().filter(|&v| v > 0).min()
    }

    /// Sub-metric on `pts`, re-indexed in the given order.
    pub fn restrict(&self, pts: &[PointId]) -> MetricSpace {
        let m = pts.len();
        let mut d = Vec::with_capacity(m * m);
        for &a in pts {
            for &b in pts {
                d.push(self.d(a, b));
            }
        }
        let coords = self
            .coords
            .as_ref()
            .map(|c| pts.iter().map(|&p| c[p].clone()).collect());
        MetricSpace { n: m, scale: self.scale, d, coords }
    }

    /// Multiplies every distance by `num/den`, rounding up.
    pub fn scaled_by(&self, num: i64, den: i64) -> MetricSpace {
        let d = self
            .d
            .iter()
            .map(|&v| ceil_div(v as i128 * num as i128, den as i128) as Dist)
            .collect();
        MetricSpace {
            n: self.n,
            scale: self.scale,
            d,
            coords: self.coords.clone(),
        }
    }
}

pub fn scaled_pow(s: u32, i: i64, scale: i64) -> Dist {
    if i >= 0 {
        let mut v = scale as i128;
        for _ in 0..i {
            v *= s as i128;
            if v > Dist::MAX as i128 {
                return Dist::MAX;
            }
        }
        v as Dist
    } else {
        let mut v = scale as i128;
        for _ in 0..(-i) {
            v /= s as i128;
        }
        v as Dist
    }
}

pub(crate) fn ceil_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}

/// Greedy net: scan `z` in ascending id and keep every point farther than
/// `rho` from all points kept so far. The result is a `rho`-packing and a
/// `rho`-cover of `z`.
pub fn greedy_net(m: &MetricSpace, z: &[PointId], rho: Dist) -> Vec<PointId> {
    let mut order = z.to_vec();
    order.sort_unstable();
    order.dedup();
    extend_net(m, &[], &order, rho)
}

fn extend_net(m: &MetricSpace, seed: &[PointId], z: &[PointId], rho: Dist) -> Vec<PointId> {
    let mut chosen = seed.to_vec();
    for &p in z {
        if chosen.iter().all(|&q| m.d(p, q) > rho) {
            chosen.push(p);
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    chosen
}

/// Checks that `s` is a `rho`-packing and a `rho`-cover of `z`. With a
/// dimension bound `k`, also checks `|s| <= (2 Diam(s) / rho)^k`.
pub fn verify_packing_cover(
    m: &MetricSpace,
    s: &[PointId],
    z: &[PointId],
    rho: Dist,
    dim_bound: Option<f64>,
) -> bool {
    for (k, &a) in s.iter().enumerate() {
        if s[k + 1..].iter().any(|&b| m.d(a, b) <= rho) {
            return false;
        }
    }
    if z.iter().any(|&p| s.iter().all(|&q| m.d(p, q) > rho)) {
        return false;
    }
    if let Some(k) = dim_bound {
        if s.len() > 1 {
            let ratio = 2.0 * m.diameter(s) as f64 / rho.max(1) as f64;
            if s.len() as f64 > ratio.powf(k) * (1.0 + 1e-9) {
                return false;
            }
        }
    }
    true
}

/// Nested nets `N_top ⊆ ... ⊆ N_1 ⊆ N_0 = X` where every `N_i` with
/// `i >= 1` is an `s^i`-packing and `s^i`-cover of `X`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetHierarchy {
    s: u32,
    levels: Vec<Vec<PointId>>,
    #[serde(skip)]
    member: Vec<Vec<bool>>,
}

impl NetHierarchy {
    /// Builds levels `0..=top`. Level `i` extends level `i + 1` greedily over
    /// all of `X`, so nesting and covering hold at every level.
    pub fn build(m: &MetricSpace, s: u32, top: usize) -> Result<Self> {
        if s < 2 {
            return Err(Error::InvalidParams("s must be at least 2".into()));
        }
        let all: Vec<PointId> = m.points().collect();
        let mut levels = vec![Vec::new(); top + 1];
        for i in (1..=top).rev() {
            let seed = if i == top { Vec::new() } else { levels[i + 1].clone() };
            levels[i] = extend_net(m, &seed, &all, m.pow(s, i as i64));
        }
        levels[0] = all;
        let member = levels
            .iter()
            .map(|lv| {
                let mut v = vec![false; m.len()];
                for &p in lv {
                    v[p] = true;
                }
                v
            })
            .collect();
        Ok(NetHierarchy { s, levels, member })
    }

    /// Number of heights needed so that a single cluster at height
    /// `num_heights - 1` can cover the whole space.
    pub fn auto_num_heights(m: &MetricSpace, s: u32) -> usize {
        let diam = m.diameter(&m.points().collect::<Vec<_>>());
        let mut l = 1usize;
        while m.pow(s, l as i64 - 1) < diam {
            l += 1;
        }
        l.max(2)
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn top(&self) -> usize {
        self.levels.len() - 1
    }

    /// Net at height `i`; negative heights give `N_0`.
    pub fn net(&self, i: i64) -> Result<&[PointId]> {
        if i > self.top() as i64 {
            return Err(Error::HeightUnderflow(i));
        }
        Ok(&self.levels[i.max(0) as usize])
    }

    pub fn contains(&self, i: i64, p: PointId) -> bool {
        if i > self.top() as i64 {
            return false;
        }
        self.member[i.max(0) as usize][p]
    }

    pub fn levels(&self) -> &[Vec<PointId>] {
        &self.levels
    }

    /// Restores the membership index after deserialization.
    pub fn reindex(&mut self, n: usize) {
        self.member = self
            .levels
            .iter()
            .map(|lv| {
                let mut v = vec![false; n];
                for &p in lv {
                    v[p] = true;
                }
                v
            })
            .collect();
    }
}

/// Height `j` with `s^j <= x < s^(j+1)` for a scaled length `x`, or `None`
/// when `x < 1` unit.
pub fn floor_log(s: u32, x: Dist, scale: i64) -> Option<i64> {
    if x < scale {
        return None;
    }
    let mut j = 0;
    let mut p = scale as i128 * s as i128;
    while p <= x as i128 {
        j += 1;
        p *= s as i128;
    }
    Some(j)
}

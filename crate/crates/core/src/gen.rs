//! Seeded instance generators with integer coordinates.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::InstanceFile;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Euclidean2d,
    Euclidean3d,
    Grid,
    Clustered,
}

impl std::str::FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean2d" => Ok(GeneratorKind::Euclidean2d),
            "euclidean3d" => Ok(GeneratorKind::Euclidean3d),
            "grid" => Ok(GeneratorKind::Grid),
            "clustered" => Ok(GeneratorKind::Clustered),
            _ => Err(Error::InvalidParams(format!("unknown generator kind {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub n_pairs: usize,
    /// Side length of the sampling box (grid: of the whole grid).
    pub spread: f64,
    pub seed: u64,
    /// Non-terminal points added on top of the `2 n_pairs` terminals.
    pub extra_points: usize,
}

/// Covering a ball of radius `r` in `R^d` by balls of radius `r/2` takes at
/// most `5^d` of them.
fn euclidean_dim_bound(d: usize) -> f64 {
    d as f64 * 5f64.log2()
}

fn distinct_points(rng: &mut ChaCha8Rng, count: usize, dim: usize, lo: &[i64], hi: &[i64]) -> Result<Vec<Vec<i64>>> {
    let room: f64 = (0..dim).map(|k| (hi[k] - lo[k] + 1) as f64).product();
    if room < count as f64 {
        return Err(Error::InvalidParams("spread too small for the requested number of points".into()));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p: Vec<i64> = (0..dim).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    Ok(out)
}

fn to_f64(pts: Vec<Vec<i64>>) -> Vec<Vec<f64>> {
    pts.into_iter().map(|p| p.into_iter().map(|x| x as f64).collect()).collect()
}

pub fn generate(spec: &GeneratorSpec) -> Result<InstanceFile> {
    if spec.n_pairs == 0 {
        return Err(Error::InvalidParams("n_pairs must be at least 1".into()));
    }
    if !(spec.spread > 0.0) {
        return Err(Error::InvalidParams("spread must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = 2 * spec.n_pairs + spec.extra_points;
    let top = spec.spread.floor().max(1.0) as i64;
    let consecutive = |n_pairs: usize| -> Vec<[usize; 2]> { (0..n_pairs).map(|j| [2 * j, 2 * j + 1]).collect() };
    match spec.kind {
        GeneratorKind::Euclidean2d | GeneratorKind::Euclidean3d => {
            let dim = if spec.kind == GeneratorKind::Euclidean2d { 2 } else { 3 };
            let pts = distinct_points(&mut rng, n, dim, &vec![0; dim], &vec![top; dim])?;
            Ok(InstanceFile {
                points: Some(to_f64(pts)),
                matrix: None,
                pairs: consecutive(spec.n_pairs),
                dim_bound: Some(euclidean_dim_bound(dim)),
            })
        }
        GeneratorKind::Grid => {
            let side = (1..).find(|&k: &usize| k * k >= n).unwrap();
            let step = if side > 1 { (top / (side as i64 - 1)).max(1) } else { 1 };
            let pts: Vec<Vec<f64>> = (0..side * side)
                .map(|k| vec![((k % side) as i64 * step) as f64, ((k / side) as i64 * step) as f64])
                .collect();
            let mut ids: Vec<usize> = (0..pts.len()).collect();
            ids.shuffle(&mut rng);
            let pairs = (0..spec.n_pairs).map(|j| [ids[2 * j], ids[2 * j + 1]]).collect();
            Ok(InstanceFile { points: Some(pts), matrix: None, pairs, dim_bound: Some(euclidean_dim_bound(2)) })
        }
        GeneratorKind::Clustered => {
            // two clumps at opposite ends of the box; every pair crosses
            let r = (top / 20).max(2);
            let a = n.div_ceil(2);
            let left = distinct_points(&mut rng, a, 2, &[0, 0], &[r, r])?;
            let right = distinct_points(&mut rng, n - a, 2, &[top - r, 0], &[top, r])?;
            let mut pairs = Vec::new();
            for j in 0..spec.n_pairs {
                if j >= a || a + j >= n {
                    break;
                }
                pairs.push([j, a + j]);
            }
            let mut pts = left;
            pts.extend(right);
            Ok(InstanceFile { points: Some(to_f64(pts)), matrix: None, pairs, dim_bound: Some(euclidean_dim_bound(2)) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::DEFAULT_SCALE;

    fn spec(kind: GeneratorKind, n_pairs: usize, extra: usize) -> GeneratorSpec {
        GeneratorSpec { kind, n_pairs, spread: 20.0, seed: 5, extra_points: extra }
    }

    #[test]
    fn one_pair_two_points() {
        let f = generate(&spec(GeneratorKind::Euclidean2d, 1, 0)).unwrap();
        assert_eq!(f.points.as_ref().unwrap().len(), 2);
        assert_eq!(f.pairs, vec![[0, 1]]);
    }

    #[test]
    fn grid_three_by_three() {
        let f = generate(&spec(GeneratorKind::Grid, 2, 5)).unwrap();
        assert_eq!(f.points.as_ref().unwrap().len(), 9);
        let mut used: Vec<usize> = f.pairs.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), 4);
    }

    #[test]
    fn deterministic_and_valid() {
        for kind in [GeneratorKind::Euclidean2d, GeneratorKind::Euclidean3d, GeneratorKind::Grid, GeneratorKind::Clustered] {
            let a = generate(&spec(kind, 3, 4)).unwrap();
            assert_eq!(a, generate(&spec(kind, 3, 4)).unwrap());
            let (m, inst) = a.build(DEFAULT_SCALE).unwrap();
            assert_eq!(inst.nontrivial().count(), 3);
            assert!(m.len() >= 6);
        }
    }

    #[test]
    fn too_small_box() {
        let s = GeneratorSpec { kind: GeneratorKind::Euclidean2d, n_pairs: 10, spread: 1.0, seed: 0, extra_points: 0 };
        assert!(generate(&s).is_err());
    }
}

//! Brute-force reference computations and error statistics.
//!
//! Nothing here calls into the incremental ESDF code; the tests compare the
//! two.

use std::collections::HashMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::esdf::{esdf_distance, EsdfConfig};
use crate::map::{global_center_position, GlobalIndex, Layer, VoxelIndex};
use crate::mesh::MeshLayer;
use crate::scene::Scene;
use crate::voxels::EsdfVoxel;

/// Largest domain [`brute_force_esdf`] accepts.
pub const MAX_ORACLE_VOXELS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("no sites to measure distance to")]
    NoSites,
    #[error("domain of {0} voxels exceeds the oracle limit of {MAX_ORACLE_VOXELS}")]
    DomainTooLarge(usize),
    #[error("nothing to compare")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub median_abs: f64,
    pub mean_abs: f64,
    pub p95_abs: f64,
    pub max_abs: f64,
    pub rms: f64,
    pub count: usize,
}

impl ErrorStats {
    /// Statistics of absolute errors. The median averages the two middle
    /// values for even counts; the 95th percentile is nearest-rank.
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Result<Self, OracleError> {
        let mut e: Vec<f64> = errors.into_iter().map(f64::abs).collect();
        if e.is_empty() {
            return Err(OracleError::Empty);
        }
        e.sort_by(f64::total_cmp);
        let n = e.len();
        let median = if n % 2 == 1 {
            e[n / 2]
        } else {
            (e[n / 2 - 1] + e[n / 2]) / 2.0
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        let sum: f64 = e.iter().sum();
        let sum_sq: f64 = e.iter().map(|x| x * x).sum();
        Ok(Self {
            median_abs: median,
            mean_abs: sum / n as f64,
            p95_abs: e[rank - 1],
            max_abs: e[n - 1],
            rms: (sum_sq / n as f64).sqrt(),
            count: n,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Exact squared distance, in voxels², from every domain voxel to its
/// nearest site, by checking every site.
pub fn brute_force_esdf(sites: &[GlobalIndex], domain: &[GlobalIndex]) -> Result<Vec<i64>, OracleError> {
    if sites.is_empty() {
        return Err(OracleError::NoSites);
    }
    if domain.len() > MAX_ORACLE_VOXELS {
        return Err(OracleError::DomainTooLarge(domain.len()));
    }
    use rayon::prelude::*;
    Ok(domain
        .par_iter()
        .map(|p| {
            sites
                .iter()
                .map(|s| {
                    let d = (s - p).cast::<i64>();
                    d.x * d.x + d.y * d.y + d.z * d.z
                })
                .min()
                .unwrap()
        })
        .collect())
}

/// Sites and observed voxels of an ESDF layer, in block order.
pub fn esdf_sites_and_domain(esdf: &Layer<EsdfVoxel>) -> (Vec<GlobalIndex>, Vec<GlobalIndex>) {
    let mut sites = Vec::new();
    let mut domain = Vec::new();
    for (g, block) in esdf.iter_sorted() {
        for (i, v) in block.voxels().iter().enumerate() {
            if !v.observed {
                continue;
            }
            let idx = VoxelIndex::from_linear(i);
            let p = g.first_voxel() + GlobalIndex::new(idx.x as i32, idx.y as i32, idx.z as i32);
            if v.is_site {
                sites.push(p);
            }
            domain.push(p);
        }
    }
    (sites, domain)
}

/// Reference the ESDF is measured against.
pub enum GroundTruth<'a> {
    /// Signed distance from each voxel center to the scene surface.
    Scene(&'a Scene),
    /// Signed distance per voxel, meters.
    Voxels(&'a HashMap<GlobalIndex, f64>),
}

/// Absolute error of every observed ESDF voxel that has a site in range.
/// Voxels at the maximum distance are skipped. Negative ground truth is
/// capped the same way interior readouts are.
pub fn esdf_error(
    esdf: &Layer<EsdfVoxel>,
    truth: &GroundTruth<'_>,
    cfg: &EsdfConfig,
) -> Result<ErrorStats, OracleError> {
    let vs = esdf.voxel_size();
    let cap = cfg.interior_cap_voxels * vs;
    let mut errors = Vec::new();
    for (g, block) in esdf.iter_sorted() {
        for (i, v) in block.voxels().iter().enumerate() {
            if !v.observed || v.is_at_max() {
                continue;
            }
            let Some(estimate) = esdf_distance(v, vs, cfg.interior_cap_voxels) else { continue };
            let idx = VoxelIndex::from_linear(i);
            let p = g.first_voxel() + GlobalIndex::new(idx.x as i32, idx.y as i32, idx.z as i32);
            let truth = match truth {
                GroundTruth::Scene(scene) => scene.sdf(&global_center_position(&p, vs)),
                GroundTruth::Voxels(map) => match map.get(&p) {
                    Some(d) => *d,
                    None => continue,
                },
            };
            errors.push(estimate - truth.max(-cap));
        }
    }
    ErrorStats::from_errors(errors)
}

/// Absolute scene SDF at each point.
pub fn surface_error_points(points: &[Point3<f64>], scene: &Scene) -> Result<ErrorStats, OracleError> {
    ErrorStats::from_errors(points.iter().map(|p| scene.sdf(p)))
}

/// Absolute scene SDF at every mesh vertex.
pub fn surface_error(mesh: &MeshLayer, scene: &Scene) -> Result<ErrorStats, OracleError> {
    let points: Vec<Point3<f64>> = mesh.blocks().flat_map(|(_, b)| b.vertices.iter().copied()).collect();
    surface_error_points(&points, scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_known_values() {
        let s = ErrorStats::from_errors([1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.median_abs, 2.5);
        assert_eq!(s.mean_abs, 2.5);
        assert_eq!(s.max_abs, 4.0);
        assert_eq!(s.p95_abs, 4.0);
        assert_eq!(s.count, 4);
        assert!(s.median_abs <= s.p95_abs && s.p95_abs <= s.max_abs);
        assert_eq!(ErrorStats::from_errors([]), Err(OracleError::Empty));
        let json: ErrorStats = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(json, s);
    }

    #[test]
    fn single_site_gives_offsets() {
        let site = GlobalIndex::new(1, 2, 3);
        let domain = vec![GlobalIndex::new(1, 2, 3), GlobalIndex::new(4, 6, 3), GlobalIndex::new(-1, 2, 3)];
        assert_eq!(brute_force_esdf(&[site], &domain).unwrap(), vec![0, 25, 4]);
    }

    #[test]
    fn equidistant_sites() {
        let sites = [GlobalIndex::new(-2, 0, 0), GlobalIndex::new(2, 0, 0)];
        assert_eq!(brute_force_esdf(&sites, &[GlobalIndex::zeros()]).unwrap(), vec![4]);
    }

    #[test]
    fn guards() {
        assert_eq!(brute_force_esdf(&[], &[GlobalIndex::zeros()]), Err(OracleError::NoSites));
        let big = vec![GlobalIndex::zeros(); MAX_ORACLE_VOXELS + 1];
        assert_eq!(
            brute_force_esdf(&[GlobalIndex::zeros()], &big),
            Err(OracleError::DomainTooLarge(MAX_ORACLE_VOXELS + 1))
        );
    }

    #[test]
    fn random_scene_matches_second_implementation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let n = 32;
        let sites: Vec<GlobalIndex> = (0..50)
            .map(|_| GlobalIndex::new(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        let mut domain = Vec::new();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    domain.push(GlobalIndex::new(x, y, z));
                }
            }
        }
        let got = brute_force_esdf(&sites, &domain).unwrap();
        // independent: grow a dense grid of minima site by site in f64
        let mut dense = vec![f64::INFINITY; (n * n * n) as usize];
        for s in &sites {
            for (k, cell) in dense.iter_mut().enumerate() {
                let k = k as i32;
                let (x, y, z) = (k % n, (k / n) % n, k / (n * n));
                let d = ((x - s.x) as f64).powi(2) + ((y - s.y) as f64).powi(2) + ((z - s.z) as f64).powi(2);
                *cell = cell.min(d);
            }
        }
        for (a, b) in got.iter().zip(&dense) {
            assert_eq!(*a as f64, *b);
        }
    }
}

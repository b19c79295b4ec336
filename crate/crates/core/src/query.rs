//! Batched distance and gradient lookups on the ESDF.

use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::esdf::esdf_distance;
use crate::map::{split_global, GlobalIndex, GridIndex, Layer, VoxelBlock};
use crate::voxels::EsdfVoxel;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("the map has no ESDF blocks")]
    EmptyMap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    #[default]
    Trilinear,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryOptions {
    pub interpolation: Interpolation,
    pub gradient: bool,
    /// Same cap the ESDF readout uses for inside voxels, in voxels.
    pub interior_cap_voxels: f64,
}

impl Default for QueryOptions {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::Trilinear,
            gradient: true,
            interior_cap_voxels: 4.0,
        }
    }
}

/// Distance in meters and, when requested, the distance gradient. Both are
/// `None` for points in unobserved space. A gradient is unit length, or zero
/// where the field gives no direction.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QueryResult {
    pub distance: Option<f64>,
    pub gradient: Option<Vector3<f64>>,
}

impl QueryResult {
    pub const UNKNOWN: Self = Self {
        distance: None,
        gradient: None,
    };

    pub fn is_known(&self) -> bool {
        self.distance.is_some()
    }
}

/// Voxel lookups that remember the last block touched.
struct Lookup<'a> {
    layer: &'a Layer<EsdfVoxel>,
    last: Option<(GridIndex, Option<&'a VoxelBlock<EsdfVoxel>>)>,
}

impl<'a> Lookup<'a> {
    fn new(layer: &'a Layer<EsdfVoxel>) -> Self {
        Self { layer, last: None }
    }

    /// Observed voxel at `global`.
    fn get(&mut self, global: &GlobalIndex) -> Option<&'a EsdfVoxel> {
        let (g, v) = split_global(global);
        let block = match self.last {
            Some((cg, b)) if cg == g => b,
            _ => {
                let b = self.layer.get_block(&g);
                self.last = Some((g, b));
                b
            }
        };
        block.map(|b| b.get(v)).filter(|v| v.observed)
    }
}

/// Direction of increasing distance from the voxel's parent: away from the
/// site outside, toward it inside. Zero for sites and voxels at the maximum.
fn parent_direction(v: &EsdfVoxel) -> Vector3<f64> {
    if v.is_site || !v.has_parent() {
        return Vector3::zeros();
    }
    let p = Vector3::new(v.parent[0] as f64, v.parent[1] as f64, v.parent[2] as f64).normalize();
    if v.is_inside {
        p
    } else {
        -p
    }
}

const SNAP: f64 = 1e-9;

fn query_point(lookup: &mut Lookup<'_>, p: &Point3<f64>, opts: &QueryOptions) -> QueryResult {
    if !p.coords.iter().all(|c| c.is_finite()) {
        return QueryResult::UNKNOWN;
    }
    let vs = lookup.layer.voxel_size();
    let cap = opts.interior_cap_voxels;
    let nearest = GlobalIndex::new(
        (p.x / vs).floor() as i32,
        (p.y / vs).floor() as i32,
        (p.z / vs).floor() as i32,
    );
    let Some(center) = lookup.get(&nearest).copied() else {
        return QueryResult::UNKNOWN;
    };
    let nearest_result = || QueryResult {
        distance: esdf_distance(&center, vs, cap),
        gradient: opts.gradient.then(|| parent_direction(&center)),
    };
    if opts.interpolation == Interpolation::Nearest {
        return nearest_result();
    }

    // lower corner of the cell of voxel centers holding p
    let mut base = [0i32; 3];
    let mut frac = [0f64; 3];
    for i in 0..3 {
        let s = p[i] / vs - 0.5;
        let mut b = s.floor();
        let mut f = s - b;
        if f > 1.0 - SNAP {
            b += 1.0;
            f = 0.0;
        } else if f < SNAP {
            f = 0.0;
        }
        base[i] = b as i32;
        frac[i] = f;
    }
    let mut corners = [0f64; 8];
    let mut any_at_max = false;
    for (k, c) in corners.iter_mut().enumerate() {
        let idx = GlobalIndex::new(
            base[0] + (k & 1) as i32,
            base[1] + ((k >> 1) & 1) as i32,
            base[2] + ((k >> 2) & 1) as i32,
        );
        let Some(v) = lookup.get(&idx) else {
            return nearest_result();
        };
        any_at_max |= v.is_at_max();
        *c = esdf_distance(v, vs, cap).expect("observed");
    }
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let [u, v, w] = frac;
    // corners[k] with k = x + 2y + 4z
    let c = |x: usize, y: usize, z: usize| corners[x + 2 * y + 4 * z];
    let distance = lerp(
        lerp(lerp(c(0, 0, 0), c(1, 0, 0), u), lerp(c(0, 1, 0), c(1, 1, 0), u), v),
        lerp(lerp(c(0, 0, 1), c(1, 0, 1), u), lerp(c(0, 1, 1), c(1, 1, 1), u), v),
        w,
    );
    let gradient = opts.gradient.then(|| {
        let g = Vector3::new(
            lerp(lerp(c(1, 0, 0) - c(0, 0, 0), c(1, 1, 0) - c(0, 1, 0), v), lerp(c(1, 0, 1) - c(0, 0, 1), c(1, 1, 1) - c(0, 1, 1), v), w),
            lerp(lerp(c(0, 1, 0) - c(0, 0, 0), c(1, 1, 0) - c(1, 0, 0), u), lerp(c(0, 1, 1) - c(0, 0, 1), c(1, 1, 1) - c(1, 0, 1), u), w),
            lerp(lerp(c(0, 0, 1) - c(0, 0, 0), c(1, 0, 1) - c(1, 0, 0), u), lerp(c(0, 1, 1) - c(0, 1, 0), c(1, 1, 1) - c(1, 1, 0), u), v),
        );
        let n = g.norm();
        if any_at_max || !(n > 1e-9) {
            parent_direction(&center)
        } else {
            g / n
        }
    });
    QueryResult {
        distance: Some(distance),
        gradient,
    }
}

const CHUNK: usize = 1024;

/// Looks up every point, in parallel over fixed-size chunks. Results are in
/// input order and do not depend on the chunking.
pub fn query_batch(esdf: &Layer<EsdfVoxel>, points: &[Point3<f64>], opts: &QueryOptions) -> Vec<QueryResult> {
    let mut out = vec![QueryResult::UNKNOWN; points.len()];
    out.par_chunks_mut(CHUNK)
        .zip(points.par_chunks(CHUNK))
        .for_each(|(results, points)| {
            let mut lookup = Lookup::new(esdf);
            for (r, p) in results.iter_mut().zip(points) {
                *r = query_point(&mut lookup, p, opts);
            }
        });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// Gaussian clusters around random allocated blocks.
    Correlated,
    /// Uniform over the map's bounding box.
    Uncorrelated,
}

/// Points drawn per cluster in correlated mode.
const CLUSTER_SIZE: usize = 256;

/// Deterministic query points for a seed.
pub fn sample_points(
    esdf: &Layer<EsdfVoxel>,
    count: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<Point3<f64>>, QueryError> {
    let blocks = esdf.sorted_indices();
    if blocks.is_empty() {
        return Err(QueryError::EmptyMap);
    }
    let bs = esdf.block_size();
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    match mode {
        SampleMode::Correlated => {
            let normal = Normal::new(0.0, 2.0 * bs).expect("positive sigma");
            while points.len() < count {
                let g = blocks[rng.random_range(0..blocks.len())];
                let center = Point3::from(g.first_voxel().cast::<f64>() * esdf.voxel_size())
                    + Vector3::repeat(bs / 2.0);
                for _ in 0..CLUSTER_SIZE.min(count - points.len()) {
                    let d = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                    points.push(center + d);
                }
            }
        }
        SampleMode::Uncorrelated => {
            let mut lo = [i32::MAX; 3];
            let mut hi = [i32::MIN; 3];
            for g in &blocks {
                for i in 0..3 {
                    lo[i] = lo[i].min(g.as_array()[i]);
                    hi[i] = hi[i].max(g.as_array()[i] + 1);
                }
            }
            for _ in 0..count {
                let p: [f64; 3] = std::array::from_fn(|i| rng.random_range(lo[i] as f64 * bs..hi[i] as f64 * bs));
                points.push(Point3::from(p));
            }
        }
    }
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryBenchReport {
    pub count: usize,
    pub seconds: f64,
    pub queries_per_second: f64,
    /// Fraction of points with a known distance.
    pub valid_ratio: f64,
}

/// Times one [`query_batch`] call with gradients on sampled points.
pub fn benchmark_queries(
    esdf: &Layer<EsdfVoxel>,
    count: usize,
    mode: SampleMode,
    seed: u64,
    opts: &QueryOptions,
) -> Result<QueryBenchReport, QueryError> {
    let points = sample_points(esdf, count, mode, seed)?;
    let start = Instant::now();
    let results = query_batch(esdf, &points, opts);
    let seconds = start.elapsed().as_secs_f64();
    let valid = results.iter().filter(|r| r.is_known()).count();
    let (qps, ratio) = if count == 0 {
        (0.0, 0.0)
    } else {
        (count as f64 / seconds.max(1e-9), valid as f64 / count as f64)
    };
    Ok(QueryBenchReport {
        count,
        seconds,
        queries_per_second: qps,
        valid_ratio: ratio,
    })
}

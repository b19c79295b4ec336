//! Exact Euclidean distance transform over a neighbourhood of changed
//! blocks.
//!
//! Each target voxel gets its nearest site within range, ties going to the
//! lexicographically smallest site position. The value depends only on the
//! set of sites, never on the order updates arrive in, so an incrementally
//! maintained field matches one rebuilt from scratch bit for bit.
//!
//! The transform is separable: lower envelopes of parabolas along z, then
//! y, then x. Ties inside each 1-D pass go to the smaller coordinate, which
//! composes into the lexicographic rule on (x, y, z).

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;

use crate::map::{GridIndex, Layer, VoxelIndex, BLOCK_SIZE};
use crate::voxels::EsdfVoxel;

const B: i32 = BLOCK_SIZE as i32;
const INF: i32 = i32::MAX;

/// Target blocks are grouped into cubes of at least this many blocks per
/// side, each transformed independently.
const MIN_CHUNK_BLOCKS: i32 = 4;

/// Counters from one [`exact_transform`] call.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransformReport {
    /// Blocks whose voxels were recomputed.
    pub targets: usize,
    /// Blocks in which some voxel changed.
    pub changed: BTreeSet<GridIndex>,
}

/// Block radius beyond which sites cannot be in range.
pub(crate) fn block_radius(max_sq: i32) -> i32 {
    ((max_sq as f64).sqrt() / B as f64).ceil() as i32
}

/// Lower envelope of the parabolas `(q - p)^2 + f[p]` for finite `f[p]`.
/// Writes `(min value, argmin)` for every `q` in `out_lo..out_lo + out.len()`.
fn envelope_1d(f: &[i32], out_lo: usize, out: &mut [(i32, u32)], v: &mut Vec<usize>, z: &mut Vec<(i64, i64)>) {
    v.clear();
    z.clear();
    // boundary k is the rational z[k].0 / z[k].1; the first is -inf
    for (q, &fq) in f.iter().enumerate() {
        if fq == INF {
            continue;
        }
        if v.is_empty() {
            v.push(q);
            z.push((-1, 0));
            continue;
        }
        loop {
            let p = *v.last().unwrap();
            let num = fq as i64 + (q * q) as i64 - f[p] as i64 - (p * p) as i64;
            let den = 2 * (q - p) as i64;
            let (zn, zd) = *z.last().unwrap();
            // s <= z[k], with z[0] = -inf never popped
            if zd != 0 && num * zd <= zn * den {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push((num, den));
            break;
        }
    }
    if v.is_empty() {
        out.fill((INF, 0));
        return;
    }
    let mut k = 0;
    for (i, slot) in out.iter_mut().enumerate() {
        let q = (out_lo + i) as i64;
        // advance past boundaries strictly below q; at a boundary the
        // smaller position wins
        while k + 1 < v.len() && z[k + 1].0 < q * z[k + 1].1 {
            k += 1;
        }
        let p = v[k];
        let d = q - p as i64;
        // far beyond any usable range; keep it finite
        *slot = ((d * d + f[p] as i64).min(INF as i64 - 1) as i32, p as u32);
    }
}

/// Recomputed voxels of one target block.
type BlockResult = (GridIndex, Vec<EsdfVoxel>);

/// Recomputes every observed non-site voxel in the blocks within range of
/// `seeds`. Voxels with no site closer than `sqrt(max_sq)` go to the
/// maximum with no parent.
pub fn exact_transform(esdf: &mut Layer<EsdfVoxel>, seeds: &BTreeSet<GridIndex>, max_sq: i32) -> TransformReport {
    let mut report = TransformReport::default();
    if seeds.is_empty() || esdf.is_empty() {
        return report;
    }
    let r = block_radius(max_sq);
    // dilate one axis at a time
    let mut grown: HashSet<GridIndex> = seeds.iter().copied().collect();
    for axis in 0..3 {
        let mut next = HashSet::with_capacity(grown.len() * (2 * r as usize + 1));
        for g in &grown {
            for d in -r..=r {
                let mut o = [0; 3];
                o[axis] = d;
                next.insert(g.offset(o[0], o[1], o[2]));
            }
        }
        grown = next;
    }
    let targets: BTreeSet<GridIndex> = grown.into_iter().filter(|g| esdf.contains_block(g)).collect();
    report.targets = targets.len();

    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for (g, _) in esdf.iter() {
        for i in 0..3 {
            lo[i] = lo[i].min(g.as_array()[i]);
            hi[i] = hi[i].max(g.as_array()[i]);
        }
    }
    // chunks shorter than the reach would mostly transform their margins
    let chunk = MIN_CHUNK_BLOCKS.max(2 * r);
    let mut chunks: BTreeMap<[i32; 3], Vec<GridIndex>> = BTreeMap::new();
    for g in targets {
        let key = g.as_array().map(|c| c.div_euclid(chunk));
        chunks.entry(key).or_default().push(g);
    }
    let chunks: Vec<Vec<GridIndex>> = chunks.into_values().collect();
    let layer = &*esdf;
    let results: Vec<BlockResult> = chunks
        .par_iter()
        .flat_map_iter(|targets| transform_chunk(layer, targets, r, lo, hi, max_sq))
        .collect();
    for (g, voxels) in results {
        let block = esdf.get_block_mut(&g).expect("targets are allocated");
        if block.voxels() != voxels.as_slice() {
            block.voxels_mut().copy_from_slice(&voxels);
            report.changed.insert(g);
        }
    }
    report
}

fn transform_chunk(
    layer: &Layer<EsdfVoxel>,
    targets: &[GridIndex],
    r: i32,
    layer_lo: [i32; 3],
    layer_hi: [i32; 3],
    max_sq: i32,
) -> Vec<BlockResult> {
    // block ranges: t = targets, s = sites that can reach them
    let mut t_lo = [i32::MAX; 3];
    let mut t_hi = [i32::MIN; 3];
    for g in targets {
        for i in 0..3 {
            t_lo[i] = t_lo[i].min(g.as_array()[i]);
            t_hi[i] = t_hi[i].max(g.as_array()[i]);
        }
    }
    let s_lo: [i32; 3] = std::array::from_fn(|i| (t_lo[i] - r).max(layer_lo[i]));
    let s_hi: [i32; 3] = std::array::from_fn(|i| (t_hi[i] + r).min(layer_hi[i]));
    // voxel extents
    let n: [usize; 3] = std::array::from_fn(|i| ((s_hi[i] - s_lo[i] + 1) * B) as usize);
    let off: [usize; 3] = std::array::from_fn(|i| ((t_lo[i] - s_lo[i]) * B) as usize);
    let m: [usize; 3] = std::array::from_fn(|i| ((t_hi[i] - t_lo[i] + 1) * B) as usize);

    // site columns along z
    let mut sites = vec![INF; n[0] * n[1] * n[2]];
    let col = |x: usize, y: usize| (x + n[0] * y) * n[2];
    let mut any_site = false;
    for bx in s_lo[0]..=s_hi[0] {
        for by in s_lo[1]..=s_hi[1] {
            for bz in s_lo[2]..=s_hi[2] {
                let g = GridIndex::new(bx, by, bz);
                let Some(block) = layer.get_block(&g) else { continue };
                for (i, v) in block.voxels().iter().enumerate() {
                    if v.is_site {
                        let idx = VoxelIndex::from_linear(i);
                        let x = ((bx - s_lo[0]) * B) as usize + idx.x;
                        let y = ((by - s_lo[1]) * B) as usize + idx.y;
                        let z = ((bz - s_lo[2]) * B) as usize + idx.z;
                        sites[col(x, y) + z] = 0;
                        any_site = true;
                    }
                }
            }
        }
    }

    // pass z: all (x, y), target z range. pz[(x + n0 y) m2 + z]
    let mut v = Vec::new();
    let mut zb = Vec::new();
    let mut gz = vec![(INF, 0u32); if any_site { n[0] * n[1] * m[2] } else { 0 }];
    if any_site {
        for y in 0..n[1] {
            for x in 0..n[0] {
                let c = col(x, y);
                let out = &mut gz[(x + n[0] * y) * m[2]..][..m[2]];
                envelope_1d(&sites[c..c + n[2]], off[2], out, &mut v, &mut zb);
            }
        }
    }
    drop(sites);

    // pass y: all x, target y and z. gy[(x + n0 (y + m1 z))]
    let mut gy = vec![(INF, 0u32); if any_site { n[0] * m[1] * m[2] } else { 0 }];
    if any_site {
        let mut line = vec![INF; n[1]];
        let mut out = vec![(INF, 0u32); m[1]];
        for z in 0..m[2] {
            for x in 0..n[0] {
                for (y, slot) in line.iter_mut().enumerate() {
                    *slot = gz[(x + n[0] * y) * m[2] + z].0;
                }
                envelope_1d(&line, off[1], &mut out, &mut v, &mut zb);
                for (y, o) in out.iter().enumerate() {
                    gy[x + n[0] * (y + m[1] * z)] = *o;
                }
            }
        }
    }

    // pass x over target lines: gx[x + m0 (y + m1 z)]
    let mut gx = vec![(INF, 0u32); m[0] * m[1] * m[2]];
    if any_site {
        let mut line = vec![INF; n[0]];
        for z in 0..m[2] {
            for y in 0..m[1] {
                let row = n[0] * (y + m[1] * z);
                for (x, slot) in line.iter_mut().enumerate() {
                    *slot = gy[x + row].0;
                }
                let out = &mut gx[m[0] * (y + m[1] * z)..][..m[0]];
                envelope_1d(&line, off[0], out, &mut v, &mut zb);
            }
        }
    }

    let mut results = Vec::with_capacity(targets.len());
    for g in targets {
        let mut voxels = layer.get_block(g).unwrap().voxels().to_vec();
        let base: [usize; 3] = std::array::from_fn(|i| ((g.as_array()[i] - t_lo[i]) * B) as usize);
        for (li, voxel) in voxels.iter_mut().enumerate() {
            if !voxel.observed || voxel.is_site {
                continue;
            }
            let idx = VoxelIndex::from_linear(li);
            let (x, y, z) = (base[0] + idx.x, base[1] + idx.y, base[2] + idx.z);
            let (d2, px) = gx[x + m[0] * (y + m[1] * z)];
            if d2 >= max_sq {
                voxel.squared_distance = max_sq;
                voxel.parent = [0; 3];
                continue;
            }
            let px = px as usize;
            let py = gy[px + n[0] * (y + m[1] * z)].1 as usize;
            let pz = gz[(px + n[0] * py) * m[2] + z].1 as usize;
            voxel.squared_distance = d2;
            voxel.parent = [
                px as i32 - (off[0] + x) as i32,
                py as i32 - (off[1] + y) as i32,
                pz as i32 - (off[2] + z) as i32,
            ];
        }
        results.push((*g, voxels));
    }
    results
}

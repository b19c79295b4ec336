//! Lowering distances by parent propagation.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};

use rayon::prelude::*;

use crate::map::{GridIndex, Layer, BLOCK_SIZE};
use crate::voxels::EsdfVoxel;

use super::EsdfConfig;

const B: i32 = BLOCK_SIZE as i32;

/// Lexicographic order on absolute parent positions.
#[inline]
fn cmp_pos(a: [i32; 3], b: [i32; 3]) -> Ordering {
    a.cmp(&b)
}

#[inline]
fn add(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
fn sub(a: [i32; 3], b: [i32; 3]) -> [i32; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn norm_sq(a: [i32; 3]) -> i32 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Absolute position of the site `n` (at `n_pos`) leads to, if any.
#[inline]
fn site_of(n: &EsdfVoxel, n_pos: [i32; 3]) -> Option<[i32; 3]> {
    if !n.observed {
        None
    } else if n.is_site {
        Some(n_pos)
    } else if n.has_parent() {
        Some(add(n_pos, n.parent))
    } else {
        None
    }
}

/// The candidate `v` would take by adopting the site `n` leads to, if it
/// is strictly better under the (squared distance, parent position) order.
#[inline]
fn candidate(
    v: &EsdfVoxel,
    v_pos: [i32; 3],
    n: &EsdfVoxel,
    n_pos: [i32; 3],
    max_sq: i32,
) -> Option<EsdfVoxel> {
    if !v.observed || v.is_site {
        return None;
    }
    let site = site_of(n, n_pos)?;
    let offset = sub(site, v_pos);
    let d2 = norm_sq(offset);
    if d2 >= max_sq {
        return None;
    }
    if v.has_parent() {
        let better = match d2.cmp(&v.squared_distance) {
            Ordering::Less => true,
            Ordering::Equal => cmp_pos(site, add(v_pos, v.parent)) == Ordering::Less,
            Ordering::Greater => false,
        };
        if !better {
            return None;
        }
    }
    Some(EsdfVoxel {
        squared_distance: d2,
        parent: offset,
        ..*v
    })
}

#[inline]
fn lin(x: i32, y: i32, z: i32) -> usize {
    (x + B * y + B * B * z) as usize
}

/// One full round of line sweeps in X+, X-, Y+, Y-, Z+, Z- order. Returns
/// whether any voxel changed.
fn sweep_round(voxels: &mut [EsdfVoxel], origin: [i32; 3], max_sq: i32) -> bool {
    let mut changed = false;
    for axis in 0..3 {
        for forward in [true, false] {
            for a in 0..B {
                for b in 0..B {
                    for s in 1..B {
                        let (cur, prev) = if forward { (s, s - 1) } else { (B - 1 - s, B - s) };
                        let at = |t: i32| -> [i32; 3] {
                            match axis {
                                0 => [t, a, b],
                                1 => [a, t, b],
                                _ => [a, b, t],
                            }
                        };
                        let (pc, pp) = (at(cur), at(prev));
                        let (ic, ip) = (lin(pc[0], pc[1], pc[2]), lin(pp[0], pp[1], pp[2]));
                        if let Some(new) = candidate(
                            &voxels[ic],
                            add(origin, pc),
                            &voxels[ip],
                            add(origin, pp),
                            max_sq,
                        ) {
                            voxels[ic] = new;
                            changed = true;
                        }
                    }
                }
            }
        }
    }
    changed
}

/// Sweeps a block until it stops changing. Returns whether it changed.
pub(crate) fn sweep_block(voxels: &mut [EsdfVoxel], g: GridIndex, max_sq: i32) -> bool {
    let origin = g.first_voxel();
    let origin = [origin.x, origin.y, origin.z];
    let mut changed = false;
    while sweep_round(voxels, origin, max_sq) {
        changed = true;
    }
    changed
}

/// Counters from one [`lower_esdf`] call.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LowerReport {
    /// Blocks in which some voxel was lowered.
    pub changed: BTreeSet<GridIndex>,
    /// Outer sweep/border iterations.
    pub iterations: usize,
}

/// Propagates distances by in-block sweeps and border exchanges, starting
/// from the `dirty` blocks, until nothing can be lowered. A field written
/// by [`update_esdf`](super::update_esdf) is already a fixed point.
pub fn lower_esdf(esdf: &mut Layer<EsdfVoxel>, dirty: &BTreeSet<GridIndex>, cfg: &EsdfConfig) -> LowerReport {
    let max_sq = cfg.max_squared_distance(esdf.voxel_size());
    let mut report = LowerReport::default();
    let mut dirty: HashSet<GridIndex> = dirty
        .iter()
        .filter(|g| esdf.contains_block(g))
        .copied()
        .collect();
    while !dirty.is_empty() {
        report.iterations += 1;
        let swept: Vec<GridIndex> = esdf
            .blocks_mut_among(&dirty)
            .into_par_iter()
            .filter_map(|(g, block)| sweep_block(block.voxels_mut(), g, max_sq).then_some(g))
            .collect();
        report.changed.extend(swept);

        let mut next = HashSet::new();
        for axis in 0..3 {
            let received = exchange_borders(esdf, &dirty, axis, max_sq);
            next.extend(received);
        }
        report.changed.extend(next.iter().copied());
        dirty = next;
    }
    report
}

/// Updates face voxels across all pairs of blocks adjacent along `axis`
/// where at least one block is dirty. Both sides read the state before the
/// exchange. Returns the blocks that received a lower value.
fn exchange_borders(
    esdf: &mut Layer<EsdfVoxel>,
    dirty: &HashSet<GridIndex>,
    axis: usize,
    max_sq: i32,
) -> Vec<GridIndex> {
    let step = |g: GridIndex, d: i32| match axis {
        0 => g.offset(d, 0, 0),
        1 => g.offset(0, d, 0),
        _ => g.offset(0, 0, d),
    };
    let mut pairs: BTreeSet<(GridIndex, GridIndex)> = BTreeSet::new();
    for &g in dirty {
        for (lo, hi) in [(step(g, -1), g), (g, step(g, 1))] {
            if esdf.contains_block(&lo) && esdf.contains_block(&hi) {
                pairs.insert((lo, hi));
            }
        }
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let layer = &*esdf;
    let updates: Vec<(GridIndex, Vec<(usize, EsdfVoxel)>)> = pairs
        .par_iter()
        .flat_map_iter(|(lo, hi)| {
            let a = layer.get_block(lo).unwrap().voxels();
            let b = layer.get_block(hi).unwrap().voxels();
            let oa = lo.first_voxel();
            let ob = hi.first_voxel();
            let (oa, ob) = ([oa.x, oa.y, oa.z], [ob.x, ob.y, ob.z]);
            let mut to_a = Vec::new();
            let mut to_b = Vec::new();
            for s in 0..B {
                for t in 0..B {
                    let face = |k: i32| -> [i32; 3] {
                        match axis {
                            0 => [k, s, t],
                            1 => [s, k, t],
                            _ => [s, t, k],
                        }
                    };
                    let (pa, pb) = (face(B - 1), face(0));
                    let (ia, ib) = (lin(pa[0], pa[1], pa[2]), lin(pb[0], pb[1], pb[2]));
                    let (ga, gb) = (add(oa, pa), add(ob, pb));
                    if let Some(v) = candidate(&a[ia], ga, &b[ib], gb, max_sq) {
                        to_a.push((ia, v));
                    }
                    if let Some(v) = candidate(&b[ib], gb, &a[ia], ga, max_sq) {
                        to_b.push((ib, v));
                    }
                }
            }
            [(*lo, to_a), (*hi, to_b)].into_iter().filter(|(_, u)| !u.is_empty())
        })
        .collect();
    let mut received = Vec::new();
    for (g, list) in updates {
        let block = esdf.get_block_mut(&g).unwrap();
        for (i, v) in list {
            block[i] = v;
        }
        received.push(g);
    }
    received
}

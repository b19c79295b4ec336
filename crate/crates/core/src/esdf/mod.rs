//! Incremental Euclidean signed distance field.
//!
//! Each observed ESDF voxel stores the integer offset to its nearest site
//! (a surface voxel) and the squared length of that offset. An update marks
//! sites from the changed source blocks and recomputes every block within
//! range of a change with an exact distance transform.
//!
//! When two sites are equally far, the one with the lexicographically
//! smaller absolute position wins, so the result does not depend on the
//! order in which updates arrive.

mod lower;
mod sites;
mod transform;

pub use lower::{lower_esdf, LowerReport};
pub use transform::{exact_transform, TransformReport};
pub use sites::{classify_tsdf, mark_sites, SiteClass, SiteSource, MIN_OBSERVED_WEIGHT};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{GlobalIndex, GridIndex, Layer, MapError, VoxelIndex};
use crate::voxels::EsdfVoxel;

#[derive(Debug, Error)]
pub enum EsdfError {
    #[error("ESDF and source layers disagree on voxel size ({0} vs {1})")]
    VoxelSizeMismatch(f64, f64),
    #[error("invalid ESDF config: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsdfConfig {
    /// TSDF voxels with `|distance|` up to this are sites, meters.
    pub site_threshold: f64,
    /// Distances are not propagated beyond this, meters.
    pub max_distance: f64,
    /// Occupancy voxels with log-odds above this are occupied.
    pub occupied_threshold: f32,
    /// Magnitude cap on negative (inside) distances, voxels.
    pub interior_cap_voxels: f64,
}

impl EsdfConfig {
    /// Site band of one voxel, 2 m range.
    pub fn new(voxel_size: f64) -> Self {
        Self {
            site_threshold: voxel_size,
            max_distance: 2.0,
            occupied_threshold: 0.0,
            interior_cap_voxels: 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), EsdfError> {
        if !(self.site_threshold > 0.0) {
            return Err(EsdfError::Config("site_threshold must be positive".into()));
        }
        if !(self.max_distance > self.site_threshold && self.max_distance.is_finite()) {
            return Err(EsdfError::Config("max_distance must exceed site_threshold".into()));
        }
        Ok(())
    }

    /// Stored squared distance of voxels with no site in range.
    pub fn max_squared_distance(&self, voxel_size: f64) -> i32 {
        let r = self.max_distance / voxel_size;
        (r * r).round() as i32
    }
}

/// Block sets passed between the update stages.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EsdfUpdateState {
    /// Blocks with new sites or newly observed voxels.
    pub to_update: BTreeSet<GridIndex>,
    /// Blocks where a site disappeared.
    pub to_clear: BTreeSet<GridIndex>,
    /// Every block modified so far.
    pub changed: BTreeSet<GridIndex>,
}

/// Brings the ESDF up to date with the source after the blocks in
/// `updated` changed. Returns the ESDF blocks that changed.
pub fn update_esdf<S: SiteSource>(
    esdf: &mut Layer<EsdfVoxel>,
    source: &S,
    updated: &BTreeSet<GridIndex>,
    cfg: &EsdfConfig,
) -> Result<BTreeSet<GridIndex>, EsdfError> {
    Ok(update_esdf_report(esdf, source, updated, cfg)?.0)
}

/// [`update_esdf`] plus the transform counters.
pub fn update_esdf_report<S: SiteSource>(
    esdf: &mut Layer<EsdfVoxel>,
    source: &S,
    updated: &BTreeSet<GridIndex>,
    cfg: &EsdfConfig,
) -> Result<(BTreeSet<GridIndex>, TransformReport), EsdfError> {
    cfg.validate()?;
    let state = mark_sites(esdf, source, updated, cfg)?;
    let seeds: BTreeSet<GridIndex> = state.to_update.union(&state.to_clear).copied().collect();
    let report = exact_transform(esdf, &seeds, cfg.max_squared_distance(esdf.voxel_size()));
    let mut changed = state.changed;
    changed.extend(report.changed.iter().copied());
    Ok((changed, report))
}

/// Builds an ESDF from scratch over every block of `source`.
pub fn build_esdf<S: SiteSource>(
    source: &S,
    blocks: &BTreeSet<GridIndex>,
    cfg: &EsdfConfig,
) -> Result<Layer<EsdfVoxel>, EsdfError> {
    let mut esdf = Layer::new(source.voxel_size())?;
    update_esdf(&mut esdf, source, blocks, cfg)?;
    Ok(esdf)
}

/// Signed distance in meters, `None` for unobserved voxels. Inside voxels
/// read out negative, with magnitude capped at `interior_cap_voxels`.
#[inline]
pub fn esdf_distance(voxel: &EsdfVoxel, voxel_size: f64, interior_cap_voxels: f64) -> Option<f64> {
    if !voxel.observed {
        return None;
    }
    if voxel.is_site {
        return Some(0.0);
    }
    let d = (voxel.squared_distance as f64).sqrt();
    Some(if voxel.is_inside {
        -d.min(interior_cap_voxels) * voxel_size
    } else {
        d * voxel_size
    })
}

/// Checks the stored-state invariants over the whole layer: sites have zero
/// distance and parent, every other observed voxel either sits at the
/// maximum or stores exactly the squared length of an offset leading to a
/// site, and no distance exceeds the maximum.
pub fn check_invariants(esdf: &Layer<EsdfVoxel>, cfg: &EsdfConfig) -> Result<(), String> {
    let max_sq = cfg.max_squared_distance(esdf.voxel_size());
    for (g, block) in esdf.iter_sorted() {
        for (i, v) in block.voxels().iter().enumerate() {
            let idx = VoxelIndex::from_linear(i);
            let here = || format!("block {g} voxel {:?}", (idx.x, idx.y, idx.z));
            if !v.observed {
                if *v != EsdfVoxel::default() {
                    return Err(format!("{}: unobserved voxel carries state", here()));
                }
                continue;
            }
            if v.is_site {
                if v.squared_distance != 0 || v.has_parent() {
                    return Err(format!("{}: site with nonzero distance", here()));
                }
                continue;
            }
            if !v.has_parent() {
                if v.squared_distance != max_sq {
                    return Err(format!("{}: orphan not at max", here()));
                }
                continue;
            }
            let p = v.parent;
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] != v.squared_distance {
                return Err(format!("{}: distance does not match parent offset", here()));
            }
            if v.squared_distance >= max_sq {
                return Err(format!("{}: distance beyond max", here()));
            }
            let abs = g.first_voxel()
                + GlobalIndex::new(idx.x as i32, idx.y as i32, idx.z as i32)
                + GlobalIndex::from(p);
            if !esdf.get_voxel(&abs).is_some_and(|s| s.is_site) {
                return Err(format!("{}: parent is not a site", here()));
            }
        }
    }
    Ok(())
}

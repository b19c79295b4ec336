//! Classifying source voxels and marking ESDF sites.

use std::collections::BTreeSet;

use crate::map::{split_global, GlobalIndex, GridIndex, Layer, VoxelIndex, VOXELS_PER_BLOCK};
use crate::voxels::{EsdfVoxel, OccupancyVoxel, TsdfVoxel};

use super::{EsdfConfig, EsdfError, EsdfUpdateState};

/// What a source voxel says about the ESDF voxel at the same place.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteClass {
    Unknown,
    Free,
    /// Occupied side of the surface, away from it.
    Inside,
    /// On the surface: a distance-zero source.
    Site,
}

/// A layer the ESDF can be derived from.
pub trait SiteSource: Sync {
    fn voxel_size(&self) -> f64;
    fn has_block(&self, g: &GridIndex) -> bool;
    /// Whether a voxel's class depends on its face neighbours, so that
    /// blocks adjacent to an updated block must be re-marked too.
    fn depends_on_neighbors(&self) -> bool;
    /// Classes of all 512 voxels of an allocated block.
    fn classify_block(&self, g: &GridIndex, cfg: &EsdfConfig) -> Option<Vec<SiteClass>>;
}

/// Minimum TSDF weight for a voxel to count as observed.
pub const MIN_OBSERVED_WEIGHT: f32 = 1e-4;

#[inline]
pub fn classify_tsdf(voxel: &TsdfVoxel, site_threshold: f32) -> SiteClass {
    if !(voxel.weight >= MIN_OBSERVED_WEIGHT) {
        SiteClass::Unknown
    } else if voxel.distance.abs() <= site_threshold {
        SiteClass::Site
    } else if voxel.distance < 0.0 {
        SiteClass::Inside
    } else {
        SiteClass::Free
    }
}

impl SiteSource for Layer<TsdfVoxel> {
    fn voxel_size(&self) -> f64 {
        Layer::voxel_size(self)
    }

    fn has_block(&self, g: &GridIndex) -> bool {
        self.contains_block(g)
    }

    fn depends_on_neighbors(&self) -> bool {
        false
    }

    fn classify_block(&self, g: &GridIndex, cfg: &EsdfConfig) -> Option<Vec<SiteClass>> {
        let threshold = cfg.site_threshold as f32;
        let block = self.get_block(g)?;
        Some(block.voxels().iter().map(|v| classify_tsdf(v, threshold)).collect())
    }
}

/// `0` is unknown, above the threshold is occupied, anything else free.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum OccState {
    Unknown,
    Free,
    Occupied,
}

#[inline]
fn occ_state(voxel: &OccupancyVoxel, threshold: f32) -> OccState {
    if voxel.log_odds == 0.0 {
        OccState::Unknown
    } else if voxel.log_odds > threshold {
        OccState::Occupied
    } else {
        OccState::Free
    }
}

impl SiteSource for Layer<OccupancyVoxel> {
    fn voxel_size(&self) -> f64 {
        Layer::voxel_size(self)
    }

    fn has_block(&self, g: &GridIndex) -> bool {
        self.contains_block(g)
    }

    fn depends_on_neighbors(&self) -> bool {
        true
    }

    fn classify_block(&self, g: &GridIndex, cfg: &EsdfConfig) -> Option<Vec<SiteClass>> {
        let threshold = cfg.occupied_threshold;
        let block = self.get_block(g)?;
        let origin = g.first_voxel();
        let neighbor_free = |global: GlobalIndex| -> bool {
            let (ng, nv) = split_global(&global);
            let voxel = if ng == *g {
                Some(block.get(nv))
            } else {
                self.get_voxel_in_block(&ng, nv)
            };
            voxel.is_some_and(|v| occ_state(v, threshold) == OccState::Free)
        };
        let mut out = Vec::with_capacity(VOXELS_PER_BLOCK);
        for (i, voxel) in block.voxels().iter().enumerate() {
            let class = match occ_state(voxel, threshold) {
                OccState::Unknown => SiteClass::Unknown,
                OccState::Free => SiteClass::Free,
                OccState::Occupied => {
                    let v = VoxelIndex::from_linear(i);
                    let p = origin + GlobalIndex::new(v.x as i32, v.y as i32, v.z as i32);
                    let touches_free = FACE_OFFSETS
                        .iter()
                        .any(|o| neighbor_free(p + GlobalIndex::new(o[0], o[1], o[2])));
                    if touches_free {
                        SiteClass::Site
                    } else {
                        SiteClass::Inside
                    }
                }
            };
            out.push(class);
        }
        Some(out)
    }
}

pub(crate) const FACE_OFFSETS: [[i32; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Applies a class to an ESDF voxel. Returns `(changed, was_site_removed,
/// needs_lowering)`.
fn apply_class(voxel: &mut EsdfVoxel, class: SiteClass, max_sq: i32) -> (bool, bool, bool) {
    let before = *voxel;
    let mut removed_site = false;
    let mut lower = false;
    match class {
        SiteClass::Unknown => {
            if voxel.observed {
                removed_site = voxel.is_site;
                *voxel = EsdfVoxel::default();
            }
        }
        SiteClass::Site => {
            if !voxel.is_site {
                *voxel = EsdfVoxel {
                    observed: true,
                    is_site: true,
                    is_inside: false,
                    squared_distance: 0,
                    parent: [0; 3],
                };
                lower = true;
            }
        }
        SiteClass::Free | SiteClass::Inside => {
            let inside = class == SiteClass::Inside;
            if !voxel.observed || voxel.is_site {
                removed_site = voxel.is_site;
                *voxel = EsdfVoxel {
                    observed: true,
                    is_site: false,
                    is_inside: inside,
                    squared_distance: max_sq,
                    parent: [0; 3],
                };
                lower = true;
            } else {
                voxel.is_inside = inside;
            }
        }
    }
    (*voxel != before, removed_site, lower)
}

/// Brings ESDF site flags in line with the source for `updated` blocks (and
/// their face neighbours when the source classification needs them),
/// allocating ESDF blocks as needed.
///
/// Newly observed voxels start at the maximum distance and their blocks go
/// to `to_update`, as do blocks gaining sites. Blocks losing a site go to
/// `to_clear`.
pub fn mark_sites<S: SiteSource>(
    esdf: &mut Layer<EsdfVoxel>,
    source: &S,
    updated: &BTreeSet<GridIndex>,
    cfg: &EsdfConfig,
) -> Result<EsdfUpdateState, EsdfError> {
    if esdf.voxel_size() != source.voxel_size() {
        return Err(EsdfError::VoxelSizeMismatch(esdf.voxel_size(), source.voxel_size()));
    }
    let mut blocks: BTreeSet<GridIndex> =
        updated.iter().filter(|g| source.has_block(g)).copied().collect();
    if source.depends_on_neighbors() {
        let extra: Vec<_> = blocks
            .iter()
            .flat_map(|g| g.face_neighbors())
            .filter(|n| source.has_block(n))
            .collect();
        blocks.extend(extra);
    }
    let max_sq = cfg.max_squared_distance(esdf.voxel_size());
    let order: Vec<GridIndex> = blocks.into_iter().collect();
    let classes: Vec<Vec<SiteClass>> = {
        use rayon::prelude::*;
        order
            .par_iter()
            .map(|g| source.classify_block(g, cfg).expect("source block exists"))
            .collect()
    };
    let mut state = EsdfUpdateState::default();
    for (g, classes) in order.iter().zip(classes) {
        let block = esdf.get_or_allocate_block(*g)?;
        for (voxel, class) in block.voxels_mut().iter_mut().zip(classes) {
            let (changed, removed_site, lower) = apply_class(voxel, class, max_sq);
            if changed {
                state.changed.insert(*g);
            }
            if removed_site {
                state.to_clear.insert(*g);
            }
            if lower {
                state.to_update.insert(*g);
            }
        }
    }
    Ok(state)
}

//! Fusing depth and color frames into voxel layers.

mod functors;

pub use functors::{
    color_update, occupancy_update, projective_distance, quantize_log_odds, tsdf_update,
    OccupancyParams, WeightMode, LOG_ODDS_QUANTUM,
};

use std::collections::BTreeSet;

use nalgebra::Isometry3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{voxel_center_position, GridIndex, Layer, MapError, VoxelBlock, VoxelIndex};
use crate::sensor::{
    blocks_in_view, ColorImage, DepthImage, DepthSampler, Pose, SampleMode, SensorError,
    SensorModel, ViewSettings, DEFAULT_GAP_THRESHOLD,
};
use crate::voxels::{ColorVoxel, OccupancyVoxel, TsdfVoxel, Voxel};

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("image is {got:?}, sensor expects {expected:?}")]
    ImageSize {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("color integration needs a TSDF layer")]
    MissingTsdf,
    #[error("invalid integrator config: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Truncation band, meters.
    pub truncation: f64,
    pub max_weight: f32,
    pub weighting: WeightMode,
    /// Voxels deeper than this are not touched, meters.
    pub max_integration_distance: f64,
    pub occupancy: OccupancyParams,
    /// Overrides the sensor's default depth sampling.
    pub sample_mode: Option<SampleMode>,
    pub gap_threshold: f32,
}

impl IntegratorConfig {
    /// Defaults for a voxel size: truncation of four voxels.
    pub fn new(voxel_size: f64) -> Self {
        Self {
            truncation: 4.0 * voxel_size,
            max_weight: 100.0,
            weighting: WeightMode::Constant,
            max_integration_distance: 10.0,
            occupancy: OccupancyParams::default(),
            sample_mode: None,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let o = &self.occupancy;
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            Err(IntegrateError::Config("truncation must be positive".into()))
        } else if !(self.max_weight > 0.0) {
            Err(IntegrateError::Config("max_weight must be positive".into()))
        } else if !(self.max_integration_distance > 0.0) {
            Err(IntegrateError::Config("max_integration_distance must be positive".into()))
        } else if !(o.min < 0.0 && o.max > 0.0) {
            Err(IntegrateError::Config("occupancy clamps must straddle zero".into()))
        } else {
            Ok(())
        }
    }

    fn sampler(&self, sensor: &SensorModel) -> DepthSampler {
        let mut sampler = sensor.default_sampler();
        if let Some(mode) = self.sample_mode {
            sampler.mode = mode;
        }
        sampler.gap_threshold = self.gap_threshold;
        sampler
    }

    fn max_depth(&self, sensor: &SensorModel) -> f64 {
        self.max_integration_distance.min(sensor.max_range())
    }
}

/// A voxel type fused from depth: TSDF or occupancy.
pub trait DepthFusion: Voxel {
    /// New voxel state, or `None` to leave the voxel untouched.
    fn fuse(&self, d_p: f64, measured: f64, cfg: &IntegratorConfig) -> Option<Self>;
}

impl DepthFusion for TsdfVoxel {
    #[inline]
    fn fuse(&self, d_p: f64, measured: f64, cfg: &IntegratorConfig) -> Option<Self> {
        tsdf_update(
            *self,
            d_p,
            cfg.weighting.weight(measured),
            cfg.truncation as f32,
            cfg.max_weight,
        )
    }
}

impl DepthFusion for OccupancyVoxel {
    #[inline]
    fn fuse(&self, d_p: f64, _measured: f64, cfg: &IntegratorConfig) -> Option<Self> {
        occupancy_update(*self, d_p, cfg.truncation, &cfg.occupancy)
    }
}

fn check_frame(
    pose: &Pose,
    sensor: &SensorModel,
    width: usize,
    height: usize,
) -> Result<(), IntegrateError> {
    pose.validate()?;
    sensor.validate()?;
    if (width, height) != (sensor.width(), sensor.height()) {
        return Err(IntegrateError::ImageSize {
            got: (width, height),
            expected: (sensor.width(), sensor.height()),
        });
    }
    Ok(())
}

/// Writes computed blocks back, failing before any mutation if the layer
/// cannot hold the new ones.
fn commit<V: Voxel>(
    layer: &mut Layer<V>,
    updates: Vec<(GridIndex, VoxelBlock<V>)>,
) -> Result<BTreeSet<GridIndex>, IntegrateError> {
    if let Some(capacity) = layer.max_blocks() {
        let new = updates.iter().filter(|(g, _)| !layer.contains_block(g)).count();
        if layer.num_blocks() + new > capacity {
            return Err(MapError::CapacityExhausted { capacity }.into());
        }
    }
    let mut changed = BTreeSet::new();
    for (g, block) in updates {
        layer.insert_block(g, block)?;
        changed.insert(g);
    }
    Ok(changed)
}

/// Fuses one depth frame. Every voxel of every block in view is projected
/// into the image; voxels with a valid depth sample receive the layer's
/// update. Returns exactly the blocks in which some voxel changed; blocks
/// that would stay in the unknown state are not allocated.
pub fn integrate_depth<V: DepthFusion>(
    layer: &mut Layer<V>,
    depth: &DepthImage,
    pose: &Pose,
    sensor: &SensorModel,
    cfg: &IntegratorConfig,
) -> Result<BTreeSet<GridIndex>, IntegrateError> {
    cfg.validate()?;
    check_frame(pose, sensor, depth.width(), depth.height())?;
    let max_depth = cfg.max_depth(sensor);
    let view = ViewSettings::new(cfg.truncation, max_depth);
    let mut candidates: Vec<GridIndex> =
        blocks_in_view(pose, sensor, depth, layer.block_size(), &view)
            .into_iter()
            .collect();
    candidates.sort_unstable();

    let sampler = cfg.sampler(sensor);
    let t_cl = pose.isometry().inverse();
    let voxel_size = layer.voxel_size();
    let (min_range, max_range) = (sensor.min_range(), sensor.max_range());
    let layer_ref = &*layer;
    let updates: Vec<(GridIndex, VoxelBlock<V>)> = candidates
        .par_iter()
        .filter_map(|&g| {
            let mut block = layer_ref.get_block(&g).cloned().unwrap_or_default();
            let mut changed = false;
            for (i, voxel) in block.voxels_mut().iter_mut().enumerate() {
                let p = t_cl * voxel_center_position(g, VoxelIndex::from_linear(i), voxel_size);
                let Ok(ip) = sensor.project(&p) else { continue };
                if !ip.in_view {
                    continue;
                }
                let d_v = sensor.depth_of(&p);
                if !(d_v > 0.0 && d_v <= max_depth) {
                    continue;
                }
                let Some(d) = sampler.sample(depth, ip.u, ip.v) else { continue };
                let d = d as f64;
                if d < min_range || d > max_range {
                    continue;
                }
                if let Some(updated) = voxel.fuse(projective_distance(d, d_v), d, cfg) {
                    if updated != *voxel {
                        *voxel = updated;
                        changed = true;
                    }
                }
            }
            changed.then_some((g, block))
        })
        .collect();
    commit(layer, updates)
}

/// Fuses one color frame into voxels near the TSDF surface: voxels with
/// positive TSDF weight and `|distance| < truncation`. With a depth image,
/// voxels whose depth disagrees with the measurement by more than the
/// truncation are treated as occluded and skipped.
#[allow(clippy::too_many_arguments)]
pub fn integrate_color(
    color_layer: &mut Layer<ColorVoxel>,
    color: &ColorImage,
    pose: &Pose,
    sensor: &SensorModel,
    tsdf: Option<&Layer<TsdfVoxel>>,
    depth: Option<&DepthImage>,
    cfg: &IntegratorConfig,
) -> Result<BTreeSet<GridIndex>, IntegrateError> {
    cfg.validate()?;
    let tsdf = tsdf.ok_or(IntegrateError::MissingTsdf)?;
    if tsdf.voxel_size() != color_layer.voxel_size() {
        return Err(MapError::VoxelSizeMismatch(tsdf.voxel_size(), color_layer.voxel_size()).into());
    }
    check_frame(pose, sensor, color.width(), color.height())?;
    if let Some(depth) = depth {
        check_frame(pose, sensor, depth.width(), depth.height())?;
    }
    let candidates = tsdf.sorted_indices();
    let t_cl: Isometry3<f64> = pose.isometry().inverse();
    let max_depth = cfg.max_depth(sensor);
    let truncation = cfg.truncation as f32;
    let voxel_size = tsdf.voxel_size();
    let sampler = DepthSampler::nearest();
    let layer_ref = &*color_layer;
    let updates: Vec<(GridIndex, VoxelBlock<ColorVoxel>)> = candidates
        .par_iter()
        .filter_map(|&g| {
            let tsdf_block = tsdf.get_block(&g)?;
            let mut block = layer_ref.get_block(&g).cloned().unwrap_or_default();
            let mut changed = false;
            for (i, voxel) in block.voxels_mut().iter_mut().enumerate() {
                let t = tsdf_block[i];
                if !(t.weight > 0.0 && t.distance.abs() < truncation) {
                    continue;
                }
                let p = t_cl * voxel_center_position(g, VoxelIndex::from_linear(i), voxel_size);
                let Ok(ip) = sensor.project(&p) else { continue };
                if !ip.in_view {
                    continue;
                }
                let d_v = sensor.depth_of(&p);
                if !(d_v > 0.0 && d_v <= max_depth) {
                    continue;
                }
                if let Some(depth) = depth {
                    match sampler.sample(depth, ip.u, ip.v) {
                        Some(d) if (d as f64 - d_v).abs() <= cfg.truncation => {}
                        _ => continue,
                    }
                }
                let rgb = color.get(ip.u as usize, ip.v as usize);
                let updated = color_update(*voxel, rgb, cfg.max_weight);
                if updated != *voxel {
                    *voxel = updated;
                    changed = true;
                }
            }
            changed.then_some((g, block))
        })
        .collect();
    commit(color_layer, updates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::CameraIntrinsics;
    use nalgebra::{Point3, Vector3};

    fn camera() -> SensorModel {
        SensorModel::Camera(CameraIntrinsics::new(80.0, 80.0, 40.0, 30.0, 80, 60, 8.0).unwrap())
    }

    fn wall(z: f32) -> DepthImage {
        DepthImage::from_vec(80, 60, vec![z; 80 * 60]).unwrap()
    }

    #[test]
    fn empty_frame_changes_nothing() {
        let mut layer = Layer::<TsdfVoxel>::new(0.1).unwrap();
        let cfg = IntegratorConfig::new(0.1);
        let changed =
            integrate_depth(&mut layer, &DepthImage::new(80, 60), &Pose::identity(), &camera(), &cfg)
                .unwrap();
        assert!(changed.is_empty());
        assert!(layer.is_empty());
    }

    #[test]
    fn wall_zero_crossing_near_surface() {
        let vs = 0.1;
        let mut layer = Layer::<TsdfVoxel>::new(vs).unwrap();
        let cfg = IntegratorConfig::new(vs);
        integrate_depth(&mut layer, &wall(2.0), &Pose::identity(), &camera(), &cfg).unwrap();
        // walk the optical axis column x = y = 0.05
        let mut prev: Option<(f64, f32)> = None;
        let mut crossing = None;
        for k in 0..40 {
            let z = (k as f64 + 0.5) * vs;
            let Some(v) = layer.get_voxel_at_position(&Point3::new(0.05, 0.05, z)) else { continue };
            if v.weight == 0.0 {
                continue;
            }
            if let Some((pz, pd)) = prev {
                if pd > 0.0 && v.distance <= 0.0 {
                    crossing = Some(pz + (z - pz) * pd as f64 / (pd - v.distance) as f64);
                }
            }
            prev = Some((z, v.distance));
        }
        let crossing = crossing.expect("no zero crossing");
        assert!((crossing - 2.0).abs() <= vs, "crossing at {crossing}");
    }

    #[test]
    fn changed_set_is_exact() {
        let vs = 0.1;
        let mut layer = Layer::<TsdfVoxel>::new(vs).unwrap();
        let cfg = IntegratorConfig::new(vs);
        let pose = Pose::look_at(Point3::new(0.2, 0.1, 0.0), Point3::new(0.5, 0.3, 3.0), -Vector3::y());
        let changed = integrate_depth(&mut layer, &wall(1.5), &pose, &camera(), &cfg).unwrap();
        let all: BTreeSet<_> = layer.sorted_indices().into_iter().collect();
        assert_eq!(changed, all);
        for (_, block) in layer.iter() {
            assert!(block.voxels().iter().any(|v| v.weight > 0.0));
        }
        // second frame: blocks that were saturated at +truncation with the
        // same weight still change (weight grows), so compare snapshots
        let before = layer.clone();
        let changed = integrate_depth(&mut layer, &wall(1.5), &pose, &camera(), &cfg).unwrap();
        for g in layer.sorted_indices() {
            let differs = before.get_block(&g).map(|b| b.voxels()) != Some(layer.get_block(&g).unwrap().voxels());
            assert_eq!(differs, changed.contains(&g));
        }
    }

    #[test]
    fn double_integration_doubles_weights() {
        let vs = 0.1;
        let cfg = IntegratorConfig::new(vs);
        let pose = Pose::look_at(Point3::new(0.0, 0.0, 0.0), Point3::new(0.3, 0.1, 2.0), -Vector3::y());
        let mut once = Layer::<TsdfVoxel>::new(vs).unwrap();
        integrate_depth(&mut once, &wall(1.7), &pose, &camera(), &cfg).unwrap();
        let mut twice = once.clone();
        integrate_depth(&mut twice, &wall(1.7), &pose, &camera(), &cfg).unwrap();
        for (g, block) in once.iter() {
            let other = twice.get_block(g).unwrap();
            for (a, b) in block.voxels().iter().zip(other.voxels()) {
                assert_eq!(a.distance.to_bits(), b.distance.to_bits());
                assert_eq!(a.weight * 2.0, b.weight);
            }
        }
    }

    #[test]
    fn no_bleed_through() {
        let vs = 0.1;
        let mut layer = Layer::<TsdfVoxel>::new(vs).unwrap();
        let cfg = IntegratorConfig::new(vs);
        integrate_depth(&mut layer, &wall(1.0), &Pose::identity(), &camera(), &cfg).unwrap();
        for (g, block) in layer.iter() {
            for (i, v) in block.voxels().iter().enumerate() {
                let p = voxel_center_position(*g, VoxelIndex::from_linear(i), vs);
                if p.z > 1.0 + cfg.truncation + 1e-9 {
                    assert_eq!(v.weight, 0.0, "voxel at {p} modified");
                }
            }
        }
    }

    #[test]
    fn occupancy_marks_free_and_occupied() {
        let vs = 0.1;
        let mut layer = Layer::<OccupancyVoxel>::new(vs).unwrap();
        let cfg = IntegratorConfig::new(vs);
        integrate_depth(&mut layer, &wall(2.0), &Pose::identity(), &camera(), &cfg).unwrap();
        let free = layer.get_voxel_at_position(&Point3::new(0.05, 0.05, 1.0)).unwrap();
        assert!(free.log_odds < 0.0);
        let occupied = layer.get_voxel_at_position(&Point3::new(0.05, 0.05, 2.05)).unwrap();
        assert!(occupied.log_odds > 0.0);
    }

    #[test]
    fn color_gating_and_blending() {
        let vs = 0.1;
        let cfg = IntegratorConfig::new(vs);
        let mut tsdf = Layer::<TsdfVoxel>::new(vs).unwrap();
        integrate_depth(&mut tsdf, &wall(2.0), &Pose::identity(), &camera(), &cfg).unwrap();
        let mut color = Layer::<ColorVoxel>::new(vs).unwrap();
        assert!(matches!(
            integrate_color(&mut color, &ColorImage::new(80, 60), &Pose::identity(), &camera(), None, None, &cfg),
            Err(IntegrateError::MissingTsdf)
        ));
        let red = ColorImage::filled(80, 60, [255, 0, 0]);
        let green = ColorImage::filled(80, 60, [0, 255, 0]);
        integrate_color(&mut color, &red, &Pose::identity(), &camera(), Some(&tsdf), None, &cfg).unwrap();
        integrate_color(&mut color, &green, &Pose::identity(), &camera(), Some(&tsdf), None, &cfg).unwrap();
        let mut colored = 0;
        for (g, block) in color.iter() {
            let t = tsdf.get_block(g).unwrap();
            for (i, c) in block.voxels().iter().enumerate() {
                if c.weight > 0.0 {
                    colored += 1;
                    assert!(t[i].weight > 0.0 && t[i].distance.abs() < cfg.truncation as f32);
                    assert_eq!(c.rgb, [128, 128, 0]);
                }
            }
        }
        assert!(colored > 0);
    }

    #[test]
    fn rejects_bad_frames() {
        let mut layer = Layer::<TsdfVoxel>::new(0.1).unwrap();
        let cfg = IntegratorConfig::new(0.1);
        let err = integrate_depth(&mut layer, &DepthImage::new(10, 10), &Pose::identity(), &camera(), &cfg);
        assert!(matches!(err, Err(IntegrateError::ImageSize { .. })));
        let mut capped = Layer::<TsdfVoxel>::new(0.1).unwrap().with_block_capacity(2);
        let err = integrate_depth(&mut capped, &wall(2.0), &Pose::identity(), &camera(), &cfg);
        assert!(matches!(err, Err(IntegrateError::Map(MapError::CapacityExhausted { .. }))));
        assert!(capped.is_empty());
    }
}

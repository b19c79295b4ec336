use std::collections::HashSet;

use nalgebra::{Point3, Vector3};

use super::{DepthImage, Pose, SensorModel};
use crate::map::GridIndex;

/// Parameters of [`blocks_in_view`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewSettings {
    /// Margin behind each measured depth, meters.
    pub truncation: f64,
    /// Depth beyond which nothing is integrated, meters.
    pub max_integration_distance: f64,
    /// Grow the result by one block in all 26 directions.
    pub dilate: bool,
}

impl ViewSettings {
    pub fn new(truncation: f64, max_integration_distance: f64) -> Self {
        Self {
            truncation,
            max_integration_distance,
            dilate: true,
        }
    }
}

/// Blocks crossed by the segment `from -> to`, in traversal order.
///
/// A block is reported iff the segment overlaps it (as a half-open cube)
/// over a positive length, or contains `from`. When the segment crosses an
/// edge or corner exactly, all axes step together so that blocks touched in
/// a single point are skipped.
pub fn traverse_blocks(from: &Point3<f64>, to: &Point3<f64>, block_size: f64) -> Vec<GridIndex> {
    let start = from.coords / block_size;
    let end = to.coords / block_size;
    let dir = end - start;
    let mut current = [0i32; 3];
    let mut step = [0i32; 3];
    let mut remaining = [0u32; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for i in 0..3 {
        current[i] = start[i].floor() as i32;
        let last = end[i].floor() as i32;
        remaining[i] = last.abs_diff(current[i]);
        if remaining[i] == 0 {
            continue;
        }
        step[i] = (last - current[i]).signum();
        let boundary = if step[i] > 0 {
            current[i] as f64 + 1.0
        } else {
            current[i] as f64
        };
        t_max[i] = (boundary - start[i]) / dir[i];
        t_delta[i] = 1.0 / dir[i].abs();
    }
    let mut out = vec![GridIndex::new(current[0], current[1], current[2])];
    loop {
        let t = (0..3)
            .filter(|&i| remaining[i] > 0)
            .map(|i| t_max[i])
            .fold(f64::INFINITY, f64::min);
        if t == f64::INFINITY {
            break;
        }
        for i in 0..3 {
            if remaining[i] > 0 && t_max[i] == t {
                current[i] += step[i];
                t_max[i] += t_delta[i];
                remaining[i] -= 1;
            }
        }
        out.push(GridIndex::new(current[0], current[1], current[2]));
    }
    out
}

/// Blocks that may contain a voxel the integrator would update for this
/// frame: every block holding a voxel center that projects onto a valid
/// pixel and lies no further than `depth + truncation` (and the maximum
/// integration distance) from the sensor.
///
/// Rays are cast per tile of pixels sized so that neighbouring rays stay
/// within one block of each other up to the maximum range; each ray ends
/// at the largest valid depth in its tile (grown by one pixel) plus the
/// truncation margin.
pub fn blocks_in_view(
    pose: &Pose,
    sensor: &SensorModel,
    depth: &DepthImage,
    block_size: f64,
    settings: &ViewSettings,
) -> HashSet<GridIndex> {
    let mut blocks = HashSet::new();
    let (w, h) = (depth.width(), depth.height());
    if w == 0 || h == 0 {
        return blocks;
    }
    let range = settings.max_integration_distance + settings.truncation;
    let (alpha, beta) = sensor.angular_resolution();
    let tile_u = std::f64::consts::SQRT_2 * alpha * block_size / range;
    let tile_v = std::f64::consts::SQRT_2 * beta * block_size / range;
    let origin = pose.origin();
    let wrap = sensor.wraps_columns();

    // Tile edges in pixels plus sub-ray count per pixel along that axis.
    let split = |t: f64, n: usize| -> (usize, usize) {
        if t >= 1.0 {
            ((t.floor() as usize).min(n), 1)
        } else {
            (1, (1.0 / t).ceil() as usize)
        }
    };
    let (su, nu) = split(tile_u, w);
    let (sv, nv) = split(tile_v, h);

    let mut v0 = 0;
    while v0 < h {
        let v1 = (v0 + sv).min(h);
        let mut u0 = 0;
        while u0 < w {
            let u1 = (u0 + su).min(w);
            if let Some(d) = tile_max_depth(depth, u0, u1, v0, v1, wrap) {
                let reach = (d as f64 + settings.truncation).min(settings.max_integration_distance);
                if reach > 0.0 {
                    for (u, v) in tile_rays(u0, u1, v0, v1, nu, nv) {
                        let ray: Vector3<f64> = sensor.pixel_ray(u, v);
                        let end = pose.transform_point(&Point3::from(ray * reach));
                        blocks.extend(traverse_blocks(&origin, &end, block_size));
                    }
                }
            }
            u0 = u1;
        }
        v0 = v1;
    }
    if settings.dilate {
        let core: Vec<_> = blocks.iter().copied().collect();
        for g in core {
            blocks.extend(g.all_neighbors());
        }
    }
    blocks
}

fn tile_max_depth(
    depth: &DepthImage,
    u0: usize,
    u1: usize,
    v0: usize,
    v1: usize,
    wrap: bool,
) -> Option<f32> {
    let (w, h) = (depth.width() as i64, depth.height() as i64);
    let mut best: Option<f32> = None;
    for y in (v0 as i64 - 1).max(0)..(v1 as i64 + 1).min(h) {
        for x in u0 as i64 - 1..u1 as i64 + 1 {
            let x = if wrap {
                x.rem_euclid(w)
            } else if x < 0 || x >= w {
                continue;
            } else {
                x
            };
            if let Some(d) = depth.valid(x as usize, y as usize) {
                best = Some(best.map_or(d, |b| b.max(d)));
            }
        }
    }
    best
}

fn tile_rays(
    u0: usize,
    u1: usize,
    v0: usize,
    v1: usize,
    nu: usize,
    nv: usize,
) -> impl Iterator<Item = (f64, f64)> {
    let us: Vec<f64> = if nu == 1 {
        vec![(u0 + u1) as f64 / 2.0]
    } else {
        (0..nu).map(|k| u0 as f64 + (k as f64 + 0.5) / nu as f64).collect()
    };
    let vs: Vec<f64> = if nv == 1 {
        vec![(v0 + v1) as f64 / 2.0]
    } else {
        (0..nv).map(|k| v0 as f64 + (k as f64 + 0.5) / nv as f64).collect()
    };
    vs.into_iter()
        .flat_map(move |v| us.clone().into_iter().map(move |u| (u, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{position_to_block, VoxelIndex};
    use crate::sensor::{CameraIntrinsics, LidarIntrinsics};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Blocks overlapping the segment over a positive length, by slab test
    /// against every block in the bounding box.
    fn slab_oracle(a: &Point3<f64>, b: &Point3<f64>, bs: f64) -> HashSet<GridIndex> {
        let lo = position_to_block(&Point3::from(a.coords.inf(&b.coords)), bs);
        let hi = position_to_block(&Point3::from(a.coords.sup(&b.coords)), bs);
        let mut out = HashSet::new();
        out.insert(position_to_block(a, bs));
        for x in lo.x..=hi.x {
            for y in lo.y..=hi.y {
                for z in lo.z..=hi.z {
                    let g = [x, y, z];
                    let (mut t0, mut t1) = (0.0f64, 1.0f64);
                    for i in 0..3 {
                        let min = g[i] as f64 * bs;
                        let max = min + bs;
                        let d = b[i] - a[i];
                        if d == 0.0 {
                            if !(a[i] >= min && a[i] < max) {
                                t1 = -1.0;
                            }
                        } else {
                            let (ta, tb) = ((min - a[i]) / d, (max - a[i]) / d);
                            t0 = t0.max(ta.min(tb));
                            t1 = t1.min(ta.max(tb));
                        }
                    }
                    if t1 > t0 {
                        out.insert(GridIndex::new(x, y, z));
                    }
                }
            }
        }
        out
    }

    fn camera() -> SensorModel {
        SensorModel::Camera(CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 10.0).unwrap())
    }

    #[test]
    fn axis_ray_matches_oracle() {
        let mut depth = DepthImage::new(640, 480);
        depth.set(320, 240, 1.0);
        let settings = ViewSettings {
            truncation: 0.15,
            max_integration_distance: 5.0,
            dilate: false,
        };
        let got = blocks_in_view(&Pose::identity(), &camera(), &depth, 0.4, &settings);
        // tiles are floor(sqrt2 * 500 * 0.4 / 5.15) = 54 pixels wide; pixel
        // (320, 240) falls in the tile spanning [270, 324) x [216, 270)
        let ray = camera().pixel_ray(297.0, 243.0);
        let expected = slab_oracle(&Point3::origin(), &Point3::from(ray * 1.15), 0.4);
        assert_eq!(got, expected);
        assert!(got.contains(&GridIndex::new(-1, 0, 2)));
    }

    #[test]
    fn axis_segment_traversal() {
        let blocks = traverse_blocks(&Point3::origin(), &Point3::new(0.0, 0.0, 1.15), 0.4);
        assert_eq!(
            blocks,
            vec![GridIndex::new(0, 0, 0), GridIndex::new(0, 0, 1), GridIndex::new(0, 0, 2)]
        );
    }

    #[test]
    fn diagonal_through_corner_skips_point_contacts() {
        let blocks = traverse_blocks(&Point3::new(0.5, 0.5, 0.5), &Point3::new(2.5, 2.5, 0.5), 1.0);
        assert_eq!(
            blocks,
            vec![GridIndex::new(0, 0, 0), GridIndex::new(1, 1, 0), GridIndex::new(2, 2, 0)]
        );
    }

    #[test]
    fn empty_image_sees_nothing() {
        let depth = DepthImage::new(640, 480);
        let settings = ViewSettings::new(0.2, 5.0);
        assert!(blocks_in_view(&Pose::identity(), &camera(), &depth, 0.4, &settings).is_empty());
    }

    proptest! {
        #[test]
        fn traversal_matches_slab_oracle(
            a in prop::array::uniform3(-3.0f64..3.0),
            b in prop::array::uniform3(-3.0f64..3.0),
            bs in 0.1f64..1.0,
        ) {
            let (a, b) = (Point3::from(a), Point3::from(b));
            let got = traverse_blocks(&a, &b, bs);
            let set: HashSet<_> = got.iter().copied().collect();
            prop_assert_eq!(set.len(), got.len());
            prop_assert_eq!(set, slab_oracle(&a, &b, bs));
            prop_assert_eq!(*got.last().unwrap(), position_to_block(&b, bs));
        }
    }

    /// Brute force: every voxel center within range that projects onto a
    /// valid pixel and is no deeper than that pixel's depth plus truncation.
    fn assert_superset(pose: &Pose, sensor: &SensorModel, depth: &DepthImage, vs: f64, settings: &ViewSettings) {
        let bs = vs * 8.0;
        let got = blocks_in_view(pose, sensor, depth, bs, settings);
        let sampler = sensor.default_sampler();
        let r = settings.max_integration_distance;
        let lo = position_to_block(&(pose.origin() - Vector3::repeat(r)), bs);
        let hi = position_to_block(&(pose.origin() + Vector3::repeat(r)), bs);
        assert!(!got.is_empty());
        for x in lo.x..=hi.x {
            for y in lo.y..=hi.y {
                for z in lo.z..=hi.z {
                    let g = GridIndex::new(x, y, z);
                    if got.contains(&g) {
                        continue;
                    }
                    for v in VoxelIndex::all() {
                        let p = crate::map::voxel_center_position(g, v, vs);
                        let pc = pose.inverse_transform_point(&p);
                        let Ok(ip) = sensor.project(&pc) else { continue };
                        if !ip.in_view {
                            continue;
                        }
                        let dv = sensor.depth_of(&pc);
                        if dv > r {
                            continue;
                        }
                        if let Some(d) = sampler.sample(depth, ip.u, ip.v) {
                            assert!(
                                dv > d as f64 + settings.truncation,
                                "missed block {g} (voxel depth {dv}, measured {d})"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn camera_view_is_superset() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let sensor = SensorModel::Camera(CameraIntrinsics::new(60.0, 60.0, 40.0, 30.0, 80, 60, 5.0).unwrap());
        for _ in 0..3 {
            let mut depth = DepthImage::new(80, 60);
            for y in 0..60 {
                for x in 0..80 {
                    if rng.random_bool(0.7) {
                        depth.set(x, y, rng.random_range(0.3..3.5));
                    }
                }
            }
            let pose = Pose::look_at(
                Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3),
                Point3::new(3.0, rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)),
                Vector3::z(),
            );
            assert_superset(&pose, &sensor, &depth, 0.1, &ViewSettings::new(0.3, 3.0));
        }
    }

    #[test]
    fn lidar_view_is_superset() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        let intr = LidarIntrinsics::new(
            90,
            8,
            -std::f64::consts::PI,
            1.3,
            std::f64::consts::TAU,
            0.6,
            0.1,
            10.0,
        )
        .unwrap();
        let sensor = SensorModel::Lidar(intr);
        let mut depth = DepthImage::new(90, 8);
        for y in 0..8 {
            for x in 0..90 {
                if rng.random_bool(0.8) {
                    depth.set(x, y, rng.random_range(0.5..2.5));
                }
            }
        }
        let pose = Pose::from_translation(Vector3::new(0.13, -0.4, 0.2));
        assert_superset(&pose, &sensor, &depth, 0.1, &ViewSettings::new(0.3, 2.5));
    }
}

//! Scripted sensor paths through the named scenes.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

use super::Scene;
use crate::sensor::Pose;

/// Camera looking at `target`, or for a LiDAR an upright sensor at `eye`
/// turned toward it.
fn aim(eye: Point3<f64>, target: Point3<f64>, lidar: bool) -> Pose {
    if lidar {
        let d = target - eye;
        let yaw = d.y.atan2(d.x);
        let r: Matrix3<f64> = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).into_inner();
        Pose::from_rotation_translation(r, eye.coords).expect("rotation")
    } else {
        Pose::look_at(eye, target, Vector3::z())
    }
}

/// `frames` poses along a path suited to the scene: an orbit around the
/// sphere, a slow circle inside the room looking at the walls, or a walk
/// down the corridor. Other scenes get an orbit around their bounds.
pub fn scripted_poses(scene: &Scene, lidar: bool, frames: usize) -> Vec<Pose> {
    let n = frames.max(1) as f64;
    (0..frames)
        .map(|k| {
            let s = k as f64 / n;
            let theta = TAU * s;
            let (c, si) = (theta.cos(), theta.sin());
            match scene.name.as_str() {
                "sphere_in_box" => aim(
                    Point3::new(1.1 * c, 1.1 * si, 0.35),
                    Point3::new(0.0, 0.0, 0.0),
                    lidar,
                ),
                "room" => aim(
                    Point3::new(0.3 + 0.6 * c, -0.1 + 0.6 * si, 1.4),
                    Point3::new(2.5 * (theta + 0.4).cos(), 2.0 * (theta + 0.4).sin(), 0.8),
                    lidar,
                ),
                "corridor" => {
                    let x = -4.0 + 8.0 * s;
                    let yaw = 0.5 * (3.0 * theta).sin();
                    aim(
                        Point3::new(x, 0.0, 1.2),
                        Point3::new(x + yaw.cos(), yaw.sin(), 1.0),
                        lidar,
                    )
                }
                _ => {
                    let b = &scene.bounds;
                    let center = Point3::new(
                        (b.min[0] + b.max[0]) / 2.0,
                        (b.min[1] + b.max[1]) / 2.0,
                        (b.min[2] + b.max[2]) / 2.0,
                    );
                    let r = 0.25 * (b.max[0] - b.min[0]).min(b.max[1] - b.min[1]);
                    aim(center + Vector3::new(r * c, r * si, 0.0), center, lidar)
                }
            }
        })
        .collect()
}

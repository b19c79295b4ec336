use nalgebra::{Point3, Vector3};

use super::Scene;
use crate::sensor::{ColorImage, DepthImage, Pose, SensorModel};

/// The tracer stops once the SDF drops below this, meters.
pub const HIT_THRESHOLD: f64 = 1e-4;

const MAX_STEPS: usize = 1024;

/// Distance along the unit ray `dir` from `origin` to the first surface,
/// or `None` if nothing is hit within `max_t`.
///
/// The hit found by sphere tracing is polished with a few Newton steps on
/// the SDF along the ray, which makes planar hits exact.
pub fn trace_ray(scene: &Scene, origin: &Point3<f64>, dir: &Vector3<f64>, max_t: f64) -> Option<f64> {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let d = scene.sdf(&(origin + dir * t));
        if d < HIT_THRESHOLD {
            return Some(refine(scene, origin, dir, t));
        }
        t += d;
        if t > max_t {
            return None;
        }
    }
    None
}

fn refine(scene: &Scene, origin: &Point3<f64>, dir: &Vector3<f64>, mut t: f64) -> f64 {
    for _ in 0..4 {
        let (_, d, g) = scene.closest(&(origin + dir * t));
        let slope = g.dot(dir);
        if slope.abs() < 1e-3 || d == 0.0 {
            break;
        }
        let step = d / slope;
        if step.abs() > 2.0 * HIT_THRESHOLD {
            break;
        }
        t -= step;
    }
    t
}

/// Ground-truth depth image: camera pixels hold z-depth, LiDAR pixels hold
/// range. Misses and hits beyond the sensor's range are invalid (0).
pub fn render_depth(scene: &Scene, pose: &Pose, sensor: &SensorModel) -> DepthImage {
    let (w, h) = (sensor.width(), sensor.height());
    let origin = pose.origin();
    let mut data = vec![0.0f32; w * h];
    use rayon::prelude::*;
    data.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, out) in row.iter_mut().enumerate() {
            let ray = sensor.pixel_ray(i as f64 + 0.5, j as f64 + 0.5);
            let scale = ray.norm();
            let dir = pose.transform_vector(&(ray / scale));
            let max_t = sensor.max_range() * scale;
            if let Some(t) = trace_ray(scene, &origin, &dir, max_t) {
                let depth = t / scale;
                if depth >= sensor.min_range() && depth <= sensor.max_range() && depth > 0.0 {
                    *out = depth as f32;
                }
            }
        }
    });
    DepthImage::from_vec(w, h, data).expect("rendered depths are valid")
}

/// Color of the primitive hit by each pixel ray; black on a miss.
pub fn render_color(scene: &Scene, pose: &Pose, sensor: &SensorModel) -> ColorImage {
    let (w, h) = (sensor.width(), sensor.height());
    let origin = pose.origin();
    let mut data = vec![[0u8; 3]; w * h];
    use rayon::prelude::*;
    data.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, out) in row.iter_mut().enumerate() {
            let ray = sensor.pixel_ray(i as f64 + 0.5, j as f64 + 0.5);
            let scale = ray.norm();
            let dir = pose.transform_vector(&(ray / scale));
            if let Some(t) = trace_ray(scene, &origin, &dir, sensor.max_range() * scale) {
                *out = scene.color(&(origin + dir * t));
            }
        }
    });
    ColorImage::from_vec(w, h, data).expect("sizes match")
}

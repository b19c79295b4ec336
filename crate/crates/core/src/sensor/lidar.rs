use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ImagePoint, ProjectionError, SensorError};

/// Spinning LiDAR modelled as a range image: columns are azimuth steps,
/// rows are beams ordered by increasing polar angle (angle from +z).
///
/// `u = wrap(atan2(y, x) - azimuth_start) * alpha` and
/// `v = (acos(z / r) - polar_start) * beta`, with `alpha` and `beta` in
/// pixels per radian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarIntrinsics {
    pub num_azimuth: usize,
    pub num_elevation: usize,
    /// Radians.
    pub azimuth_start: f64,
    /// Smallest polar angle covered, radians.
    pub polar_start: f64,
    pub azimuth_fov: f64,
    pub elevation_fov: f64,
    pub min_range: f64,
    pub max_range: f64,
}

impl LidarIntrinsics {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_azimuth: usize,
        num_elevation: usize,
        azimuth_start: f64,
        polar_start: f64,
        azimuth_fov: f64,
        elevation_fov: f64,
        min_range: f64,
        max_range: f64,
    ) -> Result<Self, SensorError> {
        let intrinsics = Self {
            num_azimuth,
            num_elevation,
            azimuth_start,
            polar_start,
            azimuth_fov,
            elevation_fov,
            min_range,
            max_range,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.num_azimuth == 0 || self.num_elevation == 0 {
            return Err(SensorError::InvalidIntrinsics("beam counts must be nonzero".into()));
        }
        let alpha = self.alpha();
        let beta = self.beta();
        if !(alpha.is_finite() && alpha > 0.0 && beta.is_finite() && beta > 0.0) {
            return Err(SensorError::InvalidIntrinsics(
                "angular resolution must be finite and positive".into(),
            ));
        }
        if self.azimuth_fov > TAU + 1e-9 {
            return Err(SensorError::InvalidIntrinsics("azimuth fov exceeds a full turn".into()));
        }
        if !(self.min_range >= 0.0 && self.max_range > self.min_range) {
            return Err(SensorError::InvalidIntrinsics("invalid range limits".into()));
        }
        Ok(())
    }

    /// Azimuth pixels per radian.
    #[inline]
    pub fn alpha(&self) -> f64 {
        self.num_azimuth as f64 / self.azimuth_fov
    }

    /// Beam pixels per radian.
    #[inline]
    pub fn beta(&self) -> f64 {
        self.num_elevation as f64 / self.elevation_fov
    }

    /// Whether the columns wrap around a full turn.
    pub fn is_full_turn(&self) -> bool {
        (self.azimuth_fov - TAU).abs() < 1e-9
    }

    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Result<ImagePoint, ProjectionError> {
        let r = p.coords.norm();
        if !(r > 0.0) {
            return Err(ProjectionError::ZeroRange);
        }
        let azimuth = p.y.atan2(p.x);
        let mut u = (azimuth - self.azimuth_start).rem_euclid(TAU) * self.alpha();
        let width = self.num_azimuth as f64;
        if self.is_full_turn() && u >= width {
            u -= width;
        }
        let polar = (p.z / r).clamp(-1.0, 1.0).acos();
        let v = (polar - self.polar_start) * self.beta();
        let in_view = u >= 0.0 && u < width && v >= 0.0 && v < self.num_elevation as f64;
        Ok(ImagePoint { u, v, in_view })
    }

    /// Unit direction of the ray through image coordinates `(u, v)`.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let azimuth = self.azimuth_start + u / self.alpha();
        let polar = self.polar_start + v / self.beta();
        Vector3::new(
            polar.sin() * azimuth.cos(),
            polar.sin() * azimuth.sin(),
            polar.cos(),
        )
    }
}

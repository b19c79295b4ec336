use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::{ImagePoint, ProjectionError, SensorError};

/// Pinhole camera intrinsics. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`
/// in image coordinates, so its center is at `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub height: usize,
    /// Meters.
    pub max_depth: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fu: f64,
        fv: f64,
        cu: f64,
        cv: f64,
        width: usize,
        height: usize,
        max_depth: f64,
    ) -> Result<Self, SensorError> {
        let intrinsics = Self {
            fu,
            fv,
            cu,
            cv,
            width,
            height,
            max_depth,
        };
        intrinsics.validate()?;
        Ok(intrinsics)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let finite = [self.fu, self.fv, self.cu, self.cv].iter().all(|x| x.is_finite());
        if !finite || self.fu <= 0.0 || self.fv <= 0.0 {
            return Err(SensorError::InvalidIntrinsics(
                "focal lengths must be finite and positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SensorError::InvalidIntrinsics("image size must be nonzero".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(SensorError::InvalidIntrinsics("max_depth must be positive".into()));
        }
        Ok(())
    }

    /// `u = fu * x / z + cu`, `v = fv * y / z + cv`.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Result<ImagePoint, ProjectionError> {
        if !(p.z > 0.0) {
            return Err(ProjectionError::BehindCamera);
        }
        let u = self.fu * p.x / p.z + self.cu;
        let v = self.fv * p.y / p.z + self.cv;
        let in_view = u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64;
        Ok(ImagePoint { u, v, in_view })
    }

    /// Ray through image coordinates `(u, v)`, scaled to unit depth (z = 1).
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cu) / self.fu, (v - self.cv) / self.fv, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 10.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = intr().project(&Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v), (320.0, 240.0));
        assert!(p.in_view);
    }

    #[test]
    fn off_axis_point() {
        // 500 * 1 / 2 + 320
        let p = intr().project(&Point3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v), (570.0, 240.0));
        assert!(p.in_view);
        let p = intr().project(&Point3::new(3.0, 0.0, 2.0)).unwrap();
        assert!(!p.in_view);
    }

    #[test]
    fn behind_camera_fails() {
        assert_eq!(
            intr().project(&Point3::new(0.0, 0.0, -1.0)),
            Err(ProjectionError::BehindCamera)
        );
        assert_eq!(
            intr().project(&Point3::new(1.0, 0.0, 0.0)),
            Err(ProjectionError::BehindCamera)
        );
    }

    #[test]
    fn rejects_bad_intrinsics() {
        assert!(CameraIntrinsics::new(0.0, 500.0, 1.0, 1.0, 10, 10, 1.0).is_err());
        assert!(CameraIntrinsics::new(500.0, 500.0, 1.0, 1.0, 0, 10, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_scale_invariant(
            x in -3.0f64..3.0, y in -3.0f64..3.0, z in 0.05f64..10.0, s in 0.01f64..100.0,
        ) {
            let p = Point3::new(x, y, z);
            let a = intr().project(&p).unwrap();
            let b = intr().project(&(p * s)).unwrap();
            prop_assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }

        #[test]
        fn ray_reprojects(u in 0.0f64..640.0, v in 0.0f64..480.0, d in 0.1f64..10.0) {
            let p = Point3::from(intr().pixel_ray(u, v) * d);
            let q = intr().project(&p).unwrap();
            prop_assert!((q.u - u).abs() < 1e-9 && (q.v - v).abs() < 1e-9);
        }
    }
}

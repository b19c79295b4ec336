use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};

use super::SensorError;

/// Rigid sensor-to-layer transform `T_LC`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    isometry: Isometry3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            isometry: Isometry3::identity(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            isometry: Isometry3::from_parts(Translation3::from(t), UnitQuaternion::identity()),
        }
    }

    /// Builds a pose from a rotation matrix, which must be orthonormal with
    /// determinant +1 to within 1e-6.
    pub fn from_rotation_translation(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, SensorError> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(SensorError::InvalidPose("non-finite component".into()));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(SensorError::InvalidPose(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        let orthogonality = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orthogonality > 1e-6 {
            return Err(SensorError::InvalidPose(format!(
                "rotation is not orthonormal (error {orthogonality:e})"
            )));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Ok(Self {
            isometry: Isometry3::from_parts(Translation3::from(translation), rotation),
        })
    }

    /// Builds a pose from a translation and an `[x, y, z, w]` quaternion.
    ///
    /// The quaternion is normalized; a norm further than 1e-3 from one is
    /// rejected. Quaternions that are already unit to rounding precision are
    /// stored unchanged so that text round trips are exact.
    pub fn from_quaternion(translation: Vector3<f64>, xyzw: [f64; 4]) -> Result<Self, SensorError> {
        if !translation.iter().chain(xyzw.iter()).all(|x| x.is_finite()) {
            return Err(SensorError::InvalidPose("non-finite component".into()));
        }
        let q = Quaternion::new(xyzw[3], xyzw[0], xyzw[1], xyzw[2]);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(SensorError::InvalidPose(format!(
                "quaternion norm {norm} deviates from 1"
            )));
        }
        let q = if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Self {
            isometry: Isometry3::from_parts(Translation3::from(translation), q),
        })
    }

    /// Camera pose at `eye` looking at `target`, using the optical frame
    /// convention (x right, y down, z forward). `up` is the layer-frame up
    /// direction and must not be parallel to the viewing direction.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::from_rotation_translation(rotation, eye.coords)
            .expect("look_at builds an orthonormal frame")
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.isometry.translation.vector
    }

    /// Sensor origin in the layer frame.
    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.isometry.translation.vector)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.isometry.rotation.to_rotation_matrix().into_inner()
    }

    /// Rotation as `[x, y, z, w]`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.isometry.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.isometry
    }

    pub fn inverse(&self) -> Pose {
        Self {
            isometry: self.isometry.inverse(),
        }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Self {
            isometry: self.isometry * other.isometry,
        }
    }

    /// Sensor frame to layer frame.
    #[inline]
    pub fn transform_point(&self, p_sensor: &Point3<f64>) -> Point3<f64> {
        self.isometry.transform_point(p_sensor)
    }

    /// Layer frame to sensor frame (`T_CL`).
    #[inline]
    pub fn inverse_transform_point(&self, p_layer: &Point3<f64>) -> Point3<f64> {
        self.isometry.inverse_transform_point(p_layer)
    }

    #[inline]
    pub fn transform_vector(&self, v_sensor: &Vector3<f64>) -> Vector3<f64> {
        self.isometry.transform_vector(v_sensor)
    }

    /// Rejects poses with non-finite components.
    pub fn validate(&self) -> Result<(), SensorError> {
        let finite = self.translation().iter().all(|x| x.is_finite())
            && self.quaternion().iter().all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(SensorError::InvalidPose("non-finite component".into()))
        }
    }
}

//! Sensor projection models, depth images and view determination.

mod camera;
mod image;
mod lidar;
mod pose;
mod view;

pub use camera::CameraIntrinsics;
pub use image::{ColorImage, DepthImage, DepthSampler, SampleMode, DEFAULT_GAP_THRESHOLD};
pub use lidar::LidarIntrinsics;
pub use pose::Pose;
pub use view::{blocks_in_view, traverse_blocks, ViewSettings};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("image data has {len} pixels, expected {}x{}", expected.0, expected.1)]
    ImageSize { expected: (usize, usize), len: usize },
    #[error("depth values must be finite and non-negative")]
    InvalidDepth,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key `{0}`")]
    MissingKey(String),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("point coincides with the sensor origin")]
    ZeroRange,
}

/// Continuous image coordinates of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    /// `(u, v)` lies within `[0, width) x [0, height)`.
    pub in_view: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "sensor", rename_all = "lowercase")]
pub enum SensorModel {
    Camera(CameraIntrinsics),
    Lidar(LidarIntrinsics),
}

impl From<CameraIntrinsics> for SensorModel {
    fn from(c: CameraIntrinsics) -> Self {
        SensorModel::Camera(c)
    }
}

impl From<LidarIntrinsics> for SensorModel {
    fn from(l: LidarIntrinsics) -> Self {
        SensorModel::Lidar(l)
    }
}

impl SensorModel {
    /// Sensor used for synthetic datasets. The camera defaults to 640x480
    /// with a 525 px focal length (scaled with the width) and 10 m range;
    /// the LiDAR to a full-turn 1024x32 scan covering 30 degrees above and
    /// below the horizon, 0.3 to 20 m. `width` and `height` are image
    /// columns/rows or azimuth/elevation beams.
    pub fn synthetic(lidar: bool, width: Option<usize>, height: Option<usize>) -> Result<Self, SensorError> {
        use std::f64::consts::{FRAC_PI_3, PI, TAU};
        if lidar {
            let l = LidarIntrinsics::new(
                width.unwrap_or(1024),
                height.unwrap_or(32),
                -PI,
                FRAC_PI_3,
                TAU,
                FRAC_PI_3,
                0.3,
                20.0,
            )?;
            Ok(l.into())
        } else {
            let w = width.unwrap_or(640);
            let h = height.unwrap_or(480);
            let f = 525.0 * w as f64 / 640.0;
            Ok(CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h, 10.0)?.into())
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SensorModel::Camera(_) => "camera",
            SensorModel::Lidar(_) => "lidar",
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        match self {
            SensorModel::Camera(c) => c.validate(),
            SensorModel::Lidar(l) => l.validate(),
        }
    }

    #[inline]
    pub fn project(&self, p_sensor: &Point3<f64>) -> Result<ImagePoint, ProjectionError> {
        match self {
            SensorModel::Camera(c) => c.project(p_sensor),
            SensorModel::Lidar(l) => l.project(p_sensor),
        }
    }

    /// Depth of a sensor-frame point in the units the depth image stores:
    /// z for cameras, range for LiDAR.
    #[inline]
    pub fn depth_of(&self, p_sensor: &Point3<f64>) -> f64 {
        match self {
            SensorModel::Camera(_) => p_sensor.z,
            SensorModel::Lidar(_) => p_sensor.coords.norm(),
        }
    }

    /// Ray through `(u, v)` scaled so that `ray * depth` is the sensor-frame
    /// point observed at that depth.
    #[inline]
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        match self {
            SensorModel::Camera(c) => c.pixel_ray(u, v),
            SensorModel::Lidar(l) => l.pixel_ray(u, v),
        }
    }

    pub fn width(&self) -> usize {
        match self {
            SensorModel::Camera(c) => c.width,
            SensorModel::Lidar(l) => l.num_azimuth,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            SensorModel::Camera(c) => c.height,
            SensorModel::Lidar(l) => l.num_elevation,
        }
    }

    pub fn min_range(&self) -> f64 {
        match self {
            SensorModel::Camera(_) => 0.0,
            SensorModel::Lidar(l) => l.min_range,
        }
    }

    pub fn max_range(&self) -> f64 {
        match self {
            SensorModel::Camera(c) => c.max_depth,
            SensorModel::Lidar(l) => l.max_range,
        }
    }

    /// Pixels per unit of lateral offset at unit depth, horizontally and
    /// vertically.
    pub fn angular_resolution(&self) -> (f64, f64) {
        match self {
            SensorModel::Camera(c) => (c.fu, c.fv),
            SensorModel::Lidar(l) => (l.alpha(), l.beta()),
        }
    }

    pub fn wraps_columns(&self) -> bool {
        matches!(self, SensorModel::Lidar(l) if l.is_full_turn())
    }

    /// Nearest for cameras, foreground-safe linear for LiDAR.
    pub fn default_sampler(&self) -> DepthSampler {
        match self {
            SensorModel::Camera(_) => DepthSampler::nearest(),
            SensorModel::Lidar(_) => DepthSampler {
                wrap_columns: self.wraps_columns(),
                ..DepthSampler::linear()
            },
        }
    }

    /// Parses the `key=value` intrinsics format. Blank lines and lines
    /// starting with `#` are ignored; `sensor` selects `camera` or `lidar`
    /// and defaults to camera.
    pub fn parse(text: &str) -> Result<Self, SensorError> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SensorError::Parse {
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), (n + 1, value.trim().to_string())).is_some() {
                return Err(SensorError::Parse {
                    line: n + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        let sensor = map
            .remove("sensor")
            .map(|(_, v)| v)
            .unwrap_or_else(|| "camera".to_string());
        let mut get = |key: &str| -> Result<(usize, String), SensorError> {
            map.remove(key).ok_or_else(|| SensorError::MissingKey(key.into()))
        };
        fn num<T: std::str::FromStr>(key: &str, (line, value): (usize, String)) -> Result<T, SensorError> {
            value.parse().map_err(|_| SensorError::Parse {
                line,
                message: format!("bad value `{value}` for `{key}`"),
            })
        }
        let model = match sensor.as_str() {
            "camera" => SensorModel::Camera(CameraIntrinsics::new(
                num("fu", get("fu")?)?,
                num("fv", get("fv")?)?,
                num("cu", get("cu")?)?,
                num("cv", get("cv")?)?,
                num("width", get("width")?)?,
                num("height", get("height")?)?,
                num("max_depth", get("max_depth")?)?,
            )?),
            "lidar" => SensorModel::Lidar(LidarIntrinsics::new(
                num("num_azimuth", get("num_azimuth")?)?,
                num("num_elevation", get("num_elevation")?)?,
                num("azimuth_start", get("azimuth_start")?)?,
                num("polar_start", get("polar_start")?)?,
                num("azimuth_fov", get("azimuth_fov")?)?,
                num("elevation_fov", get("elevation_fov")?)?,
                num("min_range", get("min_range")?)?,
                num("max_range", get("max_range")?)?,
            )?),
            other => {
                return Err(SensorError::InvalidIntrinsics(format!("unknown sensor kind `{other}`")))
            }
        };
        if let Some((key, (line, _))) = map.into_iter().next() {
            return Err(SensorError::Parse {
                line,
                message: format!("unknown key `{key}`"),
            });
        }
        Ok(model)
    }

    /// Inverse of [`SensorModel::parse`]. Floats are written in shortest
    /// round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            SensorModel::Camera(c) => {
                let _ = write!(
                    s,
                    "sensor=camera\nfu={:?}\nfv={:?}\ncu={:?}\ncv={:?}\nwidth={}\nheight={}\nmax_depth={:?}\n",
                    c.fu, c.fv, c.cu, c.cv, c.width, c.height, c.max_depth
                );
            }
            SensorModel::Lidar(l) => {
                let _ = write!(
                    s,
                    "sensor=lidar\nnum_azimuth={}\nnum_elevation={}\nazimuth_start={:?}\npolar_start={:?}\nazimuth_fov={:?}\nelevation_fov={:?}\nmin_range={:?}\nmax_range={:?}\n",
                    l.num_azimuth,
                    l.num_elevation,
                    l.azimuth_start,
                    l.polar_start,
                    l.azimuth_fov,
                    l.elevation_fov,
                    l.min_range,
                    l.max_range
                );
            }
        }
        s
    }
}

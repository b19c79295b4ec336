//! Analytic test scenes: signed distance functions built from primitives,
//! with depth/color rendering and scripted sensor trajectories.

mod render;
mod trajectory;

pub use render::{render_color, render_depth, trace_ray, HIT_THRESHOLD};
pub use trajectory::scripted_poses;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown scene `{0}` (expected sphere_in_box, room or corridor)")]
    UnknownScene(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box. A hollow box is a room shell: free inside, solid
    /// outside.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        #[serde(default)]
        hollow: bool,
    },
    /// Solid on the side opposite to `normal`.
    Plane { point: [f64; 3], normal: [f64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_color")]
    pub color: [u8; 3],
}

fn default_color() -> [u8; 3] {
    [200, 200, 200]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub primitives: Vec<Primitive>,
    /// Region of interest for evaluation and sampling.
    pub bounds: Bounds,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

fn box_sdf(p: &Point3<f64>, min: [f64; 3], max: [f64; 3]) -> (f64, Vector3<f64>) {
    let c = (v3(min) + v3(max)) / 2.0;
    let h = (v3(max) - v3(min)) / 2.0;
    let rel = p.coords - c;
    let q = rel.abs() - h;
    let outside = q.sup(&Vector3::zeros());
    let outside_len = outside.norm();
    if outside_len > 0.0 {
        let g = outside.component_mul(&rel.map(|x| if x < 0.0 { -1.0 } else { 1.0 })) / outside_len;
        (outside_len, g)
    } else {
        let axis = q.imax();
        let mut g = Vector3::zeros();
        g[axis] = if rel[axis] < 0.0 { -1.0 } else { 1.0 };
        (q[axis], g)
    }
}

impl Shape {
    /// Signed distance and its gradient.
    pub fn sdf_grad(&self, p: &Point3<f64>) -> (f64, Vector3<f64>) {
        match *self {
            Shape::Sphere { center, radius } => {
                let rel = p.coords - v3(center);
                let n = rel.norm();
                let g = if n > 0.0 { rel / n } else { Vector3::z() };
                (n - radius, g)
            }
            Shape::Box { min, max, hollow } => {
                let (d, g) = box_sdf(p, min, max);
                if hollow {
                    (-d, -g)
                } else {
                    (d, g)
                }
            }
            Shape::Plane { point, normal } => {
                let n = v3(normal).normalize();
                ((p.coords - v3(point)).dot(&n), n)
            }
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let finite = |a: &[f64]| a.iter().all(|x| x.is_finite());
        let ok = match self {
            Shape::Sphere { center, radius } => finite(center) && *radius > 0.0,
            Shape::Box { min, max, .. } => {
                finite(min) && finite(max) && (0..3).all(|i| max[i] > min[i])
            }
            Shape::Plane { point, normal } => {
                finite(point) && finite(normal) && v3(*normal).norm() > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SceneError::Invalid(format!("degenerate primitive {self:?}")))
        }
    }
}

impl Scene {
    pub fn new(name: &str, primitives: Vec<Primitive>, bounds: Bounds) -> Result<Self, SceneError> {
        let scene = Self {
            name: name.to_string(),
            primitives,
            bounds,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() {
            return Err(SceneError::Invalid("scene has no primitives".into()));
        }
        for p in &self.primitives {
            p.shape.validate()?;
        }
        let b = &self.bounds;
        if !(0..3).all(|i| b.min[i].is_finite() && b.max[i].is_finite() && b.max[i] > b.min[i]) {
            return Err(SceneError::Invalid("bounds must be finite and nonempty".into()));
        }
        Ok(())
    }

    /// Distance to the nearest surface, negative inside solids.
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.shape.sdf_grad(p).0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the primitive defining the SDF at `p`, with its value and
    /// gradient.
    pub fn closest(&self, p: &Point3<f64>) -> (usize, f64, Vector3<f64>) {
        let mut best = (0, f64::INFINITY, Vector3::zeros());
        for (i, prim) in self.primitives.iter().enumerate() {
            let (d, g) = prim.shape.sdf_grad(p);
            if d < best.1 {
                best = (i, d, g);
            }
        }
        best
    }

    pub fn gradient(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.closest(p).2
    }

    pub fn color(&self, p: &Point3<f64>) -> [u8; 3] {
        self.primitives[self.closest(p).0].color
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scene: Scene = serde_json::from_str(text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// A single plane through `point`, solid below `normal`.
    pub fn plane(point: [f64; 3], normal: [f64; 3], bounds: Bounds) -> Self {
        Self {
            name: "plane".into(),
            primitives: vec![Primitive {
                shape: Shape::Plane { point, normal },
                color: default_color(),
            }],
            bounds,
        }
    }

    /// Room shell 3 x 3 x 2.5 m around a 0.5 m sphere at the origin.
    pub fn sphere_in_box() -> Self {
        Self {
            name: "sphere_in_box".into(),
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        min: [-1.5, -1.5, -1.0],
                        max: [1.5, 1.5, 1.5],
                        hollow: true,
                    },
                    color: [180, 180, 180],
                },
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.0, 0.0, 0.0],
                        radius: 0.5,
                    },
                    color: [220, 40, 40],
                },
            ],
            bounds: Bounds {
                min: [-1.5, -1.5, -1.0],
                max: [1.5, 1.5, 1.5],
            },
        }
    }

    /// Furnished 5 x 4 x 2.5 m room.
    pub fn room() -> Self {
        let solid = |min: [f64; 3], max: [f64; 3], color: [u8; 3]| Primitive {
            shape: Shape::Box {
                min,
                max,
                hollow: false,
            },
            color,
        };
        Self {
            name: "room".into(),
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        min: [-2.5, -2.0, 0.0],
                        max: [2.5, 2.0, 2.5],
                        hollow: true,
                    },
                    color: [210, 200, 180],
                },
                solid([0.6, -0.6, 0.0], [1.5, 0.4, 0.75], [120, 80, 40]),
                solid([-2.5, 1.2, 0.0], [-1.6, 2.0, 1.9], [60, 90, 140]),
                Primitive {
                    shape: Shape::Sphere {
                        center: [-0.9, -0.8, 0.45],
                        radius: 0.45,
                    },
                    color: [40, 160, 60],
                },
                solid([1.7, 1.3, 0.0], [2.1, 1.7, 2.5], [150, 150, 150]),
            ],
            bounds: Bounds {
                min: [-2.5, -2.0, 0.0],
                max: [2.5, 2.0, 2.5],
            },
        }
    }

    /// 10 m corridor, 2 m wide, with a few obstacles.
    pub fn corridor() -> Self {
        let solid = |min: [f64; 3], max: [f64; 3], color: [u8; 3]| Primitive {
            shape: Shape::Box {
                min,
                max,
                hollow: false,
            },
            color,
        };
        Self {
            name: "corridor".into(),
            primitives: vec![
                Primitive {
                    shape: Shape::Box {
                        min: [-5.0, -1.0, 0.0],
                        max: [5.0, 1.0, 2.5],
                        hollow: true,
                    },
                    color: [200, 200, 210],
                },
                solid([-2.5, 0.4, 0.0], [-2.0, 1.0, 1.2], [130, 60, 60]),
                solid([1.0, -1.0, 0.0], [1.6, -0.5, 0.9], [60, 130, 60]),
                Primitive {
                    shape: Shape::Sphere {
                        center: [3.2, 0.3, 0.4],
                        radius: 0.4,
                    },
                    color: [60, 60, 160],
                },
            ],
            bounds: Bounds {
                min: [-5.0, -1.0, 0.0],
                max: [5.0, 1.0, 2.5],
            },
        }
    }

    pub fn named(name: &str) -> Result<Self, SceneError> {
        match name {
            "sphere_in_box" => Ok(Self::sphere_in_box()),
            "room" => Ok(Self::room()),
            "corridor" => Ok(Self::corridor()),
            other => Err(SceneError::UnknownScene(other.to_string())),
        }
    }
}

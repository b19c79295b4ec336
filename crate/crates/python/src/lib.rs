//! Python module `sdfmap`: synthesize datasets, build maps, query the ESDF.

use std::fs::File;
use std::path::PathBuf;

use nalgebra::Point3;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sdfmap_core::dataset::{load_dataset, save_dataset, synthesize as render_dataset, SCENE_FILE};
use sdfmap_core::esdf::EsdfConfig;
use sdfmap_core::export::EsdfSlice;
use sdfmap_core::map::{snapshot, LayerCake};
use sdfmap_core::mesh::{mesh_all, write_ply, MeshConfig};
use sdfmap_core::oracle::{esdf_error, surface_error, ErrorStats, GroundTruth};
use sdfmap_core::pipeline::{run_dataset, FrameTiming, LayerKind, MapperConfig};
use sdfmap_core::query::{query_batch, Interpolation, QueryOptions};
use sdfmap_core::scene::{scripted_poses, Scene};
use sdfmap_core::sensor::SensorModel;

/// Distance and gradient of one query point.
type QueryRow = (Option<f64>, Option<[f64; 3]>);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// Renders a named scene (`sphere_in_box`, `room`, `corridor`) into a
/// dataset directory, including its `scene.json`.
#[pyfunction]
#[pyo3(signature = (scene, frames, out, sensor = "camera", width = None, height = None, color = true))]
fn synthesize(
    scene: &str,
    frames: usize,
    out: PathBuf,
    sensor: &str,
    width: Option<usize>,
    height: Option<usize>,
    color: bool,
) -> PyResult<()> {
    if frames == 0 {
        return Err(value_err("frames must be at least 1"));
    }
    let lidar = match sensor {
        "camera" => false,
        "lidar" => true,
        other => return Err(value_err(format!("unknown sensor `{other}`"))),
    };
    let scene = Scene::named(scene).map_err(value_err)?;
    let sensor = SensorModel::synthetic(lidar, width, height).map_err(value_err)?;
    let poses = scripted_poses(&scene, lidar, frames);
    let dataset = render_dataset(&scene, &sensor, &poses, color);
    save_dataset(&out, &dataset).map_err(io_err)?;
    std::fs::write(out.join(SCENE_FILE), scene.to_json()).map_err(io_err)
}

fn stats_dict<'py>(py: Python<'py>, s: &ErrorStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("median_abs", s.median_abs)?;
    d.set_item("mean_abs", s.mean_abs)?;
    d.set_item("p95_abs", s.p95_abs)?;
    d.set_item("max_abs", s.max_abs)?;
    d.set_item("rms", s.rms)?;
    d.set_item("count", s.count)?;
    Ok(d)
}

/// A fused map: source layer, optional color, ESDF and mesh.
#[pyclass(name = "Map", module = "sdfmap")]
struct PyMap {
    cake: LayerCake,
    timings: Vec<FrameTiming>,
}

#[pymethods]
impl PyMap {
    /// Replays a dataset directory.
    #[staticmethod]
    #[pyo3(signature = (dataset, voxel_size, layer = "tsdf", color = false, update_every = 4))]
    fn integrate(dataset: PathBuf, voxel_size: f64, layer: &str, color: bool, update_every: usize) -> PyResult<Self> {
        let kind = match layer {
            "tsdf" => LayerKind::Tsdf,
            "occupancy" => LayerKind::Occupancy,
            other => return Err(value_err(format!("unknown layer `{other}`"))),
        };
        let data = load_dataset(&dataset).map_err(io_err)?;
        let mut cfg = MapperConfig::new(voxel_size, kind);
        cfg.color = color;
        cfg.update_every = update_every;
        let (cake, timings) = run_dataset(&data, cfg).map_err(value_err)?;
        Ok(Self { cake, timings })
    }

    /// Reads a VXLF snapshot. The mesh is rebuilt from the TSDF.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let mut cake = snapshot::read_file(&path).map_err(io_err)?;
        if let Some(tsdf) = &cake.tsdf {
            cake.mesh = mesh_all(tsdf, cake.color.as_ref(), &MeshConfig::default());
        }
        Ok(Self {
            cake,
            timings: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        snapshot::write_file(&path, &self.cake).map_err(io_err)
    }

    fn write_ply(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path).map_err(io_err)?;
        write_ply(&self.cake.mesh, f).map_err(io_err)
    }

    /// Writes the ESDF slice at height `z` (map middle when omitted) as CSV
    /// and 16-bit PNG.
    #[pyo3(signature = (csv_path, png_path, z = None))]
    fn write_slice(&self, csv_path: PathBuf, png_path: PathBuf, z: Option<f64>) -> PyResult<()> {
        let slice = EsdfSlice::extract(&self.cake.esdf, z, 4.0).map_err(value_err)?;
        slice.write_csv(File::create(&csv_path).map_err(io_err)?).map_err(io_err)?;
        slice.write_png(&png_path).map_err(io_err)
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.cake.voxel_size()
    }

    #[getter]
    fn num_blocks(&self) -> usize {
        self.cake.esdf.num_blocks()
    }

    #[getter]
    fn num_triangles(&self) -> usize {
        self.cake.mesh.num_triangles()
    }

    /// Per-frame `(frame, tsdf_ms, color_ms, esdf_ms, mesh_ms)`; empty for
    /// loaded maps.
    #[getter]
    fn timings(&self) -> Vec<(usize, f64, f64, f64, f64)> {
        self.timings
            .iter()
            .map(|t| (t.frame, t.tsdf_ms, t.color_ms, t.esdf_ms, t.mesh_ms))
            .collect()
    }

    /// `(distance, gradient)` per point, `None` where unobserved.
    #[pyo3(signature = (points, interpolation = "trilinear"))]
    fn query(
        &self,
        py: Python<'_>,
        points: Vec<[f64; 3]>,
        interpolation: &str,
    ) -> PyResult<Vec<QueryRow>> {
        let interpolation = match interpolation {
            "trilinear" => Interpolation::Trilinear,
            "nearest" => Interpolation::Nearest,
            other => return Err(value_err(format!("unknown interpolation `{other}`"))),
        };
        let opts = QueryOptions {
            interpolation,
            ..QueryOptions::default()
        };
        let pts: Vec<Point3<f64>> = points.into_iter().map(Point3::from).collect();
        let esdf = &self.cake.esdf;
        let results = py.detach(|| query_batch(esdf, &pts, &opts));
        Ok(results
            .into_iter()
            .map(|r| (r.distance, r.gradient.map(|g| [g.x, g.y, g.z])))
            .collect())
    }

    /// Error statistics against a scene file: `{"esdf": ..., "mesh": ...}`,
    /// `mesh` being `None` without a TSDF surface.
    fn evaluate<'py>(&self, py: Python<'py>, scene: PathBuf) -> PyResult<Bound<'py, PyDict>> {
        let scene = Scene::load(&scene).map_err(io_err)?;
        let cfg = EsdfConfig::new(self.cake.voxel_size());
        let esdf = esdf_error(&self.cake.esdf, &GroundTruth::Scene(&scene), &cfg).map_err(value_err)?;
        let out = PyDict::new(py);
        out.set_item("esdf", stats_dict(py, &esdf)?)?;
        match surface_error(&self.cake.mesh, &scene) {
            Ok(m) => out.set_item("mesh", stats_dict(py, &m)?)?,
            Err(_) => out.set_item("mesh", py.None())?,
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Map(voxel_size={}, blocks={}, triangles={})",
            self.cake.voxel_size(),
            self.cake.esdf.num_blocks(),
            self.cake.mesh.num_triangles()
        )
    }
}

#[pymodule]
fn sdfmap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<PyMap>()?;
    Ok(())
}

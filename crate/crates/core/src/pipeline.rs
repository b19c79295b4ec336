//! Frame-by-frame mapping: fuse depth (and color) every frame, bring the
//! ESDF and mesh up to date every few frames.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Frame};
use crate::esdf::{update_esdf, EsdfConfig, EsdfError};
use crate::integrate::{integrate_color, integrate_depth, IntegrateError, IntegratorConfig};
use crate::map::{GridIndex, LayerCake, MapError};
use crate::mesh::{update_mesh, MeshConfig};
use crate::sensor::SensorModel;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frame {frame}: {source}")]
    Integrate { frame: usize, source: IntegrateError },
    #[error(transparent)]
    Esdf(#[from] EsdfError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("invalid mapper config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    #[default]
    Tsdf,
    Occupancy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapperConfig {
    pub voxel_size: f64,
    pub layer: LayerKind,
    /// Fuse color frames; needs the TSDF layer.
    pub color: bool,
    pub integrator: IntegratorConfig,
    pub esdf: EsdfConfig,
    pub mesh: MeshConfig,
    /// ESDF and mesh are updated after every this many frames.
    pub update_every: usize,
}

impl MapperConfig {
    pub fn new(voxel_size: f64, layer: LayerKind) -> Self {
        Self {
            voxel_size,
            layer,
            color: false,
            integrator: IntegratorConfig::new(voxel_size),
            esdf: EsdfConfig::new(voxel_size),
            mesh: MeshConfig::default(),
            update_every: 4,
        }
    }
}

/// Milliseconds spent per stage on one frame; stages that did not run
/// report 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub tsdf_ms: f64,
    pub color_ms: f64,
    pub esdf_ms: f64,
    pub mesh_ms: f64,
}

pub const TIMING_HEADER: &str = "frame,tsdf_ms,color_ms,esdf_ms,mesh_ms";

impl FrameTiming {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.3},{:.3},{:.3},{:.3}",
            self.frame, self.tsdf_ms, self.color_ms, self.esdf_ms, self.mesh_ms
        )
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub struct Mapper {
    cfg: MapperConfig,
    cake: LayerCake,
    pending_esdf: BTreeSet<GridIndex>,
    pending_mesh: BTreeSet<GridIndex>,
    frames: usize,
}

impl Mapper {
    pub fn new(cfg: MapperConfig) -> Result<Self, PipelineError> {
        if cfg.update_every == 0 {
            return Err(PipelineError::Config("update interval must be at least 1".into()));
        }
        cfg.integrator
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.esdf.validate()?;
        let mut cake = LayerCake::new(cfg.voxel_size)?;
        cake = match cfg.layer {
            LayerKind::Tsdf => cake.with_tsdf(),
            LayerKind::Occupancy => cake.with_occupancy(),
        };
        if cfg.color {
            if cfg.layer != LayerKind::Tsdf {
                return Err(PipelineError::Config("color needs the tsdf layer".into()));
            }
            cake = cake.with_color();
        }
        Ok(Self {
            cfg,
            cake,
            pending_esdf: BTreeSet::new(),
            pending_mesh: BTreeSet::new(),
            frames: 0,
        })
    }

    pub fn config(&self) -> &MapperConfig {
        &self.cfg
    }

    pub fn cake(&self) -> &LayerCake {
        &self.cake
    }

    pub fn into_cake(self) -> LayerCake {
        self.cake
    }

    /// Fuses one frame, then updates the ESDF and mesh if this frame
    /// completes an interval.
    pub fn integrate_frame(&mut self, frame: &Frame, sensor: &SensorModel) -> Result<FrameTiming, PipelineError> {
        let index = self.frames;
        let wrap = |source| PipelineError::Integrate { frame: index, source };
        let mut timing = FrameTiming {
            frame: index,
            ..Default::default()
        };
        let cfg = &self.cfg.integrator;

        let start = Instant::now();
        let updated = match self.cfg.layer {
            LayerKind::Tsdf => {
                let layer = self.cake.tsdf.as_mut().expect("tsdf layer");
                integrate_depth(layer, &frame.depth, &frame.pose, sensor, cfg).map_err(wrap)?
            }
            LayerKind::Occupancy => {
                let layer = self.cake.occupancy.as_mut().expect("occupancy layer");
                integrate_depth(layer, &frame.depth, &frame.pose, sensor, cfg).map_err(wrap)?
            }
        };
        timing.tsdf_ms = ms(start);

        if let (Some(color_layer), Some(color)) = (self.cake.color.as_mut(), frame.color.as_ref()) {
            let start = Instant::now();
            let updated_color = integrate_color(
                color_layer,
                color,
                &frame.pose,
                sensor,
                self.cake.tsdf.as_ref(),
                Some(&frame.depth),
                cfg,
            )
            .map_err(wrap)?;
            timing.color_ms = ms(start);
            // vertex colors come from these blocks
            self.pending_mesh.extend(updated_color);
        }

        self.pending_esdf.extend(updated.iter().copied());
        self.pending_mesh.extend(updated);
        self.frames += 1;
        if self.frames.is_multiple_of(self.cfg.update_every) {
            let (esdf_ms, mesh_ms) = self.flush()?;
            timing.esdf_ms = esdf_ms;
            timing.mesh_ms = mesh_ms;
        }
        Ok(timing)
    }

    /// Brings the ESDF and mesh up to date with everything fused so far.
    /// Returns the milliseconds spent on each.
    pub fn flush(&mut self) -> Result<(f64, f64), PipelineError> {
        let start = Instant::now();
        let pending = std::mem::take(&mut self.pending_esdf);
        match self.cfg.layer {
            LayerKind::Tsdf => {
                update_esdf(&mut self.cake.esdf, self.cake.tsdf.as_ref().unwrap(), &pending, &self.cfg.esdf)?;
            }
            LayerKind::Occupancy => {
                update_esdf(
                    &mut self.cake.esdf,
                    self.cake.occupancy.as_ref().unwrap(),
                    &pending,
                    &self.cfg.esdf,
                )?;
            }
        }
        let esdf_ms = ms(start);

        let start = Instant::now();
        let pending = std::mem::take(&mut self.pending_mesh);
        if let Some(tsdf) = self.cake.tsdf.as_ref() {
            update_mesh(&mut self.cake.mesh, tsdf, &pending, self.cake.color.as_ref(), &self.cfg.mesh);
        }
        Ok((esdf_ms, ms(start)))
    }

    /// Whether fused frames are not yet reflected in the ESDF or mesh.
    pub fn has_pending(&self) -> bool {
        !self.pending_esdf.is_empty() || !self.pending_mesh.is_empty()
    }
}

/// Replays a whole dataset. A trailing partial interval is flushed and its
/// cost added to the last frame's timing.
pub fn run_dataset(dataset: &Dataset, cfg: MapperConfig) -> Result<(LayerCake, Vec<FrameTiming>), PipelineError> {
    let mut mapper = Mapper::new(cfg)?;
    let mut timings = Vec::with_capacity(dataset.frames.len());
    for frame in &dataset.frames {
        timings.push(mapper.integrate_frame(frame, &dataset.sensor)?);
    }
    if mapper.has_pending() {
        let (esdf_ms, mesh_ms) = mapper.flush()?;
        if let Some(last) = timings.last_mut() {
            last.esdf_ms += esdf_ms;
            last.mesh_ms += mesh_ms;
        }
    }
    Ok((mapper.into_cake(), timings))
}

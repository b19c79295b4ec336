use super::{Layer, MapError};
use crate::mesh::MeshLayer;
use crate::voxels::{ColorVoxel, EsdfVoxel, OccupancyVoxel, TsdfVoxel};

/// Co-located layers sharing one voxel size and origin: a given
/// [`GridIndex`](super::GridIndex) covers the same volume in each of them.
#[derive(Clone, Debug)]
pub struct LayerCake {
    voxel_size: f64,
    pub tsdf: Option<Layer<TsdfVoxel>>,
    pub occupancy: Option<Layer<OccupancyVoxel>>,
    pub color: Option<Layer<ColorVoxel>>,
    pub esdf: Layer<EsdfVoxel>,
    pub mesh: MeshLayer,
}

impl LayerCake {
    /// An empty cake holding only the ESDF and mesh layers.
    pub fn new(voxel_size: f64) -> Result<Self, MapError> {
        Ok(Self {
            voxel_size,
            tsdf: None,
            occupancy: None,
            color: None,
            esdf: Layer::new(voxel_size)?,
            mesh: MeshLayer::new(voxel_size),
        })
    }

    pub fn with_tsdf(mut self) -> Self {
        self.tsdf = Some(Layer::new(self.voxel_size).expect("validated voxel size"));
        self
    }

    pub fn with_occupancy(mut self) -> Self {
        self.occupancy = Some(Layer::new(self.voxel_size).expect("validated voxel size"));
        self
    }

    pub fn with_color(mut self) -> Self {
        self.color = Some(Layer::new(self.voxel_size).expect("validated voxel size"));
        self
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn block_size(&self) -> f64 {
        self.esdf.block_size()
    }
}

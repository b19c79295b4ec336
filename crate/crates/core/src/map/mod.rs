//! Sparse two-level voxel map.

mod block;
mod cake;
pub mod index;
mod layer;
pub mod snapshot;

pub use block::VoxelBlock;
pub use cake::LayerCake;
pub use index::{
    block_origin, global_center_position, join_global, position_to_block, position_to_global, position_to_indices,
    split_global, voxel_center_position, GlobalIndex, GridIndex, VoxelIndex, BLOCK_SIZE,
    VOXELS_PER_BLOCK,
};
pub use layer::Layer;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
    #[error("block capacity of {capacity} blocks exhausted")]
    CapacityExhausted { capacity: usize },
    #[error("layers disagree on voxel size ({0} vs {1})")]
    VoxelSizeMismatch(f64, f64),
}

use std::collections::{HashMap, HashSet};

use nalgebra::Point3;

use super::block::VoxelBlock;
use super::index::{
    position_to_global, split_global, GlobalIndex, GridIndex, VoxelIndex, BLOCK_SIZE,
};
use super::MapError;
use crate::voxels::Voxel;

/// Sparse voxel grid of one voxel type: a hash from block index to dense
/// block storage.
///
/// A block that is absent has never been observed. Blocks only come into
/// existence through [`Layer::get_or_allocate_block`] or
/// [`Layer::insert_block`].
#[derive(Clone, Debug)]
pub struct Layer<V> {
    voxel_size: f64,
    blocks: HashMap<GridIndex, VoxelBlock<V>>,
    max_blocks: Option<usize>,
}

impl<V: Voxel> Layer<V> {
    pub fn new(voxel_size: f64) -> Result<Self, MapError> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(MapError::InvalidVoxelSize(voxel_size));
        }
        Ok(Self {
            voxel_size,
            blocks: HashMap::new(),
            max_blocks: None,
        })
    }

    /// Limits the number of blocks the layer may hold.
    pub fn with_block_capacity(mut self, max_blocks: usize) -> Self {
        self.max_blocks = Some(max_blocks);
        self
    }

    pub fn max_blocks(&self) -> Option<usize> {
        self.max_blocks
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Edge length of a block in meters.
    pub fn block_size(&self) -> f64 {
        self.voxel_size * BLOCK_SIZE as f64
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains_block(&self, index: &GridIndex) -> bool {
        self.blocks.contains_key(index)
    }

    pub fn get_block(&self, index: &GridIndex) -> Option<&VoxelBlock<V>> {
        self.blocks.get(index)
    }

    pub fn get_block_mut(&mut self, index: &GridIndex) -> Option<&mut VoxelBlock<V>> {
        self.blocks.get_mut(index)
    }

    /// Returns the block at `index`, allocating it in the unknown state if
    /// needed. Calling this twice for the same index allocates once.
    pub fn get_or_allocate_block(
        &mut self,
        index: GridIndex,
    ) -> Result<&mut VoxelBlock<V>, MapError> {
        let len = self.blocks.len();
        match self.blocks.entry(index) {
            std::collections::hash_map::Entry::Occupied(e) => Ok(e.into_mut()),
            std::collections::hash_map::Entry::Vacant(e) => {
                if let Some(capacity) = self.max_blocks {
                    if len >= capacity {
                        return Err(MapError::CapacityExhausted { capacity });
                    }
                }
                Ok(e.insert(VoxelBlock::default()))
            }
        }
    }

    /// Inserts or replaces a block.
    pub fn insert_block(&mut self, index: GridIndex, block: VoxelBlock<V>) -> Result<(), MapError> {
        if let Some(capacity) = self.max_blocks {
            if self.blocks.len() >= capacity && !self.blocks.contains_key(&index) {
                return Err(MapError::CapacityExhausted { capacity });
            }
        }
        self.blocks.insert(index, block);
        Ok(())
    }

    /// Block indices in ascending order.
    pub fn sorted_indices(&self) -> Vec<GridIndex> {
        let mut indices: Vec<_> = self.blocks.keys().copied().collect();
        indices.sort_unstable();
        indices
    }

    /// Blocks in ascending index order.
    pub fn iter_sorted(&self) -> impl Iterator<Item = (GridIndex, &VoxelBlock<V>)> {
        self.sorted_indices()
            .into_iter()
            .map(move |g| (g, &self.blocks[&g]))
    }

    /// Unordered iteration over blocks.
    pub fn iter(&self) -> impl Iterator<Item = (&GridIndex, &VoxelBlock<V>)> {
        self.blocks.iter()
    }

    /// Mutable handles to the allocated blocks among `indices`, sorted by
    /// index. The handles are disjoint so they can be processed in parallel.
    pub fn blocks_mut_among(
        &mut self,
        indices: &HashSet<GridIndex>,
    ) -> Vec<(GridIndex, &mut VoxelBlock<V>)> {
        let mut out: Vec<_> = self
            .blocks
            .iter_mut()
            .filter(|(g, _)| indices.contains(*g))
            .map(|(g, b)| (*g, b))
            .collect();
        out.sort_unstable_by_key(|(g, _)| *g);
        out
    }

    #[inline]
    pub fn get_voxel(&self, global: &GlobalIndex) -> Option<&V> {
        let (block, voxel) = split_global(global);
        self.blocks.get(&block).map(|b| b.get(voxel))
    }

    pub fn get_voxel_mut(&mut self, global: &GlobalIndex) -> Option<&mut V> {
        let (block, voxel) = split_global(global);
        self.blocks.get_mut(&block).map(|b| b.get_mut(voxel))
    }

    /// Voxel containing `p`, if its block is allocated.
    pub fn get_voxel_at_position(&self, p: &Point3<f64>) -> Option<&V> {
        self.get_voxel(&position_to_global(p, self.voxel_size))
    }

    pub fn get_voxel_in_block(&self, block: &GridIndex, voxel: VoxelIndex) -> Option<&V> {
        self.blocks.get(block).map(|b| b.get(voxel))
    }

    /// Total allocated voxels.
    pub fn num_voxels(&self) -> usize {
        self.blocks.len() * super::index::VOXELS_PER_BLOCK
    }
}

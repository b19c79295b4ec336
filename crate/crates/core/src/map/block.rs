use super::index::{VoxelIndex, VOXELS_PER_BLOCK};
use crate::voxels::Voxel;

/// Dense 8x8x8 brick of voxels, the unit of allocation and parallel work.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelBlock<V> {
    voxels: Box<[V]>,
}

impl<V: Voxel> Default for VoxelBlock<V> {
    fn default() -> Self {
        Self {
            voxels: vec![V::default(); VOXELS_PER_BLOCK].into_boxed_slice(),
        }
    }
}

impl<V: Voxel> VoxelBlock<V> {
    /// Panics unless `voxels` holds exactly 512 entries.
    pub fn from_voxels(voxels: Vec<V>) -> Self {
        assert_eq!(voxels.len(), VOXELS_PER_BLOCK);
        Self {
            voxels: voxels.into_boxed_slice(),
        }
    }

    #[inline]
    pub fn get(&self, index: VoxelIndex) -> &V {
        &self.voxels[index.linear()]
    }

    #[inline]
    pub fn get_mut(&mut self, index: VoxelIndex) -> &mut V {
        &mut self.voxels[index.linear()]
    }

    #[inline]
    pub fn voxels(&self) -> &[V] {
        &self.voxels
    }

    #[inline]
    pub fn voxels_mut(&mut self) -> &mut [V] {
        &mut self.voxels
    }
}

impl<V> std::ops::Index<usize> for VoxelBlock<V> {
    type Output = V;

    fn index(&self, i: usize) -> &V {
        &self.voxels[i]
    }
}

impl<V> std::ops::IndexMut<usize> for VoxelBlock<V> {
    fn index_mut(&mut self, i: usize) -> &mut V {
        &mut self.voxels[i]
    }
}

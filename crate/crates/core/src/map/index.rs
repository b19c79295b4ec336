//! Index arithmetic between layer-frame positions, block indices and
//! in-block voxel indices.

use std::fmt;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

/// Voxels along one edge of a [`VoxelBlock`](super::VoxelBlock).
pub const BLOCK_SIZE: usize = 8;
/// Voxels stored in one block.
pub const VOXELS_PER_BLOCK: usize = BLOCK_SIZE * BLOCK_SIZE * BLOCK_SIZE;

const BLOCK_SIZE_I: i32 = BLOCK_SIZE as i32;

/// Integer coordinates of a block in the block grid.
///
/// Ordering is lexicographic on `(x, y, z)` so that sorted iteration over a
/// layer is deterministic.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct GridIndex {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl GridIndex {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn as_array(self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    /// Chebyshev distance in blocks.
    pub fn chebyshev(self, other: Self) -> i32 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    /// The six face-adjacent neighbours, in the order -x, +x, -y, +y, -z, +z.
    pub fn face_neighbors(self) -> [GridIndex; 6] {
        [
            self.offset(-1, 0, 0),
            self.offset(1, 0, 0),
            self.offset(0, -1, 0),
            self.offset(0, 1, 0),
            self.offset(0, 0, -1),
            self.offset(0, 0, 1),
        ]
    }

    /// All 26 blocks sharing a face, edge or corner with this one.
    pub fn all_neighbors(self) -> impl Iterator<Item = GridIndex> {
        (-1..=1).flat_map(move |dz| {
            (-1..=1).flat_map(move |dy| {
                (-1..=1)
                    .filter(move |&dx| (dx, dy, dz) != (0, 0, 0))
                    .map(move |dx| self.offset(dx, dy, dz))
            })
        })
    }

    /// Global index of the first voxel of this block.
    pub fn first_voxel(self) -> GlobalIndex {
        GlobalIndex::new(
            self.x * BLOCK_SIZE_I,
            self.y * BLOCK_SIZE_I,
            self.z * BLOCK_SIZE_I,
        )
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Position of a voxel inside its block; each component is in `[0, 8)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl VoxelIndex {
    /// Panics if a component is outside `[0, 8)`.
    pub fn new(x: usize, y: usize, z: usize) -> Self {
        assert!(
            x < BLOCK_SIZE && y < BLOCK_SIZE && z < BLOCK_SIZE,
            "voxel index ({x}, {y}, {z}) outside block"
        );
        Self { x, y, z }
    }

    /// Row-major position in block storage, x fastest.
    #[inline]
    pub fn linear(self) -> usize {
        self.x + BLOCK_SIZE * (self.y + BLOCK_SIZE * self.z)
    }

    #[inline]
    pub fn from_linear(i: usize) -> Self {
        debug_assert!(i < VOXELS_PER_BLOCK);
        Self {
            x: i % BLOCK_SIZE,
            y: (i / BLOCK_SIZE) % BLOCK_SIZE,
            z: i / (BLOCK_SIZE * BLOCK_SIZE),
        }
    }

    /// Iterates all 512 voxel indices in storage order.
    pub fn all() -> impl Iterator<Item = VoxelIndex> {
        (0..VOXELS_PER_BLOCK).map(Self::from_linear)
    }
}

/// Voxel coordinates on the unbounded global voxel lattice.
pub type GlobalIndex = Vector3<i32>;

/// Splits a global voxel index into its block and in-block parts.
#[inline]
pub fn split_global(global: &GlobalIndex) -> (GridIndex, VoxelIndex) {
    let block = GridIndex::new(
        global.x.div_euclid(BLOCK_SIZE_I),
        global.y.div_euclid(BLOCK_SIZE_I),
        global.z.div_euclid(BLOCK_SIZE_I),
    );
    let voxel = VoxelIndex {
        x: global.x.rem_euclid(BLOCK_SIZE_I) as usize,
        y: global.y.rem_euclid(BLOCK_SIZE_I) as usize,
        z: global.z.rem_euclid(BLOCK_SIZE_I) as usize,
    };
    (block, voxel)
}

#[inline]
pub fn join_global(block: GridIndex, voxel: VoxelIndex) -> GlobalIndex {
    GlobalIndex::new(
        block.x * BLOCK_SIZE_I + voxel.x as i32,
        block.y * BLOCK_SIZE_I + voxel.y as i32,
        block.z * BLOCK_SIZE_I + voxel.z as i32,
    )
}

/// Global voxel index of the voxel whose cube contains `p`.
#[inline]
pub fn position_to_global(p: &Point3<f64>, voxel_size: f64) -> GlobalIndex {
    GlobalIndex::new(
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    )
}

/// Block and voxel index of the voxel containing `p`.
///
/// The voxel lattice is computed first and then split, so the voxel index is
/// always in range even when `p` sits on a block boundary.
pub fn position_to_indices(p: &Point3<f64>, voxel_size: f64) -> (GridIndex, VoxelIndex) {
    split_global(&position_to_global(p, voxel_size))
}

/// Block containing `p`, for a block edge length of `block_size` meters.
#[inline]
pub fn position_to_block(p: &Point3<f64>, block_size: f64) -> GridIndex {
    GridIndex::new(
        (p.x / block_size).floor() as i32,
        (p.y / block_size).floor() as i32,
        (p.z / block_size).floor() as i32,
    )
}

#[inline]
pub fn global_center_position(global: &GlobalIndex, voxel_size: f64) -> Point3<f64> {
    Point3::new(
        (global.x as f64 + 0.5) * voxel_size,
        (global.y as f64 + 0.5) * voxel_size,
        (global.z as f64 + 0.5) * voxel_size,
    )
}

pub fn voxel_center_position(block: GridIndex, voxel: VoxelIndex, voxel_size: f64) -> Point3<f64> {
    global_center_position(&join_global(block, voxel), voxel_size)
}

/// Minimum corner of a block in the layer frame.
pub fn block_origin(block: GridIndex, voxel_size: f64) -> Point3<f64> {
    let edge = voxel_size * BLOCK_SIZE as f64;
    Point3::new(
        block.x as f64 * edge,
        block.y as f64 * edge,
        block.z as f64 * edge,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn origin_maps_to_first_voxel() {
        let (g, v) = position_to_indices(&Point3::new(0.0, 0.0, 0.0), 0.05);
        assert_eq!(g, GridIndex::new(0, 0, 0));
        assert_eq!(v, VoxelIndex::new(0, 0, 0));
    }

    #[test]
    fn negative_boundary_uses_floor() {
        let (g, v) = position_to_indices(&Point3::new(-0.01, 0.0, 0.0), 0.05);
        assert_eq!(g, GridIndex::new(-1, 0, 0));
        assert_eq!(v, VoxelIndex::new(7, 0, 0));
    }

    #[test]
    fn mixed_sign_position() {
        // 0.43 / 0.05 = 8.6 -> voxel 8 = block 1, voxel 0
        // 0.05 / 0.05 = 1 -> block 0, voxel 1
        // -0.40 / 0.05 = -8 -> block -1, voxel 0
        let (g, v) = position_to_indices(&Point3::new(0.43, 0.05, -0.40), 0.05);
        assert_eq!(g, GridIndex::new(1, 0, -1));
        assert_eq!(v, VoxelIndex::new(0, 1, 0));
    }

    #[test]
    fn centers() {
        let c = voxel_center_position(GridIndex::new(0, 0, 0), VoxelIndex::new(0, 0, 0), 0.05);
        assert!((c - Point3::new(0.025, 0.025, 0.025)).norm() < 1e-12);
        let c = voxel_center_position(GridIndex::new(-1, 0, 0), VoxelIndex::new(7, 0, 0), 0.05);
        assert!((c - Point3::new(-0.025, 0.025, 0.025)).norm() < 1e-12);
    }

    #[test]
    fn linear_layout_is_x_fastest() {
        assert_eq!(VoxelIndex::new(1, 0, 0).linear(), 1);
        assert_eq!(VoxelIndex::new(0, 1, 0).linear(), 8);
        assert_eq!(VoxelIndex::new(0, 0, 1).linear(), 64);
        for i in 0..VOXELS_PER_BLOCK {
            assert_eq!(VoxelIndex::from_linear(i).linear(), i);
        }
    }

    #[test]
    fn neighbors() {
        let g = GridIndex::new(1, 2, 3);
        assert_eq!(g.all_neighbors().count(), 26);
        assert!(g.face_neighbors().iter().all(|n| n.chebyshev(g) == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn center_round_trip(
            bx in -2000i32..2000, by in -2000i32..2000, bz in -2000i32..2000,
            vx in 0usize..8, vy in 0usize..8, vz in 0usize..8,
            voxel_size in prop::sample::select(vec![0.01, 0.02, 0.05, 0.1, 0.2]),
        ) {
            let g = GridIndex::new(bx, by, bz);
            let v = VoxelIndex::new(vx, vy, vz);
            let c = voxel_center_position(g, v, voxel_size);
            prop_assert_eq!(position_to_indices(&c, voxel_size), (g, v));
        }

        #[test]
        fn point_lies_in_its_voxel(
            x in -100.0f64..100.0, y in -100.0f64..100.0, z in -100.0f64..100.0,
            voxel_size in prop::sample::select(vec![0.01, 0.05, 0.1]),
        ) {
            let p = Point3::new(x, y, z);
            let (g, v) = position_to_indices(&p, voxel_size);
            let c = voxel_center_position(g, v, voxel_size);
            let half = 0.5 * voxel_size * (1.0 + 1e-9);
            prop_assert!((p - c).abs().max() <= half);
        }
    }
}

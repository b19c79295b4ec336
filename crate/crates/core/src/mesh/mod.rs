//! Surface extraction from the TSDF by marching cubes, one block at a time.
//!
//! The cube with lowest corner at voxel `(x, y, z)` spans the voxel centers
//! `(x..=x+1, y..=y+1, z..=z+1)`, so cubes on the positive faces of a block
//! read voxels from up to seven neighbouring blocks. A cube with a corner in
//! a missing block, or with a corner weight below `min_weight`, is skipped.

mod ply;
mod tables;

pub use ply::{write_ply, PlyError};

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::map::{GlobalIndex, GridIndex, Layer, VoxelBlock, VoxelIndex, BLOCK_SIZE};
use crate::voxels::{ColorVoxel, TsdfVoxel};
use tables::TRI_TABLE;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("TSDF block {0} is not allocated")]
    Unallocated(GridIndex),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshConfig {
    /// Corners lighter than this deactivate their cube.
    pub min_weight: f32,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { min_weight: 1e-4 }
    }
}

/// Triangles extracted from one block. Vertices shared by neighbouring
/// cubes of the block are stored once.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeshBlock {
    pub vertices: Vec<Point3<f64>>,
    /// Unit normals pointing toward positive TSDF.
    pub normals: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl MeshBlock {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Meshes of all blocks that contain surface.
#[derive(Clone, Debug, Default)]
pub struct MeshLayer {
    voxel_size: f64,
    blocks: HashMap<GridIndex, MeshBlock>,
}

impl MeshLayer {
    pub fn new(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            blocks: HashMap::new(),
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn get(&self, g: &GridIndex) -> Option<&MeshBlock> {
        self.blocks.get(g)
    }

    /// Blocks in ascending index order.
    pub fn blocks(&self) -> impl Iterator<Item = (GridIndex, &MeshBlock)> {
        let mut keys: Vec<_> = self.blocks.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter().map(move |g| (g, &self.blocks[&g]))
    }

    pub fn num_vertices(&self) -> usize {
        self.blocks.values().map(|b| b.vertices.len()).sum()
    }

    pub fn num_triangles(&self) -> usize {
        self.blocks.values().map(|b| b.triangles.len()).sum()
    }

    /// Stores a block mesh; an empty mesh removes the block.
    pub fn set(&mut self, g: GridIndex, mesh: MeshBlock) {
        if mesh.is_empty() {
            self.blocks.remove(&g);
        } else {
            self.blocks.insert(g, mesh);
        }
    }
}

/// Corner offsets in table order.
const CORNERS: [[i32; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs of each cube edge in table order.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// The eight blocks a block's cubes may read, indexed by `dx + 2 dy + 4 dz`.
fn neighborhood(tsdf: &Layer<TsdfVoxel>, g: GridIndex) -> [Option<&VoxelBlock<TsdfVoxel>>; 8] {
    std::array::from_fn(|k| {
        let (dx, dy, dz) = ((k & 1) as i32, ((k >> 1) & 1) as i32, ((k >> 2) & 1) as i32);
        tsdf.get_block(&g.offset(dx, dy, dz))
    })
}

/// Gradient of the trilinear interpolant of corner values `c` at local
/// coordinates `(u, v, w)` in the unit cube.
fn trilinear_gradient(c: &[f64; 8], u: f64, v: f64, w: f64) -> Vector3<f64> {
    // c indexed in table order; remap to c[x][y][z]
    let at = |x: usize, y: usize, z: usize| -> f64 {
        let k = match (x, y) {
            (0, 0) => 0,
            (1, 0) => 1,
            (1, 1) => 2,
            _ => 3,
        };
        c[k + 4 * z]
    };
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let gx = lerp(
        lerp(at(1, 0, 0) - at(0, 0, 0), at(1, 1, 0) - at(0, 1, 0), v),
        lerp(at(1, 0, 1) - at(0, 0, 1), at(1, 1, 1) - at(0, 1, 1), v),
        w,
    );
    let gy = lerp(
        lerp(at(0, 1, 0) - at(0, 0, 0), at(1, 1, 0) - at(1, 0, 0), u),
        lerp(at(0, 1, 1) - at(0, 0, 1), at(1, 1, 1) - at(1, 0, 1), u),
        w,
    );
    let gz = lerp(
        lerp(at(0, 0, 1) - at(0, 0, 0), at(1, 0, 1) - at(1, 0, 0), u),
        lerp(at(0, 1, 1) - at(0, 1, 0), at(1, 1, 1) - at(1, 1, 0), u),
        v,
    );
    Vector3::new(gx, gy, gz)
}

/// Marching cubes over every cube whose lowest corner lies in block `g`.
pub fn mesh_block(tsdf: &Layer<TsdfVoxel>, g: GridIndex, cfg: &MeshConfig) -> Result<MeshBlock, MeshError> {
    if !tsdf.contains_block(&g) {
        return Err(MeshError::Unallocated(g));
    }
    let hood = neighborhood(tsdf, g);
    let b = BLOCK_SIZE as i32;
    let vs = tsdf.voxel_size();
    let origin = g.first_voxel();
    let corner_voxel = |p: [i32; 3]| -> Option<TsdfVoxel> {
        let k = (p[0] >= b) as usize | (((p[1] >= b) as usize) << 1) | (((p[2] >= b) as usize) << 2);
        let block = hood[k]?;
        let v = VoxelIndex::new(
            (p[0] % b) as usize,
            (p[1] % b) as usize,
            (p[2] % b) as usize,
        );
        Some(*block.get(v))
    };

    let mut mesh = MeshBlock::default();
    let mut welded: HashMap<(GlobalIndex, usize), u32> = HashMap::new();
    for z in 0..b {
        for y in 0..b {
            'cube: for x in 0..b {
                let mut values = [0f64; 8];
                let mut case = 0usize;
                for (k, off) in CORNERS.iter().enumerate() {
                    let Some(v) = corner_voxel([x + off[0], y + off[1], z + off[2]]) else {
                        continue 'cube;
                    };
                    if !(v.weight >= cfg.min_weight) {
                        continue 'cube;
                    }
                    values[k] = v.distance as f64;
                    if values[k] < 0.0 {
                        case |= 1 << k;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let base = origin + GlobalIndex::new(x, y, z);
                let mut edge_vertex = [u32::MAX; 12];
                let row = &TRI_TABLE[case];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    for &e in tri {
                        let e = e as usize;
                        if edge_vertex[e] != u32::MAX {
                            continue;
                        }
                        let [a, c] = EDGES[e];
                        let (ca, cc) = (CORNERS[a], CORNERS[c]);
                        // key: lower endpoint of the edge plus its axis
                        let axis = (0..3).find(|&i| ca[i] != cc[i]).unwrap();
                        let low = if ca[axis] < cc[axis] { ca } else { cc };
                        let key = (base + GlobalIndex::from(low), axis);
                        let index = *welded.entry(key).or_insert_with(|| {
                            let (da, dc) = (values[a], values[c]);
                            let t = da / (da - dc);
                            let local = Vector3::new(
                                ca[0] as f64 + t * (cc[0] - ca[0]) as f64,
                                ca[1] as f64 + t * (cc[1] - ca[1]) as f64,
                                ca[2] as f64 + t * (cc[2] - ca[2]) as f64,
                            );
                            let p = (base.cast::<f64>() + local + Vector3::repeat(0.5)) * vs;
                            let mut n = trilinear_gradient(&values, local.x, local.y, local.z);
                            if !(n.norm() > 0.0) {
                                n = Vector3::zeros();
                                n[axis] = if dc > da { 1.0 } else { -1.0 };
                            }
                            mesh.vertices.push(Point3::from(p));
                            mesh.normals.push(n.normalize());
                            (mesh.vertices.len() - 1) as u32
                        });
                        edge_vertex[e] = index;
                    }
                    let [i, j, k] = [
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[1] as usize],
                        edge_vertex[tri[2] as usize],
                    ];
                    // the table winds clockwise seen from the positive side
                    mesh.triangles.push([i, k, j]);
                }
            }
        }
    }
    Ok(mesh)
}

/// Blocks whose cubes read block `g`: itself and its seven neighbours on
/// the negative side.
pub fn dependent_blocks(g: GridIndex) -> impl Iterator<Item = GridIndex> {
    (0..8).map(move |k: i32| g.offset(-(k & 1), -((k >> 1) & 1), -((k >> 2) & 1)))
}

/// Re-meshes the blocks affected by changes to `updated` TSDF blocks and
/// returns them. Vertices are colored from `color` when given.
pub fn update_mesh(
    mesh: &mut MeshLayer,
    tsdf: &Layer<TsdfVoxel>,
    updated: &BTreeSet<GridIndex>,
    color: Option<&Layer<ColorVoxel>>,
    cfg: &MeshConfig,
) -> BTreeSet<GridIndex> {
    let targets: BTreeSet<GridIndex> = updated
        .iter()
        .flat_map(|g| dependent_blocks(*g))
        .filter(|g| tsdf.contains_block(g))
        .collect();
    let order: Vec<GridIndex> = targets.iter().copied().collect();
    let meshes: Vec<MeshBlock> = order
        .par_iter()
        .map(|g| {
            let mut m = mesh_block(tsdf, *g, cfg).expect("target blocks are allocated");
            if let Some(color) = color {
                m.colors = Some(m.vertices.iter().map(|p| vertex_color(color, p)).collect());
            }
            m
        })
        .collect();
    for (g, m) in order.into_iter().zip(meshes) {
        mesh.set(g, m);
    }
    targets
}

/// Meshes every TSDF block from scratch.
pub fn mesh_all(tsdf: &Layer<TsdfVoxel>, color: Option<&Layer<ColorVoxel>>, cfg: &MeshConfig) -> MeshLayer {
    let mut mesh = MeshLayer::new(tsdf.voxel_size());
    let all: BTreeSet<_> = tsdf.sorted_indices().into_iter().collect();
    update_mesh(&mut mesh, tsdf, &all, color, cfg);
    mesh
}

const UNCOLORED: [u8; 3] = [128, 128, 128];

fn vertex_color(color: &Layer<ColorVoxel>, p: &Point3<f64>) -> [u8; 3] {
    match color.get_voxel_at_position(p) {
        Some(c) if c.weight > 0.0 => c.rgb,
        _ => UNCOLORED,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::voxel_center_position;
    use proptest::prelude::*;

    fn fill(tsdf: &mut Layer<TsdfVoxel>, blocks: &[GridIndex], f: impl Fn(&Point3<f64>) -> f64, trunc: f64) {
        let vs = tsdf.voxel_size();
        for g in blocks {
            let block = tsdf.get_or_allocate_block(*g).unwrap();
            for (i, v) in block.voxels_mut().iter_mut().enumerate() {
                let p = voxel_center_position(*g, VoxelIndex::from_linear(i), vs);
                *v = TsdfVoxel {
                    distance: f(&p).clamp(-trunc, trunc) as f32,
                    weight: 1.0,
                };
            }
        }
    }

    fn cube_of_blocks(n: i32) -> Vec<GridIndex> {
        let mut out = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    out.push(GridIndex::new(x, y, z));
                }
            }
        }
        out
    }

    #[test]
    fn positive_block_is_empty() {
        let mut tsdf = Layer::new(0.1).unwrap();
        fill(&mut tsdf, &cube_of_blocks(2), |_| 0.3, 0.4);
        let m = mesh_block(&tsdf, GridIndex::new(0, 0, 0), &MeshConfig::default()).unwrap();
        assert!(m.is_empty());
        assert_eq!(
            mesh_block(&tsdf, GridIndex::new(5, 0, 0), &MeshConfig::default()),
            Err(MeshError::Unallocated(GridIndex::new(5, 0, 0)))
        );
    }

    #[test]
    fn plane_vertices_are_exact() {
        let vs = 0.05;
        let trunc = 4.0 * vs;
        let n = Vector3::new(0.2, -0.3, 1.0).normalize();
        let p0 = Point3::new(0.4, 0.4, 0.41);
        let mut tsdf = Layer::new(vs).unwrap();
        fill(&mut tsdf, &cube_of_blocks(2), |p| (p - p0).dot(&n), trunc);
        let mesh = mesh_all(&tsdf, None, &MeshConfig::default());
        assert!(mesh.num_triangles() > 100);
        for (_, b) in mesh.blocks() {
            for v in &b.vertices {
                assert!((v - p0).dot(&n).abs() <= 1e-6 * trunc);
            }
            for nrm in &b.normals {
                assert!((nrm.norm() - 1.0).abs() < 1e-4);
                assert!(nrm.dot(&n) > 0.99);
            }
        }
    }

    #[test]
    fn sphere_radial_error() {
        let vs = 0.05;
        let c = Point3::new(0.4, 0.4, 0.4);
        let mut tsdf = Layer::new(vs).unwrap();
        fill(&mut tsdf, &cube_of_blocks(2), |p| (p - c).norm() - 0.25, 4.0 * vs);
        let mesh = mesh_all(&tsdf, None, &MeshConfig::default());
        let mut sum = 0.0;
        let mut n = 0;
        for (g, b) in mesh.blocks() {
            for v in &b.vertices {
                let r = (v - c).norm() - 0.25;
                sum += r * r;
                n += 1;
                // vertices stay within the block cube grown by one voxel
                let lo = crate::map::block_origin(g, vs);
                for i in 0..3 {
                    assert!(v[i] >= lo[i] - vs && v[i] <= lo[i] + 9.0 * vs);
                }
            }
        }
        assert!((sum / n as f64).sqrt() <= vs / 2.0);
    }

    #[test]
    fn winding_follows_gradient() {
        let vs = 0.05;
        let c = Point3::new(0.4, 0.38, 0.41);
        let mut tsdf = Layer::new(vs).unwrap();
        fill(&mut tsdf, &cube_of_blocks(2), |p| (p - c).norm() - 0.27, 4.0 * vs);
        let mesh = mesh_all(&tsdf, None, &MeshConfig::default());
        for (_, b) in mesh.blocks() {
            for t in &b.triangles {
                let [p, q, r] = t.map(|i| b.vertices[i as usize]);
                let cross = (q - p).cross(&(r - p));
                let centroid = Point3::from((p.coords + q.coords + r.coords) / 3.0);
                if cross.norm() > 1e-12 {
                    assert!(cross.dot(&(centroid - c)) > 0.0);
                }
            }
        }
    }

    #[test]
    fn missing_neighbor_skips_border_cubes() {
        let vs = 0.1;
        let mut tsdf = Layer::new(vs).unwrap();
        // surface at x = 0.8 lies exactly on the block border
        fill(&mut tsdf, &[GridIndex::new(0, 0, 0)], |p| 0.75 - p.x, 0.4);
        let m = mesh_block(&tsdf, GridIndex::new(0, 0, 0), &MeshConfig::default()).unwrap();
        assert!(m.is_empty());
        fill(&mut tsdf, &[GridIndex::new(1, 0, 0)], |p| 0.75 - p.x, 0.4);
        let m = mesh_block(&tsdf, GridIndex::new(0, 0, 0), &MeshConfig::default()).unwrap();
        // only the x = 7 cubes straddle the surface; y and z border cubes
        // still lack neighbours
        assert_eq!(m.triangles.len(), 7 * 7 * 2);
    }

    #[test]
    fn update_touches_negative_neighbors() {
        assert_eq!(dependent_blocks(GridIndex::new(3, 3, 3)).count(), 8);
        let vs = 0.1;
        let mut tsdf = Layer::new(vs).unwrap();
        fill(&mut tsdf, &cube_of_blocks(3), |p| p.z - 1.2, 0.4);
        let mut mesh = MeshLayer::new(vs);
        let one: BTreeSet<_> = [GridIndex::new(1, 1, 1)].into_iter().collect();
        let remeshed = update_mesh(&mut mesh, &tsdf, &one, None, &MeshConfig::default());
        assert_eq!(remeshed.len(), 8);
        assert!(update_mesh(&mut mesh, &tsdf, &BTreeSet::new(), None, &MeshConfig::default()).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn incremental_equals_full(seed in any::<u64>(), steps in 1usize..5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let vs = 0.1;
            let mut tsdf = Layer::new(vs).unwrap();
            let mut mesh = MeshLayer::new(vs);
            let cfg = MeshConfig::default();
            for _ in 0..steps {
                let c = Point3::new(rng.random_range(0.0..2.4), rng.random_range(0.0..2.4), rng.random_range(0.0..2.4));
                let r = rng.random_range(0.2..0.6);
                let blocks: Vec<GridIndex> = cube_of_blocks(3)
                    .into_iter()
                    .filter(|_| rng.random_bool(0.4))
                    .collect();
                fill(&mut tsdf, &blocks, |p| (p - c).norm() - r, 0.4);
                let updated: BTreeSet<_> = blocks.into_iter().collect();
                update_mesh(&mut mesh, &tsdf, &updated, None, &cfg);
            }
            let full = mesh_all(&tsdf, None, &cfg);
            prop_assert_eq!(full.num_blocks(), mesh.num_blocks());
            for (g, b) in full.blocks() {
                prop_assert_eq!(Some(b), mesh.get(&g));
            }
        }
    }
}

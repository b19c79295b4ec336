//! Versioned binary map snapshot ("VXLF").
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "VXLF"
//! version      u32      currently 1
//! voxel_size   f64      meters
//! layer_count  u32
//! per layer:
//!   kind         u8     1 tsdf, 2 occupancy, 3 color, 4 esdf
//!   block_count  u32
//!   per block, ascending GridIndex order:
//!     index      3 x i32
//!     payload    512 voxels, x fastest, fixed size per voxel kind
//! ```
//!
//! Reading and re-writing a snapshot reproduces it byte for byte.

use thiserror::Error;

use super::{GridIndex, Layer, LayerCake, MapError, VoxelBlock, VOXELS_PER_BLOCK};
use crate::voxels::{ColorVoxel, EsdfVoxel, OccupancyVoxel, TsdfVoxel, Voxel};

pub const MAGIC: &[u8; 4] = b"VXLF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a VXLF snapshot")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("snapshot truncated")]
    Truncated,
    #[error("unknown layer kind {0}")]
    UnknownLayer(u8),
    #[error("layer kind {0} appears twice")]
    DuplicateLayer(u8),
    #[error("snapshot has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn to_bytes(cake: &LayerCake) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&cake.voxel_size().to_le_bytes());
    let layer_count = 1
        + cake.tsdf.is_some() as u32
        + cake.occupancy.is_some() as u32
        + cake.color.is_some() as u32;
    out.extend_from_slice(&layer_count.to_le_bytes());
    if let Some(layer) = &cake.tsdf {
        write_layer(&mut out, layer);
    }
    if let Some(layer) = &cake.occupancy {
        write_layer(&mut out, layer);
    }
    if let Some(layer) = &cake.color {
        write_layer(&mut out, layer);
    }
    write_layer(&mut out, &cake.esdf);
    out
}

fn write_layer<V: Voxel>(out: &mut Vec<u8>, layer: &Layer<V>) {
    out.push(V::KIND);
    out.extend_from_slice(&(layer.num_blocks() as u32).to_le_bytes());
    for (index, block) in layer.iter_sorted() {
        for c in index.as_array() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for voxel in block.voxels() {
            voxel.encode(out);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.at.checked_add(n).ok_or(SnapshotError::Truncated)?;
        let slice = self.bytes.get(self.at..end).ok_or(SnapshotError::Truncated)?;
        self.at = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, SnapshotError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_layer<V: Voxel>(reader: &mut Reader<'_>, voxel_size: f64) -> Result<Layer<V>, SnapshotError> {
    let mut layer = Layer::new(voxel_size)?;
    let count = reader.u32()?;
    for _ in 0..count {
        let index = GridIndex::new(reader.i32()?, reader.i32()?, reader.i32()?);
        let payload = reader.take(V::ENCODED_SIZE * VOXELS_PER_BLOCK)?;
        let voxels = payload.chunks_exact(V::ENCODED_SIZE).map(V::decode).collect();
        layer.insert_block(index, VoxelBlock::from_voxels(voxels))?;
    }
    Ok(layer)
}

pub fn from_bytes(bytes: &[u8]) -> Result<LayerCake, SnapshotError> {
    let mut reader = Reader { bytes, at: 0 };
    if reader.take(4).map_err(|_| SnapshotError::BadMagic)? != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = reader.u32()?;
    if version != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let voxel_size = reader.f64()?;
    let mut cake = LayerCake::new(voxel_size)?;
    let layer_count = reader.u32()?;
    let mut seen = [false; 5];
    for _ in 0..layer_count {
        let kind = reader.u8()?;
        if (kind as usize) < seen.len() && std::mem::replace(&mut seen[kind as usize], true) {
            return Err(SnapshotError::DuplicateLayer(kind));
        }
        match kind {
            TsdfVoxel::KIND => cake.tsdf = Some(read_layer(&mut reader, voxel_size)?),
            OccupancyVoxel::KIND => cake.occupancy = Some(read_layer(&mut reader, voxel_size)?),
            ColorVoxel::KIND => cake.color = Some(read_layer(&mut reader, voxel_size)?),
            EsdfVoxel::KIND => cake.esdf = read_layer(&mut reader, voxel_size)?,
            other => return Err(SnapshotError::UnknownLayer(other)),
        }
    }
    if reader.at != bytes.len() {
        return Err(SnapshotError::TrailingBytes(bytes.len() - reader.at));
    }
    Ok(cake)
}

pub fn write_file(path: &std::path::Path, cake: &LayerCake) -> Result<(), SnapshotError> {
    std::fs::write(path, to_bytes(cake))?;
    Ok(())
}

pub fn read_file(path: &std::path::Path) -> Result<LayerCake, SnapshotError> {
    from_bytes(&std::fs::read(path)?)
}

use std::io::{self, Write};

use thiserror::Error;

use super::MeshLayer;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("mesh has {0} vertices, more than a PLY int32 index can address")]
    TooManyVertices(usize),
}

/// Writes the whole mesh as binary little-endian PLY: float32 positions,
/// uint8 RGB when every block is colored, and int32 triangle indices.
/// Blocks are written in ascending index order.
pub fn write_ply<W: Write>(mesh: &MeshLayer, out: W) -> Result<(), PlyError> {
    let mut out = io::BufWriter::new(out);
    let num_vertices = mesh.num_vertices();
    if num_vertices > i32::MAX as usize {
        return Err(PlyError::TooManyVertices(num_vertices));
    }
    let colored = mesh.num_blocks() > 0 && mesh.blocks().all(|(_, b)| b.colors.is_some());
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {num_vertices}\n\
         property float x\nproperty float y\nproperty float z\n"
    )?;
    if colored {
        write!(out, "property uchar red\nproperty uchar green\nproperty uchar blue\n")?;
    }
    write!(
        out,
        "element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.num_triangles()
    )?;
    for (_, b) in mesh.blocks() {
        for (k, v) in b.vertices.iter().enumerate() {
            for c in v.iter() {
                out.write_all(&(*c as f32).to_le_bytes())?;
            }
            if colored {
                out.write_all(&b.colors.as_ref().unwrap()[k])?;
            }
        }
    }
    let mut offset = 0u32;
    for (_, b) in mesh.blocks() {
        for t in &b.triangles {
            out.write_all(&[3u8])?;
            for i in t {
                out.write_all(&((i + offset) as i32).to_le_bytes())?;
            }
        }
        offset += b.vertices.len() as u32;
    }
    out.flush()?;
    Ok(())
}

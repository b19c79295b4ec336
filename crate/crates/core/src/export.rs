//! Horizontal ESDF slices as CSV and 16-bit PNG.

use std::io::{self, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};
use thiserror::Error;

use crate::esdf::esdf_distance;
use crate::map::{GlobalIndex, Layer, BLOCK_SIZE};
use crate::voxels::EsdfVoxel;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("the ESDF has no blocks")]
    EmptyMap,
    #[error("slice height {0} m lies outside the map")]
    OutsideMap(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// One voxel layer of the ESDF over the map's x/y extent.
#[derive(Clone, Debug, PartialEq)]
pub struct EsdfSlice {
    pub voxel_size: f64,
    /// Global index of the first cell; the slice covers
    /// `origin.x .. origin.x + width` by `origin.y .. origin.y + height`.
    pub origin: GlobalIndex,
    pub width: usize,
    pub height: usize,
    /// Row-major, x fastest; `None` where unobserved.
    pub distances: Vec<Option<f64>>,
}

/// Pixel value for unobserved cells in the PNG.
pub const PNG_UNKNOWN: u16 = 0;
/// PNG pixels hold millimeters plus this offset.
pub const PNG_OFFSET: i64 = 32768;

impl EsdfSlice {
    /// Slices the voxel layer containing height `z` (meters), or the middle
    /// of the map when `z` is `None`.
    pub fn extract(esdf: &Layer<EsdfVoxel>, z: Option<f64>, interior_cap_voxels: f64) -> Result<Self, ExportError> {
        let blocks = esdf.sorted_indices();
        if blocks.is_empty() {
            return Err(ExportError::EmptyMap);
        }
        let b = BLOCK_SIZE as i32;
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for g in &blocks {
            for i in 0..3 {
                lo[i] = lo[i].min(g.as_array()[i] * b);
                hi[i] = hi[i].max(g.as_array()[i] * b + b);
            }
        }
        let vs = esdf.voxel_size();
        let layer_z = match z {
            Some(z) => {
                let k = (z / vs).floor();
                if !(k >= lo[2] as f64 && k < hi[2] as f64) {
                    return Err(ExportError::OutsideMap(z));
                }
                k as i32
            }
            None => (lo[2] + hi[2]) / 2,
        };
        let (width, height) = ((hi[0] - lo[0]) as usize, (hi[1] - lo[1]) as usize);
        let mut distances = Vec::with_capacity(width * height);
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let d = esdf
                    .get_voxel(&GlobalIndex::new(x, y, layer_z))
                    .and_then(|v| esdf_distance(v, vs, interior_cap_voxels));
                distances.push(d);
            }
        }
        Ok(Self {
            voxel_size: vs,
            origin: GlobalIndex::new(lo[0], lo[1], layer_z),
            width,
            height,
            distances,
        })
    }

    /// Center of a cell in meters.
    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 3] {
        let c = |k: i32| (k as f64 + 0.5) * self.voxel_size;
        [c(self.origin.x + i as i32), c(self.origin.y + j as i32), c(self.origin.z)]
    }

    /// `x,y,z,distance` per cell with meters throughout; unobserved cells
    /// have an empty distance.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut out = io::BufWriter::new(out);
        writeln!(out, "x,y,z,distance")?;
        for j in 0..self.height {
            for i in 0..self.width {
                let [x, y, z] = self.cell_center(i, j);
                match self.distances[i + j * self.width] {
                    Some(d) => writeln!(out, "{x:.6},{y:.6},{z:.6},{d:.6}")?,
                    None => writeln!(out, "{x:.6},{y:.6},{z:.6},")?,
                }
            }
        }
        out.flush()
    }

    /// 16-bit grayscale, row 0 at the lowest y. A pixel holds the distance
    /// in millimeters plus [`PNG_OFFSET`], clamped to 1..=65535; 0 marks
    /// unobserved cells.
    pub fn png_pixels(&self) -> Vec<u16> {
        self.distances
            .iter()
            .map(|d| match d {
                Some(d) => ((d * 1000.0).round() as i64 + PNG_OFFSET).clamp(1, u16::MAX as i64) as u16,
                None => PNG_UNKNOWN,
            })
            .collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ExportError> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.png_pixels()).expect("sizes match");
        img.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::GridIndex;

    fn tiny_esdf() -> Layer<EsdfVoxel> {
        let mut esdf = Layer::<EsdfVoxel>::new(0.1).unwrap();
        let block = esdf.get_or_allocate_block(GridIndex::new(0, 0, 0)).unwrap();
        block[0] = EsdfVoxel {
            observed: true,
            is_site: true,
            ..Default::default()
        };
        block[1] = EsdfVoxel {
            observed: true,
            squared_distance: 1,
            parent: [-1, 0, 0],
            ..Default::default()
        };
        block[2] = EsdfVoxel {
            observed: true,
            is_inside: true,
            squared_distance: 4,
            parent: [-2, 0, 0],
            ..Default::default()
        };
        esdf
    }

    #[test]
    fn slice_values() {
        let esdf = tiny_esdf();
        let s = EsdfSlice::extract(&esdf, Some(0.05), 4.0).unwrap();
        assert_eq!((s.width, s.height), (8, 8));
        assert_eq!(s.distances[0], Some(0.0));
        assert!((s.distances[1].unwrap() - 0.1).abs() < 1e-12);
        assert!((s.distances[2].unwrap() + 0.2).abs() < 1e-12);
        assert_eq!(s.distances[3], None);
        let px = s.png_pixels();
        assert_eq!(&px[..4], &[32768, 32868, 32568, 0]);

        let mut csv = Vec::new();
        s.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,z,distance");
        assert_eq!(lines[2], "0.150000,0.050000,0.050000,0.100000");
        assert_eq!(lines[4], "0.350000,0.050000,0.050000,");
        assert_eq!(lines.len(), 65);
    }

    #[test]
    fn out_of_range_and_empty() {
        let esdf = tiny_esdf();
        assert!(matches!(EsdfSlice::extract(&esdf, Some(5.0), 4.0), Err(ExportError::OutsideMap(_))));
        let empty = Layer::<EsdfVoxel>::new(0.1).unwrap();
        assert!(matches!(EsdfSlice::extract(&empty, None, 4.0), Err(ExportError::EmptyMap)));
    }

    #[test]
    fn png_round_trip() {
        let s = EsdfSlice::extract(&tiny_esdf(), None, 4.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slice.png");
        s.write_png(&path).unwrap();
        let img = image::open(&path).unwrap().into_luma16();
        assert_eq!(img.into_raw(), s.png_pixels());
    }
}

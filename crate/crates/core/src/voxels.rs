//! Per-voxel payloads stored in the layers.
//!
//! Equality on every voxel type is bitwise: two voxels are equal only if
//! their snapshot encodings are identical. Change detection during
//! integration and the ESDF relies on this.

/// A type that can be stored in a [`Layer`](crate::map::Layer).
///
/// `Default` is the "unknown" state a freshly allocated block starts in.
pub trait Voxel: Copy + Default + PartialEq + Send + Sync + 'static {
    /// Layer tag written into snapshots.
    const KIND: u8;
    /// Bytes per voxel in the snapshot payload.
    const ENCODED_SIZE: usize;

    fn encode(&self, out: &mut Vec<u8>);
    /// `bytes` holds exactly `ENCODED_SIZE` bytes.
    fn decode(bytes: &[u8]) -> Self;
}

fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn i32_at(bytes: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

/// Truncated projective signed distance and its accumulated weight.
#[derive(Clone, Copy, Debug, Default)]
pub struct TsdfVoxel {
    /// Meters; positive on the free side of the surface.
    pub distance: f32,
    pub weight: f32,
}

impl PartialEq for TsdfVoxel {
    fn eq(&self, other: &Self) -> bool {
        self.distance.to_bits() == other.distance.to_bits()
            && self.weight.to_bits() == other.weight.to_bits()
    }
}

impl Voxel for TsdfVoxel {
    const KIND: u8 = 1;
    const ENCODED_SIZE: usize = 8;

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.distance.to_le_bytes());
        out.extend_from_slice(&self.weight.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Self {
        Self {
            distance: f32_at(bytes, 0),
            weight: f32_at(bytes, 4),
        }
    }
}

/// Occupancy probability in log-odds form; 0 means never observed.
#[derive(Clone, Copy, Debug, Default)]
pub struct OccupancyVoxel {
    pub log_odds: f32,
}

impl PartialEq for OccupancyVoxel {
    fn eq(&self, other: &Self) -> bool {
        self.log_odds.to_bits() == other.log_odds.to_bits()
    }
}

impl Voxel for OccupancyVoxel {
    const KIND: u8 = 2;
    const ENCODED_SIZE: usize = 4;

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.log_odds.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Self {
        Self {
            log_odds: f32_at(bytes, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ColorVoxel {
    pub rgb: [u8; 3],
    pub weight: f32,
}

impl PartialEq for ColorVoxel {
    fn eq(&self, other: &Self) -> bool {
        self.rgb == other.rgb && self.weight.to_bits() == other.weight.to_bits()
    }
}

impl Voxel for ColorVoxel {
    const KIND: u8 = 3;
    const ENCODED_SIZE: usize = 7;

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.rgb);
        out.extend_from_slice(&self.weight.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Self {
        Self {
            rgb: [bytes[0], bytes[1], bytes[2]],
            weight: f32_at(bytes, 3),
        }
    }
}

/// Euclidean distance state of one voxel.
///
/// Distances are integer squared voxel units. `parent` is the offset, in
/// voxels, from this voxel to the site it is closest to. A zero parent on an
/// observed non-site voxel means "no site within the maximum distance"; such
/// voxels hold the layer's maximum squared distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EsdfVoxel {
    pub observed: bool,
    pub is_site: bool,
    /// On the occupied side of the surface; distances read out negative.
    pub is_inside: bool,
    pub squared_distance: i32,
    pub parent: [i32; 3],
}

impl EsdfVoxel {
    const OBSERVED: u8 = 1;
    const SITE: u8 = 2;
    const INSIDE: u8 = 4;

    pub fn has_parent(&self) -> bool {
        self.parent != [0, 0, 0]
    }

    /// Observed, not a site, and without a parent.
    pub fn is_at_max(&self) -> bool {
        self.observed && !self.is_site && !self.has_parent()
    }
}

impl Voxel for EsdfVoxel {
    const KIND: u8 = 4;
    const ENCODED_SIZE: usize = 17;

    fn encode(&self, out: &mut Vec<u8>) {
        let mut flags = 0u8;
        if self.observed {
            flags |= Self::OBSERVED;
        }
        if self.is_site {
            flags |= Self::SITE;
        }
        if self.is_inside {
            flags |= Self::INSIDE;
        }
        out.push(flags);
        out.extend_from_slice(&self.squared_distance.to_le_bytes());
        for c in self.parent {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }

    fn decode(bytes: &[u8]) -> Self {
        let flags = bytes[0];
        Self {
            observed: flags & Self::OBSERVED != 0,
            is_site: flags & Self::SITE != 0,
            is_inside: flags & Self::INSIDE != 0,
            squared_distance: i32_at(bytes, 1),
            parent: [i32_at(bytes, 5), i32_at(bytes, 9), i32_at(bytes, 13)],
        }
    }
}

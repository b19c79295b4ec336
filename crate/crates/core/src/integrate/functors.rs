//! Per-voxel update rules.

use serde::{Deserialize, Serialize};

use crate::voxels::{ColorVoxel, OccupancyVoxel, TsdfVoxel};

/// Log-odds increments are snapped to multiples of this step so that sums of
/// them are exact in `f32`, which makes occupancy fusion order-independent
/// until a clamp is hit.
pub const LOG_ODDS_QUANTUM: f32 = 1.0 / 65536.0;

pub fn quantize_log_odds(x: f32) -> f32 {
    (x / LOG_ODDS_QUANTUM).round() * LOG_ODDS_QUANTUM
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    Constant,
    /// `1 / depth^2`, following the quadratic growth of depth noise.
    InverseSquareDepth,
}

impl WeightMode {
    #[inline]
    pub fn weight(self, measured_depth: f64) -> f32 {
        match self {
            WeightMode::Constant => 1.0,
            WeightMode::InverseSquareDepth => (1.0 / (measured_depth * measured_depth)) as f32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyParams {
    /// Added when the voxel lies just behind the measured surface.
    pub hit: f32,
    /// Added when the voxel lies on the free side.
    pub miss: f32,
    pub min: f32,
    pub max: f32,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self {
            hit: 0.8473,
            miss: -0.4055,
            min: -5.0,
            max: 5.0,
        }
    }
}

/// `d - d_v`: positive when the voxel lies in front of the measured surface.
#[inline]
pub fn projective_distance(measured: f64, voxel_depth: f64) -> f64 {
    measured - voxel_depth
}

/// Weighted running average of the truncated distance. Returns `None` when
/// the voxel is more than `truncation` behind the surface.
#[inline]
pub fn tsdf_update(
    voxel: TsdfVoxel,
    d_p: f64,
    w_new: f32,
    truncation: f32,
    max_weight: f32,
) -> Option<TsdfVoxel> {
    if !(d_p >= -(truncation as f64)) || !(w_new > 0.0) {
        return None;
    }
    let d_t = (d_p as f32).clamp(-truncation, truncation);
    let w = voxel.weight;
    let distance = voxel.distance + (w_new / (w + w_new)) * (d_t - voxel.distance);
    Some(TsdfVoxel {
        distance: distance.clamp(-truncation, truncation),
        weight: (w + w_new).min(max_weight),
    })
}

/// Log-odds hit or miss depending on the side of the surface. Returns
/// `None` when the voxel is more than `truncation` behind the surface.
#[inline]
pub fn occupancy_update(
    voxel: OccupancyVoxel,
    d_p: f64,
    truncation: f64,
    params: &OccupancyParams,
) -> Option<OccupancyVoxel> {
    if !(d_p >= -truncation) {
        return None;
    }
    let delta = if d_p < 0.0 { params.hit } else { params.miss };
    Some(OccupancyVoxel {
        log_odds: (voxel.log_odds + quantize_log_odds(delta)).clamp(params.min, params.max),
    })
}

/// Per-channel running average with unit weight per observation. Channels
/// are rounded half away from zero.
#[inline]
pub fn color_update(voxel: ColorVoxel, rgb: [u8; 3], max_weight: f32) -> ColorVoxel {
    let w = voxel.weight as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let mean = (voxel.rgb[c] as f64 * w + rgb[c] as f64) / (w + 1.0);
        out[c] = mean.round().clamp(0.0, 255.0) as u8;
    }
    ColorVoxel {
        rgb: out,
        weight: (voxel.weight + 1.0).min(max_weight),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tsdf(d: f32, w: f32) -> TsdfVoxel {
        TsdfVoxel { distance: d, weight: w }
    }

    #[test]
    fn projective_distance_examples() {
        assert_eq!(projective_distance(2.0, 2.0), 0.0);
        assert_eq!(projective_distance(2.0, 1.5), 0.5);
        assert!((projective_distance(2.0, 2.3) + 0.3).abs() < 1e-12);
    }

    #[test]
    fn tsdf_examples() {
        assert_eq!(tsdf_update(tsdf(0.0, 0.0), 0.0, 1.0, 0.2, 100.0), Some(tsdf(0.0, 1.0)));
        let v = tsdf_update(tsdf(0.10, 1.0), 0.0, 1.0, 0.2, 100.0).unwrap();
        assert!((v.distance - 0.05).abs() < 1e-7 && v.weight == 2.0);
        let v = tsdf_update(tsdf(0.0, 1.0), 0.5, 1.0, 0.2, 100.0).unwrap();
        assert!((v.distance - 0.10).abs() < 1e-7 && v.weight == 2.0);
        assert_eq!(tsdf_update(tsdf(0.0, 1.0), -0.21, 1.0, 0.2, 100.0), None);
        assert_eq!(tsdf_update(tsdf(0.0, 1.0), f64::NAN, 1.0, 0.2, 100.0), None);
    }

    #[test]
    fn tsdf_weight_is_capped() {
        let v = tsdf_update(tsdf(0.0, 99.5), 0.1, 1.0, 0.2, 100.0).unwrap();
        assert_eq!(v.weight, 100.0);
    }

    #[test]
    fn occupancy_examples() {
        let p = OccupancyParams::default();
        let v = occupancy_update(OccupancyVoxel { log_odds: 0.0 }, -0.05, 0.2, &p).unwrap();
        assert!((v.log_odds - 0.8473).abs() < 1e-4);
        let v = occupancy_update(v, 0.5, 0.2, &p).unwrap();
        assert!((v.log_odds - 0.4418).abs() < 1e-4);
        let v = occupancy_update(OccupancyVoxel { log_odds: 5.0 }, -0.01, 0.2, &p).unwrap();
        assert_eq!(v.log_odds, 5.0);
        assert_eq!(occupancy_update(OccupancyVoxel::default(), -0.3, 0.2, &p), None);
        // on the surface counts as free
        let v = occupancy_update(OccupancyVoxel::default(), 0.0, 0.2, &p).unwrap();
        assert!(v.log_odds < 0.0);
    }

    #[test]
    fn color_red_then_green() {
        let v = color_update(ColorVoxel::default(), [255, 0, 0], 100.0);
        assert_eq!(v.rgb, [255, 0, 0]);
        let v = color_update(v, [0, 255, 0], 100.0);
        assert_eq!(v.rgb, [128, 128, 0]);
        assert_eq!(v.weight, 2.0);
    }

    #[test]
    fn inverse_square_weight() {
        assert_eq!(WeightMode::InverseSquareDepth.weight(2.0), 0.25);
        assert_eq!(WeightMode::Constant.weight(2.0), 1.0);
    }
}

use super::SensorError;

/// Depth in meters per pixel, row-major. Zero marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthImage {
    /// All-invalid image.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    /// Non-finite and negative values are rejected.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, SensorError> {
        if data.len() != width * height {
            return Err(SensorError::ImageSize {
                expected: (width, height),
                len: data.len(),
            });
        }
        if data.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(SensorError::InvalidDepth);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Panics on a negative or non-finite depth.
    pub fn set(&mut self, x: usize, y: usize, depth: f32) {
        assert!(depth.is_finite() && depth >= 0.0, "invalid depth {depth}");
        self.data[y * self.width + x] = depth;
    }

    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> Option<f32> {
        let d = self.get(x, y);
        (d > 0.0).then_some(d)
    }

    pub fn num_valid(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self, SensorError> {
        if data.len() != width * height {
            return Err(SensorError::ImageSize {
                expected: (width, height),
                len: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[u8; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.data[y * self.width + x] = rgb;
    }
}

/// How depth is read at continuous image coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SampleMode {
    /// Pixel containing the coordinates.
    Nearest,
    /// Bilinear over the four surrounding pixel centers, refused across
    /// depth discontinuities.
    ForegroundSafeLinear,
}

/// Default foreground/background gap above which linear sampling refuses
/// to interpolate, meters.
pub const DEFAULT_GAP_THRESHOLD: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSampler {
    pub mode: SampleMode,
    pub gap_threshold: f32,
    /// Columns wrap around (full-turn LiDAR).
    pub wrap_columns: bool,
}

impl DepthSampler {
    pub fn nearest() -> Self {
        Self {
            mode: SampleMode::Nearest,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            wrap_columns: false,
        }
    }

    pub fn linear() -> Self {
        Self {
            mode: SampleMode::ForegroundSafeLinear,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            wrap_columns: false,
        }
    }

    /// Depth at image coordinates `(u, v)`, or `None` if out of bounds or
    /// invalid.
    #[inline]
    pub fn sample(&self, image: &DepthImage, u: f64, v: f64) -> Option<f32> {
        let w = image.width as f64;
        let h = image.height as f64;
        let u = if self.wrap_columns { u.rem_euclid(w) } else { u };
        if !(u >= 0.0 && u < w && v >= 0.0 && v < h) {
            return None;
        }
        match self.mode {
            SampleMode::Nearest => image.valid(u as usize, v as usize),
            SampleMode::ForegroundSafeLinear => self.sample_linear(image, u, v),
        }
    }

    fn sample_linear(&self, image: &DepthImage, u: f64, v: f64) -> Option<f32> {
        // pixel centers sit at half-integer coordinates
        let s = u - 0.5;
        let t = v - 0.5;
        let x0 = s.floor();
        let y0 = t.floor();
        let fx = s - x0;
        let fy = t - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let col = |x: i64| -> usize {
            let w = image.width as i64;
            if self.wrap_columns {
                x.rem_euclid(w) as usize
            } else {
                x.clamp(0, w - 1) as usize
            }
        };
        let row = |y: i64| -> usize { y.clamp(0, image.height as i64 - 1) as usize };
        let d00 = image.valid(col(x0), row(y0))?;
        let d10 = image.valid(col(x0 + 1), row(y0))?;
        let d01 = image.valid(col(x0), row(y0 + 1))?;
        let d11 = image.valid(col(x0 + 1), row(y0 + 1))?;
        let lo = d00.min(d10).min(d01).min(d11);
        let hi = d00.max(d10).max(d01).max(d11);
        if hi - lo > self.gap_threshold {
            return None;
        }
        let top = d00 as f64 * (1.0 - fx) + d10 as f64 * fx;
        let bottom = d01 as f64 * (1.0 - fx) + d11 as f64 * fx;
        let d = (top * (1.0 - fy) + bottom * fy) as f32;
        Some(d.clamp(lo, hi))
    }
}

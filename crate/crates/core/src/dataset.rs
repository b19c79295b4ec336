//! On-disk sequences of posed depth (and optional color) frames.
//!
//! ```text
//! <dir>/intrinsics.txt     sensor key=value lines
//! <dir>/poses.txt          one line per frame: t tx ty tz qx qy qz qw
//! <dir>/depth/NNNNNN.png   16-bit grayscale, millimeters, 0 = invalid
//! <dir>/color/NNNNNN.png   8-bit RGB, optional
//! <dir>/scene.json         ground truth, synthetic datasets only
//! ```
//!
//! Frames are matched to pose lines by order of the sorted file names.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::Vector3;
use thiserror::Error;

use crate::scene::{render_color, render_depth, Scene};
use crate::sensor::{ColorImage, DepthImage, Pose, SensorError, SensorModel};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const DEPTH_DIR: &str = "depth";
pub const COLOR_DIR: &str = "color";
pub const SCENE_FILE: &str = "scene.json";

/// Largest depth a 16-bit millimeter pixel holds.
pub const MAX_STORED_DEPTH: f64 = u16::MAX as f64 / 1000.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("frame {frame}: image is {got:?}, intrinsics say {expected:?}")]
    DimensionMismatch {
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("{POSES_FILE} line {line}: timestamp does not increase")]
    NonMonotoneTimestamp { line: usize },
    #[error("{POSES_FILE} line {line}: {message}")]
    BadPose { line: usize, message: String },
    #[error("{poses} poses but {depth} depth frames")]
    FrameCount { poses: usize, depth: usize },
    #[error("{color} color frames for {depth} depth frames")]
    ColorCount { color: usize, depth: usize },
    #[error("intrinsics: {0}")]
    Sensor(#[from] SensorError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub pose: Pose,
    pub depth: DepthImage,
    pub color: Option<ColorImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sensor: SensorModel,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn has_color(&self) -> bool {
        self.frames.first().is_some_and(|f| f.color.is_some())
    }
}

/// `timestamp tx ty tz qx qy qz qw` lines; blank lines and `#` comments are
/// skipped.
pub fn parse_poses(text: &str) -> Result<Vec<(f64, Pose)>, DatasetError> {
    let mut out: Vec<(f64, Pose)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| DatasetError::BadPose { line: line_no, message };
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != 8 {
            return Err(bad(format!("expected 8 values, found {}", values.len())));
        }
        let t = values[0];
        if !t.is_finite() {
            return Err(bad("non-finite timestamp".into()));
        }
        if out.last().is_some_and(|(prev, _)| t <= *prev) {
            return Err(DatasetError::NonMonotoneTimestamp { line: line_no });
        }
        let pose = Pose::from_quaternion(
            Vector3::new(values[1], values[2], values[3]),
            [values[4], values[5], values[6], values[7]],
        )
        .map_err(|e| bad(e.to_string()))?;
        out.push((t, pose));
    }
    Ok(out)
}

pub fn format_pose(timestamp: f64, pose: &Pose) -> String {
    let t = pose.translation();
    let q = pose.quaternion();
    format!(
        "{:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
        timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
    )
}

/// Depth in meters to millimeter pixels; out-of-range depths become 0.
pub fn depth_to_millimeters(depth: f32) -> u16 {
    let mm = (depth as f64 * 1000.0).round();
    if depth > 0.0 && mm >= 1.0 && mm <= u16::MAX as f64 {
        mm as u16
    } else {
        0
    }
}

pub fn millimeters_to_depth(mm: u16) -> f32 {
    mm as f32 / 1000.0
}

/// Rounds every depth to what a 16-bit millimeter image stores.
pub fn quantize_depth(depth: &DepthImage) -> DepthImage {
    let data = depth
        .data()
        .iter()
        .map(|d| millimeters_to_depth(depth_to_millimeters(*d)))
        .collect();
    DepthImage::from_vec(depth.width(), depth.height(), data).expect("quantized depths are valid")
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> DatasetError {
    DatasetError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_depth_png(path: &Path) -> Result<DepthImage, DatasetError> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let image::DynamicImage::ImageLuma16(img) = img else {
        return Err(image_error(path, "depth must be 16-bit grayscale"));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(millimeters_to_depth).collect();
    Ok(DepthImage::from_vec(w, h, data)?)
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<(), DatasetError> {
    let raw: Vec<u16> = depth.data().iter().map(|d| depth_to_millimeters(*d)).collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, raw).expect("sizes match");
    img.save(path).map_err(|e| image_error(path, e))
}

pub fn read_color_png(path: &Path) -> Result<ColorImage, DatasetError> {
    let img = image::open(path).map_err(|e| image_error(path, e))?;
    let image::DynamicImage::ImageRgb8(img) = img else {
        return Err(image_error(path, "color must be 8-bit RGB"));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Ok(ColorImage::from_vec(w, h, data)?)
}

pub fn write_color_png(path: &Path, color: &ColorImage) -> Result<(), DatasetError> {
    let raw: Vec<u8> = color.data().iter().flatten().copied().collect();
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(color.width() as u32, color.height() as u32, raw).expect("sizes match");
    img.save(path).map_err(|e| image_error(path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let read = |name: &str| -> Result<String, DatasetError> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(DatasetError::MissingFile(path));
        }
        fs::read_to_string(&path).map_err(io_err(&path))
    };
    let sensor = SensorModel::parse(&read(INTRINSICS_FILE)?)?;
    let poses = parse_poses(&read(POSES_FILE)?)?;
    let depth_dir = dir.join(DEPTH_DIR);
    if !depth_dir.is_dir() {
        return Err(DatasetError::MissingFile(depth_dir));
    }
    let depth_files = frame_files(&depth_dir)?;
    if depth_files.len() != poses.len() {
        return Err(DatasetError::FrameCount {
            poses: poses.len(),
            depth: depth_files.len(),
        });
    }
    let color_dir = dir.join(COLOR_DIR);
    let color_files = if color_dir.is_dir() {
        let files = frame_files(&color_dir)?;
        if files.len() != depth_files.len() {
            return Err(DatasetError::ColorCount {
                color: files.len(),
                depth: depth_files.len(),
            });
        }
        Some(files)
    } else {
        None
    };
    let expected = (sensor.width(), sensor.height());
    let mut frames = Vec::with_capacity(poses.len());
    for (i, ((timestamp, pose), depth_path)) in poses.into_iter().zip(&depth_files).enumerate() {
        let depth = read_depth_png(depth_path)?;
        let got = (depth.width(), depth.height());
        if got != expected {
            return Err(DatasetError::DimensionMismatch { frame: i, expected, got });
        }
        let color = match &color_files {
            Some(files) => {
                let c = read_color_png(&files[i])?;
                let got = (c.width(), c.height());
                if got != expected {
                    return Err(DatasetError::DimensionMismatch { frame: i, expected, got });
                }
                Some(c)
            }
            None => None,
        };
        frames.push(Frame {
            timestamp,
            pose,
            depth,
            color,
        });
    }
    Ok(Dataset { sensor, frames })
}

/// Writes the dataset into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<(), DatasetError> {
    let depth_dir = dir.join(DEPTH_DIR);
    fs::create_dir_all(&depth_dir).map_err(io_err(&depth_dir))?;
    let path = dir.join(INTRINSICS_FILE);
    fs::write(&path, dataset.sensor.to_text()).map_err(io_err(&path))?;
    let mut poses = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for f in &dataset.frames {
        poses.push_str(&format_pose(f.timestamp, &f.pose));
        poses.push('\n');
    }
    let path = dir.join(POSES_FILE);
    fs::write(&path, poses).map_err(io_err(&path))?;
    let color_dir = dir.join(COLOR_DIR);
    if dataset.has_color() {
        fs::create_dir_all(&color_dir).map_err(io_err(&color_dir))?;
    }
    for (i, f) in dataset.frames.iter().enumerate() {
        let name = format!("{i:06}.png");
        write_depth_png(&depth_dir.join(&name), &f.depth)?;
        if let Some(c) = &f.color {
            write_color_png(&color_dir.join(&name), c)?;
        }
    }
    Ok(())
}

/// Seconds between synthetic frames.
pub const FRAME_PERIOD: f64 = 0.1;

/// Renders `scene` from each pose. Depths are stored as millimeters would
/// store them and poses as their text form would, so saving and loading
/// the result gives it back exactly.
pub fn synthesize(scene: &Scene, sensor: &SensorModel, poses: &[Pose], color: bool) -> Dataset {
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let pose = Pose::from_quaternion(pose.translation(), pose.quaternion()).expect("unit quaternion");
            Frame {
                timestamp: i as f64 * FRAME_PERIOD,
                depth: quantize_depth(&render_depth(scene, &pose, sensor)),
                color: color.then(|| render_color(scene, &pose, sensor)),
                pose,
            }
        })
        .collect();
    Dataset {
        sensor: *sensor,
        frames,
    }
}

//! Ray-based volumetric sampling: each valid depth pixel is extended inward
//! along its camera ray into `K` samples, the first lying on the surface.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::{CameraModel, Pixel};
use crate::error::{Error, Result};

/// Per-pixel metric ray distances, row-major. Non-finite or non-positive
/// entries mark invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width as usize * height as usize,
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width as usize + col]
    }

    /// Depth at `(col, row)` if the pixel is valid.
    pub fn valid(&self, col: usize, row: usize) -> Option<f64> {
        let d = self.get(col, row);
        (d.is_finite() && d > 0.0).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| d.is_finite() && **d > 0.0).count()
    }
}

/// Per-pixel semantic class ids (0 = none), row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    width: u32,
    height: u32,
    ids: Vec<u8>,
}

impl ClassMap {
    pub fn new(width: u32, height: u32, ids: Vec<u8>) -> Result<Self> {
        if ids.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "class map {width}x{height} needs {} ids, got {}",
                width as usize * height as usize,
                ids.len()
            )));
        }
        Ok(Self { width, height, ids })
    }

    pub fn filled(width: u32, height: u32, id: u8) -> Self {
        Self {
            width,
            height,
            ids: vec![id; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn ids(&self) -> &[u8] {
        &self.ids
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.ids[row * self.width as usize + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Samples per ray, `K >= 1`.
    pub samples_per_ray: usize,
    /// Total inward extent of the samples in meters.
    pub scale: f64,
    /// Pixel step in both image directions.
    pub stride: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 16,
            scale: 0.48,
            stride: 4,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray == 0 {
            return Err(Error::Config("samples_per_ray must be >= 1".into()));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Config(format!("sampling scale must be > 0, got {}", self.scale)));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Distance between consecutive samples. With a single sample per ray the
    /// whole extent is attributed to it.
    pub fn spacing(&self) -> f64 {
        spacing_for(self.scale, self.samples_per_ray)
    }
}

fn spacing_for(scale: f64, k: usize) -> f64 {
    scale / (k.max(2) - 1) as f64
}

/// `K` offsets `linspace(0, 1, K) * scale`.
pub fn sample_offsets(cfg: &SamplingConfig) -> Vec<f64> {
    offsets_for(cfg.scale, cfg.samples_per_ray)
}

fn offsets_for(scale: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![0.0];
    }
    let last = (k - 1) as f64;
    (0..k)
        .map(|i| if i + 1 == k { scale } else { i as f64 / last * scale })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub col: usize,
    pub row: usize,
    pub pixel: Pixel,
    /// 1-based sample index along the ray; `k = 1` is the surface.
    pub k: usize,
    /// Camera-frame position.
    pub position: Point3<f64>,
    /// Offset spacing along this ray.
    pub spacing: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Samples {
    pub points: Vec<SamplePoint>,
    /// Strided pixels skipped because their depth was invalid.
    pub invalid_pixels: usize,
}

/// Samples every `stride`-th pixel (starting at 0) of `depth` at its pixel
/// center. Output is pixel-major (row, then column), then `k`.
pub fn volumetric_sample(depth: &DepthMap, cam: &CameraModel, cfg: &SamplingConfig) -> Result<Samples> {
    sample_impl(depth, cam, cfg, None)
}

/// As [`volumetric_sample`], with a per-pixel inward extent replacing
/// `cfg.scale`. Pixels whose scale is not finite and positive are skipped.
pub fn volumetric_sample_with_scale_map(
    depth: &DepthMap,
    cam: &CameraModel,
    cfg: &SamplingConfig,
    scale_map: &[f64],
) -> Result<Samples> {
    if scale_map.len() != depth.values.len() {
        return Err(Error::InvalidInput(format!(
            "scale map has {} entries, depth map has {}",
            scale_map.len(),
            depth.values.len()
        )));
    }
    sample_impl(depth, cam, cfg, Some(scale_map))
}

fn sample_impl(
    depth: &DepthMap,
    cam: &CameraModel,
    cfg: &SamplingConfig,
    scale_map: Option<&[f64]>,
) -> Result<Samples> {
    cfg.validate()?;
    if depth.width != cam.width() || depth.height != cam.height() {
        return Err(Error::InvalidInput(format!(
            "depth map is {}x{} but camera image is {}x{}",
            depth.width,
            depth.height,
            cam.width(),
            cam.height()
        )));
    }
    let k = cfg.samples_per_ray;
    let default_offsets = sample_offsets(cfg);
    let default_spacing = cfg.spacing();
    let width = depth.width as usize;
    let rows: Vec<usize> = (0..depth.height as usize).step_by(cfg.stride).collect();

    let per_row: Vec<Result<(Vec<SamplePoint>, usize)>> = rows
        .par_iter()
        .map(|&row| {
            let mut points = Vec::new();
            let mut invalid = 0;
            for col in (0..width).step_by(cfg.stride) {
                let Some(d) = depth.valid(col, row) else {
                    invalid += 1;
                    continue;
                };
                let (offsets, spacing) = match scale_map {
                    None => (None, default_spacing),
                    Some(map) => {
                        let s = map[row * width + col];
                        if !(s.is_finite() && s > 0.0) {
                            invalid += 1;
                            continue;
                        }
                        (Some(offsets_for(s, k)), spacing_for(s, k))
                    }
                };
                let offsets = offsets.as_deref().unwrap_or(&default_offsets);
                let pixel = Pixel::center(col, row);
                let ray = cam.ray_direction(pixel)?;
                points.extend(offsets.iter().enumerate().map(|(i, delta)| SamplePoint {
                    col,
                    row,
                    pixel,
                    k: i + 1,
                    position: Point3::from(ray * (d + delta)),
                    spacing,
                }));
            }
            Ok((points, invalid))
        })
        .collect();

    let mut out = Samples::default();
    for r in per_row {
        let (points, invalid) = r?;
        out.points.extend(points);
        out.invalid_pixels += invalid;
    }
    Ok(out)
}

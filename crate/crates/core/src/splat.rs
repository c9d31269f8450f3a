//! Gaussian-to-voxel splatting.
//!
//! Each voxel center `p` receives the occupancy score
//! `α(p) = 1 - ∏ᵢ (1 - aᵢ gᵢ(p))` and per-class masses
//! `m_k(p) = Σᵢ aᵢ gᵢ(p) softmax(cᵢ)_k`, where `gᵢ` is the Gaussian kernel
//! truncated to zero beyond Mahalanobis distance 3. The truncation makes the
//! bounding-box culling in [`neighbor_cull`] exact.

use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{softmax, Frame, GaussianPrimitive, GaussianSet, MAX_CONDITION};

/// Kernel support radius in Mahalanobis units.
pub const CUTOFF_MAHALANOBIS: f64 = 3.0;
pub const CUTOFF_MAHALANOBIS_SQ: f64 = CUTOFF_MAHALANOBIS * CUTOFF_MAHALANOBIS;

/// Default score threshold separating empty from occupied voxels.
pub const DEFAULT_THETA_OCC: f64 = 0.5;

/// Slack, in voxel units, added to cull ranges against rounding.
const CULL_SLACK: f64 = 1e-9;

/// Axis-aligned voxel lattice. Voxel `(i, j, k)` has its center at
/// `origin + (i + ½, j + ½, k + ½) · voxel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: Point3<f64>,
    pub num_classes: usize,
}

impl Default for GridSpec {
    /// 60×60×36 voxels of 8 cm with 12 classes (label 0 = empty).
    fn default() -> Self {
        Self {
            dims: [60, 60, 36],
            voxel_size: 0.08,
            origin: Point3::origin(),
            num_classes: 12,
        }
    }
}

impl GridSpec {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: Point3<f64>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            dims,
            voxel_size,
            origin,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Grid covering the box `[min, max]` with `⌈l / voxel_size⌉` voxels per axis.
    pub fn covering(min: Point3<f64>, max: Point3<f64>, voxel_size: f64, num_classes: usize) -> Result<Self> {
        let extent = max - min;
        if !extent.iter().all(|l| l.is_finite() && *l > 0.0) {
            return Err(Error::InvalidInput("covering box must have positive extent".into()));
        }
        let dims = [0, 1, 2].map(|a| {
            let n = extent[a] / voxel_size;
            // tolerate rounding in extents that are exact multiples
            (n - 1e-9).ceil().max(1.0) as usize
        });
        Self::new(dims, voxel_size, min, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput("grid dimensions must be >= 1".into()));
        }
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::InvalidInput(format!("voxel size must be > 0, got {}", self.voxel_size)));
        }
        if !self.origin.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::InvalidInput(format!("num_classes must be in 2..=256, got {}", self.num_classes)));
        }
        Ok(())
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Linear index, x-major: `(x · Y + y) · Z + z`.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let z = index % self.dims[2];
        let rest = index / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], z]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        let half = Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5);
        self.origin + half * self.voxel_size
    }

    pub fn max_corner(&self) -> Point3<f64> {
        self.origin + Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.voxel_size
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let rel = (p - self.origin) / self.voxel_size;
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = rel[a].floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    /// Same lattice up to `tol` on the floating-point fields.
    pub fn compatible(&self, other: &GridSpec, tol: f64) -> bool {
        self.dims == other.dims
            && self.num_classes == other.num_classes
            && (self.voxel_size - other.voxel_size).abs() <= tol
            && (self.origin - other.origin).abs().max() <= tol
    }
}

/// Half-open voxel index box `lo..hi` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoxelRange {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl VoxelRange {
    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.lo[a] >= self.hi[a])
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (0..3).map(|a| self.hi[a] - self.lo[a]).product()
        }
    }

    pub fn contains(&self, v: [usize; 3]) -> bool {
        (0..3).all(|a| self.lo[a] <= v[a] && v[a] < self.hi[a])
    }
}

/// Voxels whose centers can lie within the kernel support of `g`: the
/// axis-aligned box of the Mahalanobis-3 ellipsoid (half-extent
/// `3·√Σᵢᵢ`), clipped to the grid.
pub fn neighbor_cull(g: &GaussianPrimitive, spec: &GridSpec) -> VoxelRange {
    let cov = g.covariance();
    let half = Vector3::new(cov[(0, 0)], cov[(1, 1)], cov[(2, 2)]).map(|v| CUTOFF_MAHALANOBIS * v.sqrt());
    cull_box(g.mean(), &half, spec)
}

fn cull_box(mean: &Point3<f64>, half: &Vector3<f64>, spec: &GridSpec) -> VoxelRange {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let rel = mean[a] - spec.origin[a];
        let first = ((rel - half[a]) / spec.voxel_size - 0.5 - CULL_SLACK).ceil();
        let last = ((rel + half[a]) / spec.voxel_size - 0.5 + CULL_SLACK).floor();
        let n = spec.dims[a] as f64;
        let first = first.clamp(0.0, n);
        let last_excl = (last + 1.0).clamp(0.0, n);
        lo[a] = first as usize;
        hi[a] = last_excl as usize;
    }
    VoxelRange { lo, hi }
}

/// Semantic occupancy grid: a label (0 = empty) and a score per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: GridSpec,
    labels: Vec<u8>,
    scores: Vec<f64>,
    masses: Option<Vec<f64>>,
}

impl OccupancyGrid {
    pub fn empty(spec: GridSpec) -> Self {
        let n = spec.num_voxels();
        Self {
            spec,
            labels: vec![0; n],
            scores: vec![0.0; n],
            masses: None,
        }
    }

    pub fn from_parts(spec: GridSpec, labels: Vec<u8>, scores: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_voxels();
        if labels.len() != n || scores.len() != n {
            return Err(Error::GridMismatch(format!(
                "expected {n} voxels, got {} labels and {} scores",
                labels.len(),
                scores.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= spec.num_classes) {
            return Err(Error::InvalidLabel {
                label: *l as usize,
                max: spec.num_classes - 1,
            });
        }
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidInput("scores must lie in [0, 1]".into()));
        }
        Ok(Self {
            spec,
            labels,
            scores,
            masses: None,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Per-class masses, `num_classes` consecutive values per voxel, when
    /// the grid was produced by [`splat`].
    pub fn masses(&self) -> Option<&[f64]> {
        self.masses.as_deref()
    }

    pub fn label(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.spec.index(x, y, z)]
    }

    pub fn score(&self, x: usize, y: usize, z: usize) -> f64 {
        self.scores[self.spec.index(x, y, z)]
    }

    pub fn set_voxel(&mut self, index: usize, label: u8, score: f64) {
        self.labels[index] = label;
        self.scores[index] = score;
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Re-derives labels from stored masses with a different threshold.
    pub fn reclassify(&mut self, theta_occ: f64) -> Result<()> {
        let Some(masses) = &self.masses else {
            return Err(Error::InvalidInput("grid carries no class masses".into()));
        };
        let nc = self.spec.num_classes;
        for (i, label) in self.labels.iter_mut().enumerate() {
            *label = classify_voxel(self.scores[i], &masses[i * nc..(i + 1) * nc], theta_occ) as u8;
        }
        Ok(())
    }
}

/// Empty (0) below `theta_occ`, else the non-empty class of largest mass;
/// ties go to the lowest class id.
pub fn classify_voxel(score: f64, masses: &[f64], theta_occ: f64) -> usize {
    if !(score >= theta_occ) || masses.len() < 2 {
        return 0;
    }
    let mut best = 1;
    for (k, &m) in masses.iter().enumerate().skip(2) {
        if m > masses[best] {
            best = k;
        }
    }
    best
}

struct Kernel {
    mean: Point3<f64>,
    inv_cov: Matrix3<f64>,
    opacity: f64,
    probs: Vec<f64>,
    range: VoxelRange,
}

impl Kernel {
    fn new(g: &GaussianPrimitive, spec: &GridSpec) -> Result<Self> {
        let cond = g.condition_number();
        if cond > MAX_CONDITION {
            return Err(Error::DegenerateGaussian(cond));
        }
        Ok(Self {
            mean: *g.mean(),
            inv_cov: g.inverse_covariance(),
            opacity: g.opacity(),
            probs: softmax(g.logits()),
            range: neighbor_cull(g, spec),
        })
    }
}

/// Splats a world-frame set into a grid and classifies every voxel with
/// `theta_occ`. Voxels outside every kernel's support score 0, label 0.
pub fn splat(set: &GaussianSet, spec: &GridSpec, theta_occ: f64) -> Result<OccupancyGrid> {
    spec.validate()?;
    if set.frame() != Frame::World {
        return Err(Error::FrameMismatch {
            expected: Frame::World,
            actual: set.frame(),
        });
    }
    if set.num_classes() != spec.num_classes {
        return Err(Error::ClassCountMismatch {
            expected: spec.num_classes,
            actual: set.num_classes(),
        });
    }

    let kernels: Vec<Kernel> = set
        .gaussians()
        .par_iter()
        .map(|g| Kernel::new(g, spec))
        .collect::<Result<_>>()?;

    let [nx, ny, nz] = spec.dims;
    let nc = spec.num_classes;
    let mut layers: Vec<Vec<u32>> = vec![Vec::new(); nx];
    for (i, k) in kernels.iter().enumerate() {
        if k.range.is_empty() || k.opacity == 0.0 {
            continue;
        }
        for layer in &mut layers[k.range.lo[0]..k.range.hi[0]] {
            layer.push(i as u32);
        }
    }

    let layer_voxels = ny * nz;
    let mut complement = vec![1.0f64; spec.num_voxels()];
    let mut masses = vec![0.0f64; spec.num_voxels() * nc];
    complement
        .par_chunks_mut(layer_voxels)
        .zip(masses.par_chunks_mut(layer_voxels * nc))
        .enumerate()
        .for_each(|(x, (comp, mass))| {
            for &ki in &layers[x] {
                let k = &kernels[ki as usize];
                for y in k.range.lo[1]..k.range.hi[1] {
                    for z in k.range.lo[2]..k.range.hi[2] {
                        let d = spec.voxel_center(x, y, z) - k.mean;
                        let m2 = d.dot(&(k.inv_cov * d));
                        if m2 > CUTOFF_MAHALANOBIS_SQ {
                            continue;
                        }
                        let c = k.opacity * (-0.5 * m2).exp();
                        let v = y * nz + z;
                        comp[v] *= 1.0 - c;
                        for (m, p) in mass[v * nc..(v + 1) * nc].iter_mut().zip(&k.probs) {
                            *m += c * p;
                        }
                    }
                }
            }
        });

    let scores: Vec<f64> = complement.iter().map(|c| (1.0 - c).clamp(0.0, 1.0)).collect();
    let labels: Vec<u8> = scores
        .par_iter()
        .enumerate()
        .map(|(i, &s)| classify_voxel(s, &masses[i * nc..(i + 1) * nc], theta_occ) as u8)
        .collect();
    Ok(OccupancyGrid {
        spec: spec.clone(),
        labels,
        scores,
        masses: Some(masses),
    })
}

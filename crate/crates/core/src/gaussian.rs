//! Semantic Gaussian primitives: covariance, kernel evaluation, opacity
//! pruning and the attribute providers that turn volumetric samples into
//! primitives.

use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::sampling::SamplePoint;

/// Smallest admissible axis scale in meters. Smaller scales are raised to it.
pub const MIN_SCALE: f64 = 1e-4;

/// Kernels whose covariance condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Default opacity pruning threshold.
pub const DEFAULT_PRUNE_TAU: f64 = 0.01;

/// Coordinate frame a set of Gaussians lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    mean: Point3<f64>,
    scale: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
    opacity: f64,
    logits: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn new(
        mean: Point3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if !mean.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian("non-finite mean".into()));
        }
        if !scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidGaussian(format!(
                "scales must be finite and positive, got ({}, {}, {})",
                scale.x, scale.y, scale.z
            )));
        }
        if !rotation.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGaussian("non-finite rotation".into()));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::InvalidGaussian(format!("opacity {opacity} outside [0, 1]")));
        }
        if logits.is_empty() || !logits.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGaussian("logits must be non-empty and finite".into()));
        }
        Ok(Self {
            mean,
            scale: scale.map(|s| s.max(MIN_SCALE)),
            rotation,
            opacity,
            logits,
        })
    }

    /// Builds a primitive from a `(w, x, y, z)` quaternion, normalizing it.
    pub fn from_wxyz(
        mean: Point3<f64>,
        scale: Vector3<f64>,
        wxyz: [f64; 4],
        opacity: f64,
        logits: Vec<f64>,
    ) -> Result<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !(norm.is_finite() && norm > 1e-12) {
            return Err(Error::InvalidGaussian("quaternion has zero or non-finite norm".into()));
        }
        Self::new(mean, scale, UnitQuaternion::from_quaternion(q), opacity, logits)
    }

    pub fn mean(&self) -> &Point3<f64> {
        &self.mean
    }

    pub fn scale(&self) -> &Vector3<f64> {
        &self.scale
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn num_classes(&self) -> usize {
        self.logits.len()
    }

    /// `Σ = R diag(s²) Rᵀ`, symmetrized.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let m = r * Matrix3::from_diagonal(&self.scale.component_mul(&self.scale)) * r.transpose();
        (m + m.transpose()) * 0.5
    }

    /// `Σ⁻¹ = R diag(s⁻²) Rᵀ`, from the factored form.
    pub fn inverse_covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let inv_sq = self.scale.map(|s| 1.0 / (s * s));
        let m = r * Matrix3::from_diagonal(&inv_sq) * r.transpose();
        (m + m.transpose()) * 0.5
    }

    pub fn condition_number(&self) -> f64 {
        let ratio = self.scale.max() / self.scale.min();
        ratio * ratio
    }

    /// Squared Mahalanobis distance of `p` from the mean.
    pub fn mahalanobis_sq(&self, p: &Point3<f64>) -> f64 {
        let local = self.rotation.inverse_transform_vector(&(p - self.mean));
        let z = local.component_div(&self.scale);
        z.norm_squared()
    }

    /// Kernel value `exp(-½ (p-μ)ᵀ Σ⁻¹ (p-μ))`, in `(0, 1]`.
    pub fn evaluate(&self, p: &Point3<f64>) -> Result<f64> {
        if !p.coords.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite query point".into()));
        }
        let cond = self.condition_number();
        if cond > MAX_CONDITION {
            return Err(Error::DegenerateGaussian(cond));
        }
        Ok((-0.5 * self.mahalanobis_sq(p)).exp())
    }

    pub fn softmax(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    /// Largest softmax probability of the semantic logits.
    pub fn top1_confidence(&self) -> f64 {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = self.logits.iter().map(|c| (c - max).exp()).sum();
        1.0 / denom
    }

    /// Applies a rigid transform to mean and rotation.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self {
            mean: iso.transform_point(&self.mean),
            scale: self.scale,
            rotation: iso.rotation * self.rotation,
            opacity: self.opacity,
            logits: self.logits.clone(),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|c| (c - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// An ordered collection of primitives sharing a frame and class count.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    gaussians: Vec<GaussianPrimitive>,
    frame: Frame,
    num_classes: usize,
}

impl GaussianSet {
    pub fn new(frame: Frame, num_classes: usize) -> Self {
        Self {
            gaussians: Vec::new(),
            frame,
            num_classes,
        }
    }

    pub fn from_vec(frame: Frame, num_classes: usize, gaussians: Vec<GaussianPrimitive>) -> Result<Self> {
        if let Some(g) = gaussians.iter().find(|g| g.num_classes() != num_classes) {
            return Err(Error::ClassCountMismatch {
                expected: num_classes,
                actual: g.num_classes(),
            });
        }
        Ok(Self {
            gaussians,
            frame,
            num_classes,
        })
    }

    pub fn push(&mut self, g: GaussianPrimitive) -> Result<()> {
        if g.num_classes() != self.num_classes {
            return Err(Error::ClassCountMismatch {
                expected: self.num_classes,
                actual: g.num_classes(),
            });
        }
        self.gaussians.push(g);
        Ok(())
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[GaussianPrimitive] {
        &self.gaussians
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GaussianPrimitive> {
        self.gaussians.iter()
    }

    pub fn into_vec(self) -> Vec<GaussianPrimitive> {
        self.gaussians
    }

    pub(crate) fn gaussians_mut(&mut self) -> &mut Vec<GaussianPrimitive> {
        &mut self.gaussians
    }

    /// Keeps the members with opacity `>= tau`, in order.
    pub fn prune(&self, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidInput(format!("prune threshold {tau} outside [0, 1]")));
        }
        Ok(Self {
            gaussians: self.gaussians.iter().filter(|g| g.opacity >= tau).cloned().collect(),
            frame: self.frame,
            num_classes: self.num_classes,
        })
    }

    /// Transforms a camera-frame set into the world frame of `pose`.
    pub fn to_world(&self, pose: &Isometry3<f64>) -> Result<Self> {
        if self.frame != Frame::Camera {
            return Err(Error::FrameMismatch {
                expected: Frame::Camera,
                actual: self.frame,
            });
        }
        Ok(Self {
            gaussians: self.gaussians.iter().map(|g| g.transformed(pose)).collect(),
            frame: Frame::World,
            num_classes: self.num_classes,
        })
    }
}

/// Knobs of the heuristic attribute provider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeConfig {
    /// Isotropic scale as a multiple of the sample spacing.
    pub sigma_factor: f64,
    /// Opacity of the surface sample.
    pub opacity_init: f64,
    /// Per-sample exponential opacity decay along the ray.
    pub opacity_decay: f64,
    /// Logit assigned to the labelled class (others are 0).
    pub logit_gain: f64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            sigma_factor: 0.75,
            opacity_init: 0.9,
            opacity_decay: 0.15,
            logit_gain: 6.0,
        }
    }
}

impl AttributeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_factor.is_finite() && self.sigma_factor > 0.0) {
            return Err(Error::Config(format!("sigma_factor must be > 0, got {}", self.sigma_factor)));
        }
        if !(0.0..=1.0).contains(&self.opacity_init) {
            return Err(Error::Config(format!("opacity_init must lie in [0, 1], got {}", self.opacity_init)));
        }
        if !(self.opacity_decay.is_finite() && self.opacity_decay >= 0.0) {
            return Err(Error::Config(format!("opacity_decay must be >= 0, got {}", self.opacity_decay)));
        }
        if !self.logit_gain.is_finite() {
            return Err(Error::Config("logit_gain must be finite".into()));
        }
        Ok(())
    }
}

/// Supplies Gaussian attributes for a volumetric sample.
///
/// `ordinal` is the position of the sample in the sampler's output order.
pub trait AttributeProvider: Sync {
    fn attributes(&self, ordinal: usize, sample: &SamplePoint, label: usize) -> Result<GaussianPrimitive>;

    fn num_classes(&self) -> usize;
}

/// Closed-form stand-in for a learned attribute head: isotropic scale tied to
/// the sample spacing, opacity fading with sample index, one-hot logits.
#[derive(Debug, Clone, Copy)]
pub struct HeuristicAttributes {
    pub config: AttributeConfig,
    pub num_classes: usize,
}

impl HeuristicAttributes {
    pub fn new(config: AttributeConfig, num_classes: usize) -> Self {
        Self { config, num_classes }
    }
}

impl AttributeProvider for HeuristicAttributes {
    fn attributes(&self, _ordinal: usize, sample: &SamplePoint, label: usize) -> Result<GaussianPrimitive> {
        heuristic_attributes(sample, label, &self.config, self.num_classes)
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

pub fn heuristic_attributes(
    sample: &SamplePoint,
    label: usize,
    cfg: &AttributeConfig,
    num_classes: usize,
) -> Result<GaussianPrimitive> {
    if label == 0 || label >= num_classes {
        return Err(Error::InvalidLabel {
            label,
            max: num_classes.saturating_sub(1),
        });
    }
    let sigma = (cfg.sigma_factor * sample.spacing).max(MIN_SCALE);
    let opacity = (cfg.opacity_init * (-cfg.opacity_decay * (sample.k as f64 - 1.0)).exp()).clamp(0.0, 1.0);
    let mut logits = vec![0.0; num_classes];
    logits[label] = cfg.logit_gain;
    GaussianPrimitive::new(
        sample.position,
        Vector3::repeat(sigma),
        UnitQuaternion::identity(),
        opacity,
        logits,
    )
}

/// Attributes taken from a pre-computed table (e.g. a GSET file), indexed by
/// sample ordinal. Means always come from the sample itself.
#[derive(Debug, Clone)]
pub struct TableAttributes {
    table: GaussianSet,
}

impl TableAttributes {
    pub fn new(table: GaussianSet) -> Self {
        Self { table }
    }
}

impl AttributeProvider for TableAttributes {
    fn attributes(&self, ordinal: usize, sample: &SamplePoint, _label: usize) -> Result<GaussianPrimitive> {
        let row = self.table.gaussians().get(ordinal).ok_or_else(|| {
            Error::InvalidInput(format!(
                "attribute table has {} rows, sample {ordinal} requested",
                self.table.len()
            ))
        })?;
        GaussianPrimitive::new(
            sample.position,
            row.scale,
            row.rotation,
            row.opacity,
            row.logits.clone(),
        )
    }

    fn num_classes(&self) -> usize {
        self.table.num_classes()
    }
}

//! Training-free incremental fusion of per-frame Gaussians into a global,
//! world-frame memory bank.
//!
//! Memory members act as anchors. Every incoming Gaussian is matched to its
//! nearest anchor within `epsilon` (ties go to the lowest anchor id), so each
//! incoming Gaussian contributes to at most one anchor. Each matched anchor
//! takes the confidence- and time-weighted average
//!
//! ```text
//! θ ← (γ·p_mem·θ_mem + (1-γ)·Σⱼ pⱼ·θⱼ) / (γ·p_mem + (1-γ)·Σⱼ pⱼ)
//! ```
//!
//! for θ in {mean, covariance, opacity, logits}, with `p` the top-1 class
//! confidence. Unmatched incoming Gaussians are appended verbatim.

use nalgebra::{Matrix3, Point3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{Frame, GaussianPrimitive, GaussianSet, MIN_SCALE};
use crate::spatial_hash::SpatialHash;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Match radius in meters.
    pub epsilon: f64,
    /// Weight of the memory side, in (0, 1). Values below 0.5 favor new frames.
    pub gamma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.08,
            gamma: 0.4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    /// Incoming Gaussians absorbed by an anchor.
    pub matched: usize,
    /// Incoming Gaussians appended to the bank.
    pub inserted: usize,
    /// Anchors that received at least one match.
    pub anchors_updated: usize,
}

/// Weighted average of one anchor and its matches, before the covariance is
/// re-factored into scale and rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedAttributes {
    pub mean: Point3<f64>,
    pub covariance: Matrix3<f64>,
    pub opacity: f64,
    pub logits: Vec<f64>,
}

impl FusedAttributes {
    /// Refactors the covariance by symmetric eigendecomposition. Eigenvalues
    /// are floored at the squared minimum scale.
    pub fn into_primitive(self) -> Result<GaussianPrimitive> {
        let (scale, rotation) = factor_covariance(&self.covariance);
        GaussianPrimitive::new(self.mean, scale, rotation, self.opacity.clamp(0.0, 1.0), self.logits)
    }
}

/// Splits a symmetric PSD matrix into axis scales and a proper rotation.
pub fn factor_covariance(cov: &Matrix3<f64>) -> (Vector3<f64>, UnitQuaternion<f64>) {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vectors = eig.eigenvectors;
    if vectors.determinant() < 0.0 {
        vectors.column_mut(2).neg_mut();
    }
    let scale = eig.eigenvalues.map(|l| l.max(MIN_SCALE * MIN_SCALE).sqrt());
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(vectors));
    (scale, rotation)
}

/// Applies the weighted-average update to `memory` with its matched
/// incoming Gaussians.
pub fn fuse_attributes(memory: &GaussianPrimitive, matches: &[&GaussianPrimitive], gamma: f64) -> FusedAttributes {
    let nc = memory.num_classes();
    let w_mem = gamma * memory.top1_confidence();
    let mut total = w_mem;
    let mut mean = memory.mean().coords * w_mem;
    let mut cov = memory.covariance() * w_mem;
    let mut opacity = memory.opacity() * w_mem;
    let mut logits: Vec<f64> = memory.logits().iter().map(|c| c * w_mem).collect();
    for g in matches {
        let w = (1.0 - gamma) * g.top1_confidence();
        total += w;
        mean += g.mean().coords * w;
        cov += g.covariance() * w;
        opacity += g.opacity() * w;
        for (acc, c) in logits.iter_mut().zip(g.logits()) {
            *acc += c * w;
        }
    }
    debug_assert_eq!(logits.len(), nc);
    let inv = 1.0 / total;
    let cov = cov * inv;
    FusedAttributes {
        mean: Point3::from(mean * inv),
        covariance: (cov + cov.transpose()) * 0.5,
        opacity: opacity * inv,
        logits: logits.into_iter().map(|c| c * inv).collect(),
    }
}

/// World-frame Gaussian memory with a spatial hash over the means.
#[derive(Debug, Clone)]
pub struct GaussianMemoryBank {
    set: GaussianSet,
    index: SpatialHash,
    frames: u64,
}

impl GaussianMemoryBank {
    /// Empty bank whose hash cells have edge `cell_size` (normally epsilon).
    pub fn new(num_classes: usize, cell_size: f64) -> Self {
        Self {
            set: GaussianSet::new(Frame::World, num_classes),
            index: SpatialHash::new(cell_size),
            frames: 0,
        }
    }

    /// Restores a bank from a world-frame set (e.g. a checkpoint).
    pub fn from_set(set: GaussianSet, cell_size: f64) -> Result<Self> {
        if set.frame() != Frame::World {
            return Err(Error::FrameMismatch {
                expected: Frame::World,
                actual: set.frame(),
            });
        }
        let mut index = SpatialHash::new(cell_size);
        for (i, g) in set.iter().enumerate() {
            index.insert(i, g.mean());
        }
        Ok(Self { set, index, frames: 0 })
    }

    pub fn gaussians(&self) -> &GaussianSet {
        &self.set
    }

    pub fn into_set(self) -> GaussianSet {
        self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.set.num_classes()
    }

    /// Number of frames fused so far.
    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn index(&self) -> &SpatialHash {
        &self.index
    }

    /// Ids of members with `‖μ - q‖ <= eps`, ascending.
    pub fn radius_neighbors(&self, q: &Point3<f64>, eps: f64) -> Vec<usize> {
        let members = self.set.gaussians();
        let mut out: Vec<usize> = self
            .index
            .candidates(q, eps)
            .filter(|&i| (members[i].mean() - q).norm() <= eps)
            .collect();
        out.sort_unstable();
        out
    }

    /// Nearest member within `eps` of `q`; ties go to the lowest id.
    pub fn nearest_within(&self, q: &Point3<f64>, eps: f64) -> Option<usize> {
        let members = self.set.gaussians();
        let mut best: Option<(f64, usize)> = None;
        for i in self.index.candidates(q, eps) {
            let d = (members[i].mean() - q).norm();
            if d > eps {
                continue;
            }
            match best {
                Some((bd, bi)) if d > bd || (d == bd && i > bi) => {}
                _ => best = Some((d, i)),
            }
        }
        best.map(|(_, i)| i)
    }

    /// Fuses one frame of world-frame Gaussians into the bank.
    pub fn fuse_frame(&mut self, incoming: &GaussianSet, cfg: &FusionConfig) -> Result<FusionStats> {
        cfg.validate()?;
        if incoming.frame() != Frame::World {
            return Err(Error::FrameMismatch {
                expected: Frame::World,
                actual: incoming.frame(),
            });
        }
        if incoming.num_classes() != self.num_classes() {
            return Err(Error::ClassCountMismatch {
                expected: self.num_classes(),
                actual: incoming.num_classes(),
            });
        }

        let assignment: Vec<Option<usize>> = incoming
            .gaussians()
            .par_iter()
            .map(|g| self.nearest_within(g.mean(), cfg.epsilon))
            .collect();

        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        {
            let mut slot: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
            for (j, a) in assignment.iter().enumerate() {
                if let Some(anchor) = *a {
                    let s = *slot.entry(anchor).or_insert_with(|| {
                        groups.push((anchor, Vec::new()));
                        groups.len() - 1
                    });
                    groups[s].1.push(j);
                }
            }
        }

        let members = self.set.gaussians();
        let incoming_g = incoming.gaussians();
        let fused: Vec<(usize, GaussianPrimitive)> = groups
            .par_iter()
            .map(|(anchor, js)| {
                let matches: Vec<&GaussianPrimitive> = js.iter().map(|&j| &incoming_g[j]).collect();
                let g = fuse_attributes(&members[*anchor], &matches, cfg.gamma).into_primitive()?;
                Ok((*anchor, g))
            })
            .collect::<Result<_>>()?;

        let matched: usize = groups.iter().map(|(_, js)| js.len()).sum();
        let anchors_updated = fused.len();
        for (anchor, g) in fused {
            let old = *self.set.gaussians()[anchor].mean();
            self.index.relocate(anchor, &old, g.mean());
            self.set.gaussians_mut()[anchor] = g;
        }

        let mut inserted = 0;
        for (j, a) in assignment.iter().enumerate() {
            if a.is_none() {
                let id = self.set.len();
                self.index.insert(id, incoming_g[j].mean());
                self.set.gaussians_mut().push(incoming_g[j].clone());
                inserted += 1;
            }
        }
        self.frames += 1;
        Ok(FusionStats {
            matched,
            inserted,
            anchors_updated,
        })
    }
}

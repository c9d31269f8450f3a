//! Frustum-masked IoU / mIoU between occupancy grids.

use std::fmt;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::splat::{GridSpec, OccupancyGrid};

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 10.0;

/// Names of the 12-class label set; id 0 is empty space.
pub const CLASS_NAMES: [&str; 12] = [
    "empty", "ceiling", "floor", "wall", "window", "chair", "bed", "sofa", "table", "tv", "furniture", "objects",
];

pub fn class_name(id: usize, num_classes: usize) -> String {
    if num_classes == CLASS_NAMES.len() {
        CLASS_NAMES[id].to_string()
    } else {
        format!("class_{id}")
    }
}

/// Whether a world point falls inside the camera's viewing frustum.
pub fn in_frustum(cam: &CameraModel, p: &Point3<f64>, near: f64, far: f64) -> bool {
    let pc = cam.world_to_camera(p);
    if !(pc.z > 0.0) {
        return false;
    }
    let Ok((px, dist)) = cam.project(&pc) else {
        return false;
    };
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    px.u >= 0.0 && px.u < w && px.v >= 0.0 && px.v < h && dist >= near && dist <= far
}

/// Voxels whose centers lie in front of the camera, project inside the
/// image and have ray distance in `[near, far]`.
pub fn frustum_mask(spec: &GridSpec, cam: &CameraModel, near: f64, far: f64) -> Result<Vec<bool>> {
    if !(near > 0.0 && far > near) {
        return Err(Error::InvalidInput(format!("need 0 < near < far, got near = {near}, far = {far}")));
    }
    Ok((0..spec.num_voxels())
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = spec.coords(i);
            in_frustum(cam, &spec.voxel_center(x, y, z), near, far)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    /// Indexed by class id; entry 0 (empty) is tracked but never averaged.
    pub true_pos: Vec<u64>,
    pub false_pos: Vec<u64>,
    pub false_neg: Vec<u64>,
    pub occupied_tp: u64,
    pub occupied_fp: u64,
    pub occupied_fn: u64,
    pub occupied_tn: u64,
    pub evaluated: u64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            true_pos: vec![0; num_classes],
            false_pos: vec![0; num_classes],
            false_neg: vec![0; num_classes],
            occupied_tp: 0,
            occupied_fp: 0,
            occupied_fn: 0,
            occupied_tn: 0,
            evaluated: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.true_pos.len()
    }

    fn add(&mut self, pred: usize, gt: usize) {
        self.evaluated += 1;
        if pred == gt {
            self.true_pos[pred] += 1;
        } else {
            self.false_pos[pred] += 1;
            self.false_neg[gt] += 1;
        }
        match (pred != 0, gt != 0) {
            (true, true) => self.occupied_tp += 1,
            (true, false) => self.occupied_fp += 1,
            (false, true) => self.occupied_fn += 1,
            (false, false) => self.occupied_tn += 1,
        }
    }

    pub fn merge(mut self, other: &ConfusionCounts) -> Self {
        for k in 0..self.true_pos.len() {
            self.true_pos[k] += other.true_pos[k];
            self.false_pos[k] += other.false_pos[k];
            self.false_neg[k] += other.false_neg[k];
        }
        self.occupied_tp += other.occupied_tp;
        self.occupied_fp += other.occupied_fp;
        self.occupied_fn += other.occupied_fn;
        self.occupied_tn += other.occupied_tn;
        self.evaluated += other.evaluated;
        self
    }
}

/// Accumulates counts over voxels where `mask` is set (all voxels if `None`).
pub fn confusion(pred: &OccupancyGrid, gt: &OccupancyGrid, mask: Option<&[bool]>) -> Result<ConfusionCounts> {
    if !pred.spec().compatible(gt.spec(), 1e-6) {
        return Err(Error::GridMismatch(format!(
            "prediction grid {:?} vs ground truth {:?}",
            pred.spec().dims,
            gt.spec().dims
        )));
    }
    let n = pred.spec().num_voxels();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::GridMismatch(format!("mask has {} entries, grid has {n} voxels", m.len())));
        }
    }
    let nc = pred.spec().num_classes;
    let (pl, gl) = (pred.labels(), gt.labels());
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || ConfusionCounts::new(nc),
            |mut acc, i| {
                if mask.is_none_or(|m| m[i]) {
                    acc.add(pl[i] as usize, gl[i] as usize);
                }
                acc
            },
        )
        .reduce(|| ConfusionCounts::new(nc), |a, b| a.merge(&b));
    Ok(counts)
}

/// IoU figures; `None` marks an undefined value (empty union), which is
/// distinct from an IoU of 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub iou: Option<f64>,
    /// Classes `1..num_classes`, in order.
    pub per_class: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

fn ratio(tp: u64, union: u64) -> Option<f64> {
    (union > 0).then(|| tp as f64 / union as f64)
}

pub fn iou_miou(counts: &ConfusionCounts) -> MetricReport {
    let per_class: Vec<Option<f64>> = (1..counts.num_classes())
        .map(|k| ratio(counts.true_pos[k], counts.true_pos[k] + counts.false_pos[k] + counts.false_neg[k]))
        .collect();
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    let iou = ratio(counts.occupied_tp, counts.occupied_tp + counts.occupied_fp + counts.occupied_fn);
    MetricReport { iou, per_class, miou }
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_string(),
    }
}

impl fmt::Display for MetricReport {
    /// One `key = value` line per figure.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nc = self.per_class.len() + 1;
        writeln!(f, "iou = {}", fmt_value(self.iou))?;
        writeln!(f, "miou = {}", fmt_value(self.miou))?;
        for (i, v) in self.per_class.iter().enumerate() {
            writeln!(f, "{} = {}", class_name(i + 1, nc), fmt_value(*v))?;
        }
        Ok(())
    }
}

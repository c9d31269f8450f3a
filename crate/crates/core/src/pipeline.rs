//! Monocular and streaming reconstruction pipelines.

use rayon::prelude::*;

use crate::camera::CameraModel;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fusion::{FusionStats, GaussianMemoryBank};
use crate::gaussian::{AttributeProvider, Frame, GaussianSet, HeuristicAttributes};
use crate::sampling::{volumetric_sample, ClassMap, DepthMap};
use crate::scene::{render_depth, SyntheticScene};
use crate::splat::{splat, GridSpec, OccupancyGrid};

/// One observed view.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub depth: DepthMap,
    pub classes: ClassMap,
    pub camera: CameraModel,
}

impl FrameInput {
    /// Analytic depth and classes of `scene` seen from `camera`.
    pub fn render(scene: &SyntheticScene, camera: CameraModel) -> Result<Self> {
        let (depth, classes) = render_depth(scene, &camera)?;
        Ok(Self { depth, classes, camera })
    }
}

/// Camera-frame Gaussians for every volumetric sample of a view, labelled
/// by the class map at the sample's pixel.
pub fn frame_gaussians(
    depth: &DepthMap,
    classes: &ClassMap,
    cam: &CameraModel,
    cfg: &PipelineConfig,
    provider: &dyn AttributeProvider,
) -> Result<GaussianSet> {
    if classes.width() != depth.width() || classes.height() != depth.height() {
        return Err(Error::InvalidInput(format!(
            "class map is {}x{} but depth map is {}x{}",
            classes.width(),
            classes.height(),
            depth.width(),
            depth.height()
        )));
    }
    let samples = volumetric_sample(depth, cam, &cfg.sampling)?;
    let gaussians = samples
        .points
        .par_iter()
        .enumerate()
        .map(|(i, s)| provider.attributes(i, s, classes.get(s.col, s.row) as usize))
        .collect::<Result<Vec<_>>>()?;
    GaussianSet::from_vec(Frame::Camera, provider.num_classes(), gaussians)
}

/// World-frame, pruned Gaussians of one view using the heuristic provider.
pub fn world_gaussians(frame: &FrameInput, cfg: &PipelineConfig) -> Result<GaussianSet> {
    let provider = HeuristicAttributes::new(cfg.attributes, cfg.grid.num_classes);
    world_gaussians_with(frame, cfg, &provider)
}

pub fn world_gaussians_with(
    frame: &FrameInput,
    cfg: &PipelineConfig,
    provider: &dyn AttributeProvider,
) -> Result<GaussianSet> {
    frame_gaussians(&frame.depth, &frame.classes, &frame.camera, cfg, provider)?
        .to_world(frame.camera.pose())?
        .prune(cfg.prune_tau)
}

/// Single-view occupancy on `cfg.grid`.
pub fn run_monocular(frame: &FrameInput, cfg: &PipelineConfig) -> Result<OccupancyGrid> {
    cfg.validate()?;
    splat(&world_gaussians(frame, cfg)?, &cfg.grid, cfg.theta_occ)
}

#[derive(Debug)]
pub struct StreamingResult {
    pub bank: GaussianMemoryBank,
    pub grid: OccupancyGrid,
    pub stats: Vec<FusionStats>,
}

/// Fuses views in order into a memory bank, then splats the bank onto
/// `scene_grid`.
pub fn run_streaming(frames: &[FrameInput], cfg: &PipelineConfig, scene_grid: &GridSpec) -> Result<StreamingResult> {
    cfg.validate()?;
    let mut bank = GaussianMemoryBank::new(cfg.grid.num_classes, cfg.fusion.epsilon);
    let mut stats = Vec::with_capacity(frames.len());
    for frame in frames {
        let incoming = world_gaussians(frame, cfg)?;
        stats.push(bank.fuse_frame(&incoming, &cfg.fusion)?);
    }
    let grid = splat(bank.gaussians(), scene_grid, cfg.theta_occ)?;
    Ok(StreamingResult { bank, grid, stats })
}

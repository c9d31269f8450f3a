//! Sparse Gaussian occupancy reconstruction from depth and semantics.
//!
//! Depth pixels are back-projected and sampled inward along their rays; each
//! sample becomes an anisotropic Gaussian carrying opacity and class logits.
//! Gaussians are splatted onto a voxel grid, fused across frames through a
//! spatial hash, and scored with IoU / mIoU.

pub mod camera;
pub mod config;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod sampling;
pub mod scene;
pub mod spatial_hash;
pub mod splat;

pub use camera::{CameraModel, Intrinsics, Pixel};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use fusion::{FusionConfig, FusionStats, GaussianMemoryBank};
pub use gaussian::{AttributeConfig, AttributeProvider, Frame, GaussianPrimitive, GaussianSet, HeuristicAttributes};
pub use metrics::{confusion, frustum_mask, iou_miou, MetricReport};
pub use pipeline::{run_monocular, run_streaming, FrameInput};
pub use sampling::{volumetric_sample, ClassMap, DepthMap, SamplingConfig};
pub use splat::{splat, GridSpec, OccupancyGrid};

//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and `#` comments are ignored. Every field is addressable by
//! key, so a file and `--set key=value` overrides share one code path.

use std::fmt;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::gaussian::{AttributeConfig, DEFAULT_PRUNE_TAU};
use crate::metrics::{DEFAULT_FAR, DEFAULT_NEAR};
use crate::sampling::SamplingConfig;
use crate::splat::{GridSpec, DEFAULT_THETA_OCC};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub sampling: SamplingConfig,
    pub attributes: AttributeConfig,
    pub grid: GridSpec,
    pub fusion: FusionConfig,
    pub prune_tau: f64,
    pub theta_occ: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            attributes: AttributeConfig::default(),
            grid: GridSpec::default(),
            fusion: FusionConfig::default(),
            prune_tau: DEFAULT_PRUNE_TAU,
            theta_occ: DEFAULT_THETA_OCC,
            near: DEFAULT_NEAR,
            far: DEFAULT_FAR,
        }
    }
}

pub const KEYS: [&str; 21] = [
    "samples_per_ray",
    "sampling_scale",
    "stride",
    "sigma_factor",
    "opacity_init",
    "opacity_decay",
    "logit_gain",
    "grid_x",
    "grid_y",
    "grid_z",
    "voxel_size",
    "origin_x",
    "origin_y",
    "origin_z",
    "num_classes",
    "epsilon",
    "gamma",
    "prune_tau",
    "theta_occ",
    "near",
    "far",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "samples_per_ray" => self.sampling.samples_per_ray = parse(key, v)?,
            "sampling_scale" => self.sampling.scale = parse(key, v)?,
            "stride" => self.sampling.stride = parse(key, v)?,
            "sigma_factor" => self.attributes.sigma_factor = parse(key, v)?,
            "opacity_init" => self.attributes.opacity_init = parse(key, v)?,
            "opacity_decay" => self.attributes.opacity_decay = parse(key, v)?,
            "logit_gain" => self.attributes.logit_gain = parse(key, v)?,
            "grid_x" => self.grid.dims[0] = parse(key, v)?,
            "grid_y" => self.grid.dims[1] = parse(key, v)?,
            "grid_z" => self.grid.dims[2] = parse(key, v)?,
            "voxel_size" => self.grid.voxel_size = parse(key, v)?,
            "origin_x" => self.grid.origin.x = parse(key, v)?,
            "origin_y" => self.grid.origin.y = parse(key, v)?,
            "origin_z" => self.grid.origin.z = parse(key, v)?,
            "num_classes" => self.grid.num_classes = parse(key, v)?,
            "epsilon" => self.fusion.epsilon = parse(key, v)?,
            "gamma" => self.fusion.gamma = parse(key, v)?,
            "prune_tau" => self.prune_tau = parse(key, v)?,
            "theta_occ" => self.theta_occ = parse(key, v)?,
            "near" => self.near = parse(key, v)?,
            "far" => self.far = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.attributes.validate()?;
        self.grid.validate()?;
        self.fusion.validate()?;
        if !(0.0..=1.0).contains(&self.prune_tau) {
            return Err(Error::Config(format!("prune_tau must lie in [0, 1], got {}", self.prune_tau)));
        }
        if !(0.0..=1.0).contains(&self.theta_occ) {
            return Err(Error::Config(format!("theta_occ must lie in [0, 1], got {}", self.theta_occ)));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::Config(format!("need 0 < near < far, got {} and {}", self.near, self.far)));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let o: Point3<f64> = self.grid.origin;
        Some(match key {
            "samples_per_ray" => self.sampling.samples_per_ray.to_string(),
            "sampling_scale" => self.sampling.scale.to_string(),
            "stride" => self.sampling.stride.to_string(),
            "sigma_factor" => self.attributes.sigma_factor.to_string(),
            "opacity_init" => self.attributes.opacity_init.to_string(),
            "opacity_decay" => self.attributes.opacity_decay.to_string(),
            "logit_gain" => self.attributes.logit_gain.to_string(),
            "grid_x" => self.grid.dims[0].to_string(),
            "grid_y" => self.grid.dims[1].to_string(),
            "grid_z" => self.grid.dims[2].to_string(),
            "voxel_size" => self.grid.voxel_size.to_string(),
            "origin_x" => o.x.to_string(),
            "origin_y" => o.y.to_string(),
            "origin_z" => o.z.to_string(),
            "num_classes" => self.grid.num_classes.to_string(),
            "epsilon" => self.fusion.epsilon.to_string(),
            "gamma" => self.fusion.gamma.to_string(),
            "prune_tau" => self.prune_tau.to_string(),
            "theta_occ" => self.theta_occ.to_string(),
            "near" => self.near.to_string(),
            "far" => self.far.to_string(),
            _ => return None,
        })
    }
}

impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key} = {}", self.get(key).unwrap_or_default())?;
        }
        Ok(())
    }
}

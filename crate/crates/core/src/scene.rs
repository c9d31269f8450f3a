//! Synthetic indoor scenes made of axis-aligned boxes, with analytic depth
//! rendering and exact ground-truth occupancy.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Intrinsics, Pixel};
use crate::error::{Error, Result};
use crate::sampling::{ClassMap, DepthMap};
use crate::splat::{GridSpec, OccupancyGrid};

pub const CEILING: u8 = 1;
pub const FLOOR: u8 = 2;
pub const WALL: u8 = 3;
pub const WINDOW: u8 = 4;
pub const CHAIR: u8 = 5;
pub const BED: u8 = 6;
pub const SOFA: u8 = 7;
pub const TABLE: u8 = 8;
pub const TV: u8 = 9;
pub const FURNITURE: u8 = 10;
pub const OBJECTS: u8 = 11;

/// Solid axis-aligned box carrying a class id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u8,
}

impl SceneBox {
    pub fn new(min: [f64; 3], max: [f64; 3], class: u8) -> Self {
        Self { min, max, class }
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.max[a] - self.min[a]).product()
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    fn overlaps(&self, other: &SceneBox) -> bool {
        (0..3).all(|a| self.min[a] < other.max[a] && other.min[a] < self.max[a])
    }

    /// Entry distance of the ray `origin + t·dir`, `t > 0`, by the slab
    /// method. Rays starting inside the box do not hit it.
    pub fn ray_entry(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (t0, t1) = {
                let t0 = (self.min[a] - origin[a]) * inv;
                let t1 = (self.max[a] - origin[a]) * inv;
                if t0 <= t1 { (t0, t1) } else { (t1, t0) }
            };
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
        }
        (t_near > 0.0 && t_near <= t_far).then_some(t_near)
    }
}

/// Floor, ceiling and wall slabs lining the inside of the room extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub thickness: f64,
    pub floor_class: u8,
    pub ceiling_class: u8,
    pub wall_class: u8,
}

impl Default for Shell {
    fn default() -> Self {
        Self {
            thickness: 0.08,
            floor_class: FLOOR,
            ceiling_class: CEILING,
            wall_class: WALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub shell: Option<Shell>,
    pub boxes: Vec<SceneBox>,
}

impl SyntheticScene {
    pub fn new(room_min: [f64; 3], room_max: [f64; 3], shell: Option<Shell>, boxes: Vec<SceneBox>) -> Result<Self> {
        let scene = Self {
            room_min,
            room_max,
            shell,
            boxes,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let room = SceneBox::new(self.room_min, self.room_max, 0);
        if !(0..3).all(|a| self.room_max[a] > self.room_min[a]) {
            return Err(Error::InvalidInput("room extent must be positive".into()));
        }
        for b in &self.boxes {
            if !(0..3).all(|a| b.min[a] < b.max[a] && room.min[a] <= b.min[a] && b.max[a] <= room.max[a]) {
                return Err(Error::InvalidInput(format!("box {b:?} is empty or outside the room")));
            }
            if b.class == 0 {
                return Err(Error::InvalidInput("box class must be non-zero".into()));
            }
        }
        if let Some(shell) = &self.shell {
            if !(shell.thickness > 0.0 && (0..3).all(|a| 2.0 * shell.thickness < self.room_max[a] - self.room_min[a])) {
                return Err(Error::InvalidInput("shell thickness does not fit the room".into()));
            }
        }
        Ok(())
    }

    /// Shell slabs followed by the scene boxes.
    pub fn solids(&self) -> Vec<SceneBox> {
        let mut out = Vec::with_capacity(self.boxes.len() + 6);
        if let Some(s) = &self.shell {
            let (lo, hi, t) = (self.room_min, self.room_max, s.thickness);
            out.push(SceneBox::new(lo, [hi[0], hi[1], lo[2] + t], s.floor_class));
            out.push(SceneBox::new([lo[0], lo[1], hi[2] - t], hi, s.ceiling_class));
            out.push(SceneBox::new(lo, [lo[0] + t, hi[1], hi[2]], s.wall_class));
            out.push(SceneBox::new([hi[0] - t, lo[1], lo[2]], hi, s.wall_class));
            out.push(SceneBox::new(lo, [hi[0], lo[1] + t, hi[2]], s.wall_class));
            out.push(SceneBox::new([lo[0], hi[1] - t, lo[2]], hi, s.wall_class));
        }
        out.extend_from_slice(&self.boxes);
        out
    }

    /// Class of the innermost (smallest) solid containing `p`, or 0.
    pub fn class_at(&self, p: &Point3<f64>) -> u8 {
        innermost(self.solids().iter().filter(|b| b.contains(p)))
    }

    /// Nearest hit of a world ray: distance and class.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, u8)> {
        cast_solids(&self.solids(), origin, dir)
    }

    /// Free interior of the room (inside the shell, if any).
    pub fn interior(&self) -> ([f64; 3], [f64; 3]) {
        let t = self.shell.map_or(0.0, |s| s.thickness);
        (self.room_min.map(|v| v + t), self.room_max.map(|v| v - t))
    }
}

fn innermost<'a>(solids: impl Iterator<Item = &'a SceneBox>) -> u8 {
    let mut best: Option<&SceneBox> = None;
    for b in solids {
        if best.is_none_or(|cur| b.volume() < cur.volume()) {
            best = Some(b);
        }
    }
    best.map_or(0, |b| b.class)
}

fn cast_solids(solids: &[SceneBox], origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, u8)> {
    let mut best: Option<(f64, f64, u8)> = None;
    for b in solids {
        if let Some(t) = b.ray_entry(origin, dir) {
            let v = b.volume();
            match best {
                Some((bt, bv, _)) if t > bt || (t == bt && v >= bv) => {}
                _ => best = Some((t, v, b.class)),
            }
        }
    }
    best.map(|(t, _, c)| (t, c))
}

/// Ray distances and hit classes at every pixel center. Missed rays are
/// invalid (NaN depth, class 0).
pub fn render_depth(scene: &SyntheticScene, cam: &CameraModel) -> Result<(DepthMap, ClassMap)> {
    let solids = scene.solids();
    let (w, h) = (cam.width() as usize, cam.height() as usize);
    let origin = cam.center();
    let rotation = cam.pose().rotation;
    let pixels: Vec<(f64, u8)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = cam.ray_direction(Pixel::center(i % w, i / w))?;
            let dir = rotation * ray;
            Ok(cast_solids(&solids, &origin, &dir).unwrap_or((f64::NAN, 0)))
        })
        .collect::<Result<_>>()?;
    let depth = DepthMap::new(cam.width(), cam.height(), pixels.iter().map(|p| p.0).collect())?;
    let classes = ClassMap::new(cam.width(), cam.height(), pixels.iter().map(|p| p.1).collect())?;
    Ok((depth, classes))
}

/// Ground truth: each voxel takes the class of the innermost solid that
/// contains its center, else 0. Occupied voxels score 1.
pub fn oracle_occupancy(scene: &SyntheticScene, spec: &GridSpec) -> Result<OccupancyGrid> {
    spec.validate()?;
    let solids = scene.solids();
    if let Some(b) = solids.iter().find(|b| b.class as usize >= spec.num_classes) {
        return Err(Error::InvalidLabel {
            label: b.class as usize,
            max: spec.num_classes - 1,
        });
    }
    let labels: Vec<u8> = (0..spec.num_voxels())
        .into_par_iter()
        .map(|i| {
            let [x, y, z] = spec.coords(i);
            let c = spec.voxel_center(x, y, z);
            innermost(solids.iter().filter(|b| b.contains(&c)))
        })
        .collect();
    let scores = labels.iter().map(|&l| if l != 0 { 1.0 } else { 0.0 }).collect();
    OccupancyGrid::from_parts(spec.clone(), labels, scores)
}

/// Parameters of the random room generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomParams {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub shell: Shell,
    /// Box coordinates are snapped to multiples of this (0 disables).
    pub snap: f64,
    pub furniture: std::ops::RangeInclusive<usize>,
    /// Furniture extends through the shell to the room boundary, so the
    /// slab hidden behind and beneath it carries the furniture class.
    pub embed: bool,
}

impl Default for RoomParams {
    /// The 4.8 × 4.8 × 2.88 m volume of the default grid.
    fn default() -> Self {
        Self {
            room_min: [0.0; 3],
            room_max: [4.8, 4.8, 2.88],
            shell: Shell::default(),
            snap: 0.08,
            furniture: 2..=4,
            embed: true,
        }
    }
}

/// (class, length along the wall, depth off the wall, height) ranges.
const FURNITURE_SHAPES: [(u8, [f64; 2], [f64; 2], [f64; 2]); 7] = [
    (CHAIR, [0.48, 0.64], [0.40, 0.48], [0.40, 0.56]),
    (BED, [1.60, 2.00], [0.40, 0.48], [0.40, 0.56]),
    (SOFA, [1.28, 1.84], [0.40, 0.48], [0.40, 0.56]),
    (TABLE, [0.80, 1.36], [0.40, 0.48], [0.48, 0.64]),
    (TV, [0.80, 1.20], [0.24, 0.32], [0.48, 0.72]),
    (FURNITURE, [0.80, 1.36], [0.40, 0.48], [0.64, 0.80]),
    (OBJECTS, [0.48, 0.64], [0.32, 0.40], [0.32, 0.48]),
];

fn snap(v: f64, step: f64) -> f64 {
    if step > 0.0 {
        (v / step).round() * step
    } else {
        v
    }
}

impl SyntheticScene {
    /// Random furnished room: shell, a window in the `+x` wall, and a row of
    /// non-overlapping furniture standing against the `+x` wall below it.
    pub fn generate(seed: u64, params: &RoomParams) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lo, hi, t) = (params.room_min, params.room_max, params.shell.thickness);
        let inner_lo = lo.map(|v| v + t);
        let inner_hi = hi.map(|v| v - t);
        let s = params.snap;
        let mut boxes: Vec<SceneBox> = Vec::new();

        let max_height = FURNITURE_SHAPES.iter().map(|f| f.3[1]).fold(0.0, f64::max);
        {
            let wy = snap(rng.random_range(0.8..1.6), s);
            let wz = snap(rng.random_range(0.64..1.04), s);
            let y0 = snap(rng.random_range(inner_lo[1] + 0.3..inner_hi[1] - wy - 0.3), s);
            let z0 = snap(rng.random_range(0.96..1.2), s).max(inner_lo[2] + max_height + s);
            boxes.push(SceneBox::new([hi[0] - t, y0, z0], [hi[0], y0 + wy, (z0 + wz).min(inner_hi[2])], WINDOW));
        }

        let count = rng.random_range(params.furniture.clone());
        let back = if params.embed { hi[0] } else { inner_hi[0] };
        let floor = if params.embed { lo[2] } else { inner_lo[2] };
        let mut attempts = 0;
        while boxes.len() < count + 1 && attempts < 200 {
            attempts += 1;
            let (class, along, across, height) = FURNITURE_SHAPES[rng.random_range(0..FURNITURE_SHAPES.len())];
            let len = snap(rng.random_range(along[0]..=along[1]), s);
            let dep = snap(rng.random_range(across[0]..=across[1]), s);
            let ht = snap(rng.random_range(height[0]..=height[1]), s);
            if inner_hi[1] - inner_lo[1] < len {
                continue;
            }
            let y0 = snap(rng.random_range(inner_lo[1]..=inner_hi[1] - len), s).max(inner_lo[1]);
            let y1 = (y0 + len).min(inner_hi[1]);
            let candidate = SceneBox::new([inner_hi[0] - dep, y0, floor], [back, y1, inner_lo[2] + ht], class);
            if !boxes.iter().skip(1).any(|b| b.overlaps(&candidate)) {
                boxes.push(candidate);
            }
        }
        Self::new(lo, hi, Some(params.shell), boxes)
    }
}

/// Default capture intrinsics for synthetic frames.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 300.0,
        fy: 300.0,
        cx: 160.0,
        cy: 120.0,
        width: 320,
        height: 240,
    }
}

/// Camera high on the `-x` wall looking down across the room at the
/// furniture row on the `+x` wall, with a seeded jitter of pose.
pub fn monocular_camera(scene: &SyntheticScene, intrinsics: Intrinsics, seed: u64) -> Result<CameraModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let (lo, hi) = scene.interior();
    let mid_y = 0.5 * (lo[1] + hi[1]);
    let eye = Point3::new(
        lo[0] + 0.1,
        mid_y + rng.random_range(-0.2..0.2),
        hi[2] - 0.3 + rng.random_range(-0.1..0.1),
    );
    let target = Point3::new(
        hi[0] - 0.6 + rng.random_range(-0.2..0.2),
        mid_y + rng.random_range(-0.3..0.3),
        lo[2] + rng.random_range(-0.1..0.1),
    );
    CameraModel::look_at(intrinsics, eye, target, Vector3::z())
}

/// `n` cameras at the room center, evenly spaced in heading, each pitched
/// slightly down.
pub fn orbit_cameras(scene: &SyntheticScene, intrinsics: Intrinsics, n: usize) -> Result<Vec<CameraModel>> {
    let (lo, hi) = scene.interior();
    let center = Point3::new(0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 1.4);
    (0..n)
        .map(|i| {
            let yaw = std::f64::consts::TAU * i as f64 / n as f64;
            let target = center + Vector3::new(yaw.cos(), yaw.sin(), -0.45);
            CameraModel::look_at(intrinsics, center, target, Vector3::z())
        })
        .collect()
}

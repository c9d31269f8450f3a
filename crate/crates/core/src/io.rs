//! Little-endian binary formats.
//!
//! | format | layout |
//! |--------|--------|
//! | `DMAP1`  | magic, u32 width, u32 height, width·height f32 ray distances (row-major, NaN = invalid) |
//! | `CMAP1`  | magic, u32 width, u32 height, width·height u8 class ids |
//! | `GSET1`  | magic, u32 count, u32 num_classes, then per Gaussian 3×f32 mean, 3×f32 scale, 4×f32 quaternion (w, x, y, z), f32 opacity, num_classes×f32 logits |
//! | `OGRID1` | magic, u32 X, Y, Z, u32 num_classes, f32 voxel size, 3×f32 origin, X·Y·Z u8 labels, X·Y·Z f32 scores |
//!
//! Voxels are stored x-major (`(x·Y + y)·Z + z`). Values are held as `f64`
//! in memory and rounded to `f32` on write, so load → save reproduces the
//! input bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{Frame, GaussianPrimitive, GaussianSet};
use crate::sampling::{ClassMap, DepthMap};
use crate::splat::{GridSpec, OccupancyGrid};

pub const DMAP_MAGIC: &[u8; 5] = b"DMAP1";
pub const CMAP_MAGIC: &[u8; 5] = b"CMAP1";
pub const GSET_MAGIC: &[u8; 5] = b"GSET1";
pub const OGRID_MAGIC: &[u8; 6] = b"OGRID1";

/// Refuses headers that would allocate absurd buffers.
const MAX_ELEMENTS: usize = 1 << 32;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b) as f64)
}

/// Reads exactly `n` bytes, growing the buffer only as data arrives so a
/// lying header cannot force a huge allocation.
fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(n.min(1 << 20));
    r.take(n as u64).read_to_end(&mut bytes)?;
    if bytes.len() != n {
        return Err(Error::Format(format!("truncated payload: {} of {n} bytes", bytes.len())));
    }
    Ok(bytes)
}

fn get_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let bytes = get_bytes(r, n * 4)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn put_f32s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn expect_magic(r: &mut impl Read, magic: &[u8]) -> Result<()> {
    let mut b = vec![0u8; magic.len()];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format(format!("truncated header, expected {}", String::from_utf8_lossy(magic))))?;
    if b != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn checked_count(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .filter(|&n| n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::Format("element count overflow".into()))
}

pub fn write_depth_map(w: &mut impl Write, depth: &DepthMap) -> Result<()> {
    w.write_all(DMAP_MAGIC)?;
    put_u32(w, depth.width())?;
    put_u32(w, depth.height())?;
    put_f32s(w, depth.values())
}

pub fn read_depth_map(r: &mut impl Read) -> Result<DepthMap> {
    expect_magic(r, DMAP_MAGIC)?;
    let width = get_u32(r)?;
    let height = get_u32(r)?;
    let n = checked_count(&[width as usize, height as usize])?;
    DepthMap::new(width, height, get_f32s(r, n)?)
}

pub fn write_class_map(w: &mut impl Write, classes: &ClassMap) -> Result<()> {
    w.write_all(CMAP_MAGIC)?;
    put_u32(w, classes.width())?;
    put_u32(w, classes.height())?;
    w.write_all(classes.ids())?;
    Ok(())
}

pub fn read_class_map(r: &mut impl Read) -> Result<ClassMap> {
    expect_magic(r, CMAP_MAGIC)?;
    let width = get_u32(r)?;
    let height = get_u32(r)?;
    let n = checked_count(&[width as usize, height as usize])?;
    ClassMap::new(width, height, get_bytes(r, n)?)
}

/// Normalization applied on read.
fn read_quaternion(c: [f32; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64))
}

fn to_f32(q: &UnitQuaternion<f64>) -> [f32; 4] {
    [q.w as f32, q.i as f32, q.j as f32, q.k as f32]
}

fn is_stable(c: [f32; 4]) -> bool {
    to_f32(&read_quaternion(c)) == c
}

fn step_ulps(v: f32, k: i32) -> f32 {
    let mut out = v;
    for _ in 0..k.unsigned_abs() {
        out = if k > 0 { out.next_up() } else { out.next_down() };
    }
    out
}

/// `f32` quaternion that survives read-normalize-write unchanged. Rounding
/// each component alone can leave the norm far enough from 1 that
/// renormalizing moves a component by one ulp, so when that happens the two
/// smallest components are nudged by a few ulps and the largest recomputed
/// until the rounded quaternion is a fixed point.
fn stable_quaternion(q: &UnitQuaternion<f64>) -> [f32; 4] {
    let first = to_f32(q);
    if is_stable(first) {
        return first;
    }
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| first[a].abs().total_cmp(&first[b].abs()));
    let (s0, s1, mid, big) = (order[0], order[1], order[2], order[3]);
    for radius in [2i32, 8, 32] {
        for a in -radius..=radius {
            for b in -radius..=radius {
                let mut c = first;
                c[s0] = step_ulps(first[s0], a);
                c[s1] = step_ulps(first[s1], b);
                let rest: f64 = [s0, s1, mid].iter().map(|&i| (c[i] as f64).powi(2)).sum();
                let big_abs = (1.0 - rest).max(0.0).sqrt() as f32;
                for d in -1..=1 {
                    c[big] = step_ulps(big_abs, d).copysign(first[big]);
                    if is_stable(c) {
                        return c;
                    }
                }
            }
        }
    }
    first
}

pub fn write_gaussian_set(w: &mut impl Write, set: &GaussianSet) -> Result<()> {
    let count = u32::try_from(set.len()).map_err(|_| Error::Format("too many gaussians".into()))?;
    w.write_all(GSET_MAGIC)?;
    put_u32(w, count)?;
    put_u32(w, set.num_classes() as u32)?;
    let mut row = Vec::with_capacity(11 + set.num_classes());
    for g in set.iter() {
        row.clear();
        row.extend(g.mean().coords.iter());
        row.extend(g.scale().iter());
        row.extend(stable_quaternion(g.rotation()).iter().map(|&c| c as f64));
        row.push(g.opacity());
        row.extend(g.logits());
        put_f32s(w, &row)?;
    }
    Ok(())
}

/// Reads a set; the frame is not stored, so the caller names it.
pub fn read_gaussian_set(r: &mut impl Read, frame: Frame) -> Result<GaussianSet> {
    expect_magic(r, GSET_MAGIC)?;
    let count = get_u32(r)? as usize;
    let nc = get_u32(r)? as usize;
    if nc == 0 {
        return Err(Error::Format("GSET with zero classes".into()));
    }
    let stride = 11 + nc;
    checked_count(&[count, stride])?;
    let mut gaussians = Vec::with_capacity(count);
    for i in 0..count {
        let v = get_f32s(r, stride)?;
        let c = [v[6] as f32, v[7] as f32, v[8] as f32, v[9] as f32];
        if !(Quaternion::new(v[6], v[7], v[8], v[9]).norm() > 0.0) {
            return Err(Error::Format(format!("gaussian {i}: zero quaternion")));
        }
        let g = GaussianPrimitive::new(
            Point3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
            read_quaternion(c),
            v[10],
            v[11..].to_vec(),
        )
        .map_err(|e| Error::Format(format!("gaussian {i}: {e}")))?;
        gaussians.push(g);
    }
    GaussianSet::from_vec(frame, nc, gaussians)
}

pub fn write_occupancy_grid(w: &mut impl Write, grid: &OccupancyGrid) -> Result<()> {
    let spec = grid.spec();
    w.write_all(OGRID_MAGIC)?;
    for d in spec.dims {
        put_u32(w, u32::try_from(d).map_err(|_| Error::Format("grid too large".into()))?)?;
    }
    put_u32(w, spec.num_classes as u32)?;
    put_f32(w, spec.voxel_size)?;
    for a in 0..3 {
        put_f32(w, spec.origin[a])?;
    }
    w.write_all(grid.labels())?;
    put_f32s(w, grid.scores())
}

pub fn read_occupancy_grid(r: &mut impl Read) -> Result<OccupancyGrid> {
    expect_magic(r, OGRID_MAGIC)?;
    let dims = [get_u32(r)? as usize, get_u32(r)? as usize, get_u32(r)? as usize];
    let nc = get_u32(r)? as usize;
    let voxel_size = get_f32(r)?;
    let origin = Point3::new(get_f32(r)?, get_f32(r)?, get_f32(r)?);
    let n = checked_count(&dims)?;
    let spec = GridSpec::new(dims, voxel_size, origin, nc)?;
    let labels = get_bytes(r, n)?;
    let scores = get_f32s(r, n)?;
    OccupancyGrid::from_parts(spec, labels, scores)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn save_depth_map(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_depth_map(&mut w, depth)?;
    w.flush()?;
    Ok(())
}

pub fn load_depth_map(path: impl AsRef<Path>) -> Result<DepthMap> {
    read_depth_map(&mut open(path.as_ref())?)
}

pub fn save_class_map(path: impl AsRef<Path>, classes: &ClassMap) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_class_map(&mut w, classes)?;
    w.flush()?;
    Ok(())
}

pub fn load_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    read_class_map(&mut open(path.as_ref())?)
}

pub fn save_gaussian_set(path: impl AsRef<Path>, set: &GaussianSet) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_gaussian_set(&mut w, set)?;
    w.flush()?;
    Ok(())
}

pub fn load_gaussian_set(path: impl AsRef<Path>, frame: Frame) -> Result<GaussianSet> {
    read_gaussian_set(&mut open(path.as_ref())?, frame)
}

pub fn save_occupancy_grid(path: impl AsRef<Path>, grid: &OccupancyGrid) -> Result<()> {
    let mut w = create(path.as_ref())?;
    write_occupancy_grid(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

pub fn load_occupancy_grid(path: impl AsRef<Path>) -> Result<OccupancyGrid> {
    read_occupancy_grid(&mut open(path.as_ref())?)
}

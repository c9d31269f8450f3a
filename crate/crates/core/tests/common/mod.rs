//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sparse_occ::fusion::GaussianMemoryBank;
use sparse_occ::gaussian::{Frame, GaussianPrimitive, GaussianSet};
use sparse_occ::scene::SceneBox;
use sparse_occ::splat::GridSpec;

pub fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    loop {
        let v = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ];
        let n: f64 = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]));
        }
    }
}

/// Anisotropic Gaussian with mean inside `[lo, hi]` and scales in `scales`.
pub fn random_gaussian(
    rng: &mut ChaCha8Rng,
    lo: [f64; 3],
    hi: [f64; 3],
    scales: (f64, f64),
    num_classes: usize,
) -> GaussianPrimitive {
    let mean = Point3::new(
        rng.random_range(lo[0]..hi[0]),
        rng.random_range(lo[1]..hi[1]),
        rng.random_range(lo[2]..hi[2]),
    );
    let scale = Vector3::new(
        rng.random_range(scales.0..scales.1),
        rng.random_range(scales.0..scales.1),
        rng.random_range(scales.0..scales.1),
    );
    let logits = (0..num_classes).map(|_| rng.random_range(-4.0..4.0)).collect();
    GaussianPrimitive::new(mean, scale, random_unit_quaternion(rng), rng.random_range(0.0..1.0), logits).unwrap()
}

pub fn random_set(rng: &mut ChaCha8Rng, n: usize, spec: &GridSpec, scales: (f64, f64)) -> GaussianSet {
    let lo = spec.origin.coords.map(|v| v - 0.1);
    let hi = spec.max_corner().coords.map(|v| v + 0.1);
    let gs = (0..n)
        .map(|_| random_gaussian(rng, [lo.x, lo.y, lo.z], [hi.x, hi.y, hi.z], scales, spec.num_classes))
        .collect();
    GaussianSet::from_vec(Frame::World, spec.num_classes, gs).unwrap()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// All-pairs evaluation with a dense matrix inverse of `R S² Rᵀ`; no culling
/// beyond the kernel's own Mahalanobis-3 support.
pub fn brute_force_splat(set: &GaussianSet, spec: &GridSpec, theta: f64) -> (Vec<u8>, Vec<f64>) {
    let nc = spec.num_classes;
    let kernels: Vec<(Point3<f64>, Matrix3<f64>, f64, Vec<f64>)> = set
        .iter()
        .map(|g| {
            let r = g.rotation().to_rotation_matrix().into_inner();
            let s2 = Matrix3::from_diagonal(&g.scale().map(|s| s * s));
            let cov = r * s2 * r.transpose();
            (*g.mean(), cov.try_inverse().unwrap(), g.opacity(), softmax(g.logits()))
        })
        .collect();
    let mut labels = Vec::with_capacity(spec.num_voxels());
    let mut scores = Vec::with_capacity(spec.num_voxels());
    for x in 0..spec.dims[0] {
        for y in 0..spec.dims[1] {
            for z in 0..spec.dims[2] {
                let p = spec.origin
                    + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * spec.voxel_size;
                let mut product = 1.0f64;
                let mut mass = vec![0.0; nc];
                for (mu, inv, a, probs) in &kernels {
                    let d = p - mu;
                    let m2 = (d.transpose() * inv * d)[(0, 0)];
                    if m2 > 9.0 {
                        continue;
                    }
                    let c = a * (-0.5 * m2).exp();
                    product *= 1.0 - c;
                    for k in 0..nc {
                        mass[k] += c * probs[k];
                    }
                }
                let score = 1.0 - product;
                let mut label = 0u8;
                if score >= theta {
                    let mut best = 1;
                    for k in 2..nc {
                        if mass[k] > mass[best] {
                            best = k;
                        }
                    }
                    label = best as u8;
                }
                labels.push(label);
                scores.push(score);
            }
        }
    }
    (labels, scores)
}

/// Ids of bank members within `eps` of `q` by exhaustive scan.
pub fn linear_scan(bank: &GaussianMemoryBank, q: &Point3<f64>, eps: f64) -> Vec<usize> {
    bank.gaussians()
        .iter()
        .enumerate()
        .filter(|(_, g)| (g.mean() - q).norm() <= eps)
        .map(|(i, _)| i)
        .collect()
}

pub fn linear_scan_points(points: &[Point3<f64>], q: &Point3<f64>, eps: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - q).norm() <= eps)
        .map(|(i, _)| i)
        .collect()
}

/// Nearest hit of a ray on a box by intersecting each of the six face
/// planes and testing the hit against the face rectangle.
pub fn ray_box_faces(b: &SceneBox, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let mut best: Option<f64> = None;
    for axis in 0..3 {
        if d[axis].abs() < 1e-300 {
            continue;
        }
        for plane in [b.min[axis], b.max[axis]] {
            let t = (plane - o[axis]) / d[axis];
            if t <= 0.0 {
                continue;
            }
            let p = o + d * t;
            let inside = (0..3)
                .filter(|&a| a != axis)
                .all(|a| p[a] >= b.min[a] - 1e-12 && p[a] <= b.max[a] + 1e-12);
            if inside && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

/// Jaccard set loss `|M| / |gt ∪ M|` of the mispredicted set `M`.
pub fn jaccard_loss(mispredicted: &[bool], fg: &[bool]) -> f64 {
    let m = mispredicted.iter().filter(|&&v| v).count();
    let union = fg.iter().zip(mispredicted).filter(|(f, m)| **f || **m).count();
    if union == 0 {
        0.0
    } else {
        m as f64 / union as f64
    }
}

/// Lovász extension as the threshold integral
/// `Σ_k (e_(k) − e_(k+1)) · Δ({i : e_i ≥ e_(k)})`.
pub fn lovasz_threshold_oracle(errors: &[f64], fg: &[bool]) -> f64 {
    let mut levels: Vec<f64> = errors.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut total = 0.0;
    for (k, &v) in levels.iter().enumerate() {
        let next = levels.get(k + 1).copied().unwrap_or(0.0);
        let set: Vec<bool> = errors.iter().map(|&e| e >= v).collect();
        total += (v - next) * jaccard_loss(&set, fg);
    }
    total
}

/// Lovász extension of a submodular set function as the maximum of the
/// greedy inner product over every ordering of the items.
pub fn lovasz_exhaustive_oracle(errors: &[f64], fg: &[bool]) -> f64 {
    let n = errors.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::NEG_INFINITY;
    permute(&mut perm, 0, &mut |order| {
        let mut set = vec![false; n];
        let mut prev = 0.0;
        let mut acc = 0.0;
        for &i in order {
            set[i] = true;
            let cur = jaccard_loss(&set, fg);
            acc += errors[i] * (cur - prev);
            prev = cur;
        }
        best = best.max(acc);
    });
    best
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Central finite-difference gradient.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

/// Cholesky of `m + jitter·I` succeeds.
pub fn is_psd(m: &Matrix3<f64>, jitter: f64) -> bool {
    let sym = (m + m.transpose()) * 0.5;
    (sym + Matrix3::identity() * jitter).cholesky().is_some()
}

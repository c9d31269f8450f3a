//! Pinhole camera geometry.
//!
//! Camera frame convention: +z looks forward, +x goes right along image
//! width, +y goes down along image height, image origin at the top-left
//! corner. Depth values handled here are metric distances along the
//! normalized ray, not z-depth; see [`CameraModel::z_depth_to_ray_distance`].

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianPrimitive;

/// Tolerance on `RᵀR = I` and `det R = 1` for supplied pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of the integer pixel `(col, row)`.
    pub fn center(col: usize, row: usize) -> Self {
        Self::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be at least 1x1".into()));
        }
        Ok(())
    }
}

/// Pinhole intrinsics plus a rigid camera-to-world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    intrinsics: Intrinsics,
    pose: Isometry3<f64>,
}

impl CameraModel {
    /// Camera at the world origin looking down +z.
    pub fn new(intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            pose: Isometry3::identity(),
        })
    }

    pub fn with_pose(intrinsics: Intrinsics, pose: Isometry3<f64>) -> Result<Self> {
        intrinsics.validate()?;
        let q = pose.rotation.quaternion();
        if !q.coords.iter().all(|c| c.is_finite()) || !pose.translation.vector.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidCamera("non-finite pose".into()));
        }
        Ok(Self { intrinsics, pose })
    }

    /// Builds the pose from a camera-to-world rotation matrix and translation.
    /// The rotation must be orthonormal with determinant +1.
    pub fn with_rotation_matrix(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        check_rotation(&rotation)?;
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rotation));
        Self::with_pose(intrinsics, Isometry3::from_parts(Translation3::from(translation), rot))
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image "up" is
    /// opposite to the camera +y axis).
    pub fn look_at(
        intrinsics: Intrinsics,
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up vector parallel to view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self::with_rotation_matrix(intrinsics, rotation, eye.coords)
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn pose(&self) -> &Isometry3<f64> {
        &self.pose
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    fn normalized_coords(&self, px: Pixel) -> Result<(f64, f64)> {
        if !px.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite pixel ({}, {})", px.u, px.v)));
        }
        let k = &self.intrinsics;
        Ok(((px.u - k.cx) / k.fx, (px.v - k.cy) / k.fy))
    }

    /// Unit ray direction through `px`, in the camera frame.
    pub fn ray_direction(&self, px: Pixel) -> Result<Vector3<f64>> {
        let (x, y) = self.normalized_coords(px)?;
        let norm = (x * x + y * y + 1.0).sqrt();
        Ok(Vector3::new(x / norm, y / norm, 1.0 / norm))
    }

    /// Point at ray distance `d` through `px`, in the camera frame.
    pub fn backproject(&self, px: Pixel, d: f64) -> Result<Point3<f64>> {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidDepth(d));
        }
        Ok(Point3::from(self.ray_direction(px)? * d))
    }

    /// Projects a camera-frame point to its pixel and ray distance.
    pub fn project(&self, p: &Point3<f64>) -> Result<(Pixel, f64)> {
        if !p.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite point".into()));
        }
        if p.z <= 0.0 {
            return Err(Error::BehindCamera(p.z));
        }
        let k = &self.intrinsics;
        let u = k.fx * (p.x / p.z) + k.cx;
        let v = k.fy * (p.y / p.z) + k.cy;
        Ok((Pixel::new(u, v), p.coords.norm()))
    }

    pub fn z_depth_to_ray_distance(&self, px: Pixel, z: f64) -> Result<f64> {
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::InvalidDepth(z));
        }
        let (x, y) = self.normalized_coords(px)?;
        Ok(z * (x * x + y * y + 1.0).sqrt())
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose.transform_point(p)
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose.inverse_transform_point(p)
    }

    /// Moves a camera-frame Gaussian into the world frame: the mean is
    /// transformed rigidly, the rotation is pre-composed with the pose
    /// rotation, and scale, opacity and logits are carried over.
    pub fn to_world(&self, g: &GaussianPrimitive) -> GaussianPrimitive {
        g.transformed(&self.pose)
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidCamera("non-finite rotation".into()));
    }
    let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho_err > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::InvalidCamera(format!(
            "pose rotation is not a proper rotation (orthonormality error {ortho_err:e}, det {det})"
        )));
    }
    Ok(())
}

/// On-disk representation: intrinsics, row-major rotation, translation.
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = Error;

    fn try_from(rec: CameraRecord) -> Result<Self> {
        let intrinsics = Intrinsics {
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            width: rec.width,
            height: rec.height,
        };
        let r = rec.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        CameraModel::with_rotation_matrix(intrinsics, rotation, Vector3::from(rec.translation))
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(cam: CameraModel) -> Self {
        let k = cam.intrinsics;
        let m = cam.pose.rotation.to_rotation_matrix().into_inner();
        let t = cam.pose.translation.vector;
        CameraRecord {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [t.x, t.y, t.z],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn cam(f: f64, c: f64) -> CameraModel {
        CameraModel::new(Intrinsics {
            fx: f,
            fy: f,
            cx: c,
            cy: c,
            width: 100,
            height: 200,
        })
        .unwrap()
    }

    fn close(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn principal_ray() {
        let d = cam(1.0, 0.0).ray_direction(Pixel::new(0.0, 0.0)).unwrap();
        assert!(close(&d, &Vector3::z(), 1e-15));
    }

    #[test]
    fn off_axis_rays() {
        let d = cam(1.0, 0.0).ray_direction(Pixel::new(1.0, 0.0)).unwrap();
        assert!(close(&d, &Vector3::new(FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2), 1e-12));
        let d = cam(100.0, 50.0).ray_direction(Pixel::new(50.0, 150.0)).unwrap();
        assert!(close(&d, &Vector3::new(0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2), 1e-12));
    }

    #[test]
    fn non_finite_pixel_rejected() {
        let c = cam(1.0, 0.0);
        assert!(matches!(c.ray_direction(Pixel::new(f64::NAN, 0.0)), Err(Error::InvalidInput(_))));
        assert!(matches!(c.ray_direction(Pixel::new(0.0, f64::INFINITY)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn backproject_examples() {
        let p = cam(100.0, 50.0).backproject(Pixel::new(50.0, 50.0), 2.0).unwrap();
        assert!(close(&p.coords, &Vector3::new(0.0, 0.0, 2.0), 1e-12));
        let p = cam(1.0, 0.0).backproject(Pixel::new(1.0, 0.0), 2f64.sqrt()).unwrap();
        assert!(close(&p.coords, &Vector3::new(1.0, 0.0, 1.0), 1e-12));
    }

    #[test]
    fn backproject_rejects_bad_depth() {
        let c = cam(1.0, 0.0);
        for d in [0.0, -1.0, f64::NAN] {
            assert!(matches!(c.backproject(Pixel::new(0.0, 0.0), d), Err(Error::InvalidDepth(_))));
        }
    }

    #[test]
    fn project_examples() {
        let (px, d) = cam(100.0, 50.0).project(&Point3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((px.u, px.v, d), (50.0, 50.0, 2.0));
        let (px, d) = cam(1.0, 0.0).project(&Point3::new(1.0, 0.0, 1.0)).unwrap();
        assert_eq!((px.u, px.v), (1.0, 0.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn project_behind_camera() {
        let c = cam(1.0, 0.0);
        assert!(matches!(c.project(&Point3::new(0.0, 0.0, 0.0)), Err(Error::BehindCamera(_))));
        assert!(matches!(c.project(&Point3::new(1.0, 0.0, -1.0)), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn z_depth_conversion() {
        let c = cam(1.0, 0.0);
        assert_eq!(c.z_depth_to_ray_distance(Pixel::new(0.0, 0.0), 3.0).unwrap(), 3.0);
        let d = c.z_depth_to_ray_distance(Pixel::new(1.0, 0.0), 1.0).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        let px = Pixel::new(37.2, -12.5);
        let d = c.z_depth_to_ray_distance(px, 2.5).unwrap();
        assert!((c.backproject(px, d).unwrap().z - 2.5).abs() < 1e-9);
        assert!(c.z_depth_to_ray_distance(px, 0.0).is_err());
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        let mut k = *cam(1.0, 0.0).intrinsics();
        k.fx = 0.0;
        assert!(CameraModel::new(k).is_err());
        k.fx = 1.0;
        k.width = 0;
        assert!(CameraModel::new(k).is_err());
    }

    #[test]
    fn improper_rotation_rejected() {
        let k = *cam(1.0, 0.0).intrinsics();
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraModel::with_rotation_matrix(k, reflect, Vector3::zeros()).is_err());
        let skewed = Matrix3::identity() * 1.001;
        assert!(CameraModel::with_rotation_matrix(k, skewed, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_points_forward() {
        let k = *cam(1.0, 0.0).intrinsics();
        let eye = Point3::new(1.0, 2.0, 1.5);
        let target = Point3::new(4.0, 2.0, 1.5);
        let c = CameraModel::look_at(k, eye, target, Vector3::z()).unwrap();
        let ahead = c.camera_to_world(&Point3::new(0.0, 0.0, 1.0));
        assert!(close(&ahead.coords, &Vector3::new(2.0, 2.0, 1.5), 1e-12));
        // image down is world down
        let below = c.camera_to_world(&Point3::new(0.0, 1.0, 0.0));
        assert!(close(&below.coords, &Vector3::new(1.0, 2.0, 0.5), 1e-12));
        let back = c.world_to_camera(&ahead);
        assert!(close(&back.coords, &Vector3::z(), 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let k = *cam(120.0, 64.0).intrinsics();
        let c = CameraModel::look_at(k, Point3::new(0.3, 2.4, 1.5), Point3::new(4.0, 2.0, 0.8), Vector3::z()).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: CameraModel = serde_json::from_str(&s).unwrap();
        let p = Point3::new(1.0, -2.0, 3.0);
        assert!((c.camera_to_world(&p) - back.camera_to_world(&p)).norm() < 1e-12);
    }
}

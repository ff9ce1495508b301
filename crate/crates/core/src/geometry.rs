//! Pinhole camera model, rigid camera-to-world transforms and depth
//! back-projection.
//!
//! Conventions: the camera looks along +Z with +X to the right and +Y down.
//! A [`Pose`] maps camera coordinates into the world frame. Pixel `(u, v)`
//! refers to the pixel center at integer coordinates, so the image covers
//! `[-0.5, width - 0.5) x [-0.5, height - 0.5)`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point or vector in 3D space, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn distance(&self, other: &Self) -> T {
        (*self - *other).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Point3<U> {
        Point3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Point3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Neg for Point3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T = f64> {
    rotation: [[T; 3]; 3],
    translation: Point3<T>,
}

const POSE_TOLERANCE: f64 = 1e-6;

impl<T: Scalar> Pose<T> {
    /// Builds a pose, checking that `rotation` is orthonormal with
    /// determinant +1 (both within 1e-6).
    pub fn new(rotation: [[T; 3]; 3], translation: Point3<T>) -> Result<Self> {
        let r = rotation.map(|row| row.map(Scalar::as_f64));
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (rtr - expected).abs() > POSE_TOLERANCE {
                    return Err(Error::Input(format!(
                        "rotation is not orthonormal (RᵀR[{i}][{j}] = {rtr})"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > POSE_TOLERANCE {
            return Err(Error::Input(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.is_finite() {
            return Err(Error::Input("translation is not finite".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: Point3::zero(),
        }
    }

    pub fn from_translation(t: Point3<T>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Camera pose of an upright camera at `eye` looking horizontally along
    /// `heading` (radians, counter-clockwise from world +X, world +Z up).
    pub fn upright_camera(eye: Point3<T>, heading: T) -> Self {
        let (s, c) = heading.sin_cos();
        let z = T::zero();
        // Columns are the camera axes expressed in the world frame:
        // right = (s, -c, 0), down = (0, 0, -1), forward = (c, s, 0).
        Self {
            rotation: [[s, z, c], [-c, z, s], [z, -T::one(), z]],
            translation: eye,
        }
    }

    /// Parses a 4x4 row-major homogeneous matrix.
    pub fn from_row_major(m: &[T; 16]) -> Result<Self> {
        let eps = T::lit(POSE_TOLERANCE);
        if (m[12]).abs() > eps
            || (m[13]).abs() > eps
            || (m[14]).abs() > eps
            || (m[15] - T::one()).abs() > eps
        {
            return Err(Error::Input("pose matrix bottom row must be [0 0 0 1]".into()));
        }
        Self::new(
            [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            Point3::new(m[3], m[7], m[11]),
        )
    }

    pub fn to_row_major(&self) -> [T; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            z, z, z, o,
        ]
    }

    #[inline]
    pub fn rotation(&self) -> &[[T; 3]; 3] {
        &self.rotation
    }

    #[inline]
    pub fn translation(&self) -> Point3<T> {
        self.translation
    }

    /// Rotates a direction (no translation).
    #[inline]
    pub fn rotate(&self, p: &Point3<T>) -> Point3<T> {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    /// Camera frame to world frame.
    #[inline]
    pub fn transform(&self, p: &Point3<T>) -> Point3<T> {
        self.rotate(p) + self.translation
    }

    /// World frame to camera frame.
    #[inline]
    pub fn inverse_transform(&self, p: &Point3<T>) -> Point3<T> {
        let d = *p - self.translation;
        let r = &self.rotation;
        Point3::new(
            r[0][0] * d.x + r[1][0] * d.y + r[2][0] * d.z,
            r[0][1] * d.x + r[1][1] * d.y + r[2][1] * d.z,
            r[0][2] * d.x + r[1][2] * d.y + r[2][2] * d.z,
        )
    }

    /// Camera optical axis in the world frame.
    pub fn forward(&self) -> Point3<T> {
        let r = &self.rotation;
        Point3::new(r[0][2], r[1][2], r[2][2])
    }

    /// Heading of the optical axis projected on the world XY plane.
    pub fn heading(&self) -> T {
        let f = self.forward();
        f.y.atan2(f.x)
    }

    /// True when the image Y axis points straight down in the world.
    pub fn is_upright(&self) -> bool {
        let r = &self.rotation;
        let eps = T::lit(1e-12);
        r[0][1].abs() < eps && r[1][1].abs() < eps && (r[2][1] + T::one()).abs() < eps
    }

    pub fn cast<U: Scalar>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|row| row.map(|v| U::lit(v.as_f64()))),
            translation: self.translation.cast(),
        }
    }
}

/// Pinhole intrinsics shared by the color/label and depth images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T = f64> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Scalar> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (T::lit(self.width as f64), T::lit(self.height as f64));
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !(self.cx > T::zero() && self.cx < w && self.cy > T::zero() && self.cy < h) {
            return Err(Error::Config(format!(
                "principal point ({:?}, {:?}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Same optics at a different resolution (focal lengths and principal
    /// point scale with the image).
    pub fn scaled(&self, width: u32, height: u32) -> Result<Self> {
        let sx = T::lit(width as f64 / self.width as f64);
        let sy = T::lit(height as f64 / self.height as f64);
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn cast<U: Scalar>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Per-pixel depth in meters, row-major. Zero marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl DepthImage {
    /// Rejects NaN, infinite or negative depths.
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::Input(format!(
                "depth buffer has {} values, expected {}x{}",
                values.len(),
                width,
                height
            )));
        }
        if let Some(i) = values.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Input(format!(
                "depth at index {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: u32, height: u32, depth: f32) -> Result<Self> {
        Self::new(width, height, vec![depth; width as usize * height as usize])
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f32 {
        self.values[v as usize * self.width as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|d| **d > 0.0).count()
    }
}

/// Integer pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub u: u32,
    pub v: u32,
}

/// Continuous image coordinates returned by [`project`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T = f64> {
    pub u: T,
    pub v: T,
    /// Camera-frame depth (z).
    pub depth: T,
}

/// Back-projects a single pixel at depth `d`: `d * K^-1 [u v 1]^T`.
#[inline]
pub fn back_project_pixel<T: Scalar>(u: T, v: T, d: T, k: &Intrinsics<T>) -> Point3<T> {
    Point3::new(d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d)
}

fn check_dims<T>(depth: &DepthImage, k: &Intrinsics<T>) -> Result<()> {
    if depth.width != k.width || depth.height != k.height {
        return Err(Error::Config(format!(
            "depth image is {}x{} but intrinsics describe {}x{}",
            depth.width, depth.height, k.width, k.height
        )));
    }
    Ok(())
}

/// Camera-frame points for every pixel with positive depth, row-major.
pub fn back_project<T: Scalar>(
    depth: &DepthImage,
    k: &Intrinsics<T>,
) -> Result<Vec<(Pixel, Point3<T>)>> {
    check_dims(depth, k)?;
    let mut out = Vec::with_capacity(depth.values.len());
    for v in 0..depth.height {
        let row = &depth.values[v as usize * depth.width as usize..][..depth.width as usize];
        for (u, &d) in row.iter().enumerate() {
            if d > 0.0 {
                let p = back_project_pixel(
                    T::lit(u as f64),
                    T::lit(v as f64),
                    T::lit(d as f64),
                    k,
                );
                out.push((Pixel { u: u as u32, v }, p));
            }
        }
    }
    Ok(out)
}

/// Applies the camera-to-world transform to every point.
pub fn to_world<T: Scalar>(points: &[Point3<T>], pose: &Pose<T>) -> Vec<Point3<T>> {
    points.iter().map(|p| pose.transform(p)).collect()
}

/// Projects a world point into the image. `None` when the point is behind
/// the camera or falls outside the image.
pub fn project<T: Scalar>(
    point: &Point3<T>,
    pose: &Pose<T>,
    k: &Intrinsics<T>,
) -> Option<Projection<T>> {
    let c = pose.inverse_transform(point);
    if c.z <= T::zero() {
        return None;
    }
    let u = k.fx * c.x / c.z + k.cx;
    let v = k.fy * c.y / c.z + k.cy;
    let half = T::lit(0.5);
    let (w, h) = (T::lit(k.width as f64), T::lit(k.height as f64));
    if u < -half || u >= w - half || v < -half || v >= h - half {
        return None;
    }
    Some(Projection { u, v, depth: c.z })
}

/// Dense world-frame point image: one point per pixel plus a validity mask.
#[derive(Clone, Debug)]
pub struct PointImage<T = f64> {
    width: u32,
    height: u32,
    points: Vec<Point3<T>>,
    valid: Vec<bool>,
}

impl<T: Scalar> PointImage<T> {
    /// Back-projects and transforms every valid pixel to the world frame.
    pub fn from_depth(depth: &DepthImage, k: &Intrinsics<T>, pose: &Pose<T>) -> Result<Self> {
        check_dims(depth, k)?;
        let n = depth.values.len();
        let mut points = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for v in 0..depth.height {
            let row = &depth.values[v as usize * depth.width as usize..][..depth.width as usize];
            for (u, &d) in row.iter().enumerate() {
                if d > 0.0 {
                    let c = back_project_pixel(
                        T::lit(u as f64),
                        T::lit(v as f64),
                        T::lit(d as f64),
                        k,
                    );
                    points.push(pose.transform(&c));
                    valid.push(true);
                } else {
                    points.push(Point3::zero());
                    valid.push(false);
                }
            }
        }
        Ok(Self {
            width: depth.width,
            height: depth.height,
            points,
            valid,
        })
    }

    /// Builds a point image from explicit per-pixel data.
    pub fn from_parts(
        width: u32,
        height: u32,
        points: Vec<Point3<T>>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width as usize * height as usize;
        if points.len() != n || valid.len() != n {
            return Err(Error::Input("point image buffers do not match dimensions".into()));
        }
        Ok(Self {
            width,
            height,
            points,
            valid,
        })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    #[inline]
    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    /// Valid world points in row-major order.
    pub fn valid_points(&self) -> impl Iterator<Item = &Point3<T>> {
        self.points
            .iter()
            .zip(&self.valid)
            .filter_map(|(p, ok)| ok.then_some(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k640() -> Intrinsics {
        Intrinsics::new(320.0, 320.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn principal_ray_back_projects_on_axis() {
        let p = back_project_pixel(320.0, 240.0, 2.0, &k640());
        assert_eq!(p, Point3::new(0.0, 0.0, 2.0));
        let p = back_project_pixel(640.0, 240.0, 2.0, &k640());
        assert_eq!(p, Point3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn invalid_depth_is_omitted() {
        let mut values = vec![1.0f32; 640 * 480];
        values[5] = 0.0;
        values[1000] = 0.0;
        let depth = DepthImage::new(640, 480, values).unwrap();
        let pts = back_project(&depth, &k640()).unwrap();
        assert_eq!(pts.len(), 640 * 480 - 2);
        assert!(pts.iter().all(|(px, _)| *px != Pixel { u: 5, v: 0 }));
        // row-major order
        assert!(pts.windows(2).all(|w| (w[0].0.v, w[0].0.u) < (w[1].0.v, w[1].0.u)));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let depth = DepthImage::filled(320, 240, 1.0).unwrap();
        assert!(matches!(back_project(&depth, &k640()), Err(Error::Config(_))));
    }

    #[test]
    fn bad_depth_values_rejected() {
        assert!(DepthImage::new(1, 2, vec![1.0, f32::NAN]).is_err());
        assert!(DepthImage::new(1, 2, vec![-1.0, 1.0]).is_err());
        assert!(DepthImage::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn intrinsics_invariants() {
        assert!(Intrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(Intrinsics::new(1.0, 1.0, 0.0, 1.0, 4, 4).is_err());
        let k = k640().scaled(160, 120).unwrap();
        assert_eq!((k.fx, k.cx, k.cy), (80.0, 80.0, 60.0));
    }

    #[test]
    fn to_world_identity_and_translation() {
        let p = [Point3::new(0.0, 0.0, 2.0)];
        assert_eq!(to_world(&p, &Pose::identity())[0], p[0]);
        let t = Pose::from_translation(Point3::new(1.0, 2.0, 3.0));
        assert_eq!(to_world(&p, &t)[0], Point3::new(1.0, 2.0, 5.0));
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let r = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(r, Point3::zero()).is_err());
        let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(mirror, Point3::zero()).is_err());
    }

    #[test]
    fn upright_camera_axes() {
        let pose = Pose::upright_camera(Point3::new(1.0, 2.0, 0.6), std::f64::consts::FRAC_PI_2);
        Pose::new(*pose.rotation(), pose.translation()).unwrap();
        assert!(pose.is_upright());
        let f = pose.forward();
        assert_abs_diff_eq!(f.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pose.heading(), std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        // image +Y is world down
        let down = pose.rotate(&Point3::new(0.0, 1.0, 0.0));
        assert_abs_diff_eq!(down.z, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn row_major_round_trip() {
        let pose = Pose::upright_camera(Point3::new(1.0, -2.0, 0.6), 0.3);
        let back = Pose::from_row_major(&pose.to_row_major()).unwrap();
        assert_eq!(back, pose);
    }

    #[test]
    fn project_rejects_behind_and_off_image() {
        let k = k640();
        let pose = Pose::identity();
        assert!(project(&Point3::new(0.0, 0.0, -1.0), &pose, &k).is_none());
        // u = 320 * 2 / 1 + 320 = 960 > 639.5
        assert!(project(&Point3::new(2.0, 0.0, 1.0), &pose, &k).is_none());
        // v = 320 * (-1) / 1 + 240 = -80
        assert!(project(&Point3::new(0.0, -1.0, 1.0), &pose, &k).is_none());
        let p = project(&Point3::new(0.5, 0.25, 2.0), &pose, &k).unwrap();
        assert_abs_diff_eq!(p.u, 400.0);
        assert_abs_diff_eq!(p.v, 280.0);
    }

    #[test]
    fn f32_kernels_agree_with_f64() {
        let k = k640();
        let pose = Pose::upright_camera(Point3::new(0.5, 0.5, 0.6), 1.0);
        let p64 = pose.transform(&back_project_pixel(100.0, 50.0, 3.0, &k));
        let p32 = pose
            .cast::<f32>()
            .transform(&back_project_pixel(100.0f32, 50.0, 3.0, &k.cast()));
        assert_abs_diff_eq!(p64.x, p32.x as f64, epsilon = 1e-5);
        assert_abs_diff_eq!(p64.z, p32.z as f64, epsilon = 1e-5);
    }
}

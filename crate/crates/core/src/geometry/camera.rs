use nalgebra::Matrix3;

use super::Vec3;
use crate::error::{Error, Result};

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vec3,
    /// Depth range used to normalise depth features.
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vec3,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::invalid("need 0 < near < far"));
        }
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max();
        if err > 1e-9 {
            return Err(Error::invalid(format!(
                "rotation not orthonormal (error {err:e})"
            )));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `fov_y` in radians.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("eye and target coincide"))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("up is parallel to the view direction"))?;
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Self::new(
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        )
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn depth(&self, p: Vec3) -> f64 {
        self.to_camera(p).z
    }

    /// Continuous pixel coordinate and depth along the optical axis.
    pub fn project(&self, p: Vec3) -> Result<([f64; 2], f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return Err(Error::OutOfFrustum { depth: c.z });
        }
        Ok((
            [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy],
            c.z,
        ))
    }

    /// World point at `depth` along the ray through pixel coordinate `uv`.
    pub fn back_project(&self, uv: [f64; 2], depth: f64) -> Vec3 {
        let c = Vec3::new(
            (uv[0] - self.cx) / self.fx * depth,
            (uv[1] - self.cy) / self.fy * depth,
            depth,
        );
        self.rotation.transpose() * (c - self.translation)
    }

    /// `(depth - near) / (far - near)`, clamped to `[0, 1]`.
    pub fn normalized_depth(&self, p: Vec3) -> f64 {
        ((self.depth(p) - self.near) / (self.far - self.near)).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(f: f64) -> Camera {
        Camera::new(
            f,
            f,
            32.0,
            24.0,
            64,
            48,
            Matrix3::identity(),
            Vec3::zeros(),
            0.5,
            10.0,
        )
        .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = identity_cam(100.0);
        let (uv, d) = cam.project(Vec3::new(0.0, 0.0, 3.0)).unwrap();
        assert_eq!(uv, [32.0, 24.0]);
        assert_eq!(d, 3.0);
    }

    #[test]
    fn pinhole_formula() {
        let cam = identity_cam(80.0);
        let (uv, _) = cam.project(Vec3::new(0.5, 0.0, 2.0)).unwrap();
        assert_eq!(uv, [32.0 + 80.0 * 0.5 / 2.0, 24.0]);
    }

    #[test]
    fn behind_camera_rejected() {
        let cam = identity_cam(80.0);
        assert!(matches!(
            cam.project(Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::OutOfFrustum { .. })
        ));
    }

    #[test]
    fn look_at_round_trip() {
        let cam = Camera::look_at(
            Vec3::new(2.0, 0.5, 3.0),
            Vec3::zeros(),
            Vec3::y(),
            0.8,
            64,
            64,
            0.5,
            8.0,
        )
        .unwrap();
        let p = Vec3::new(0.1, -0.3, 0.2);
        let (uv, d) = cam.project(p).unwrap();
        assert!((cam.back_project(uv, d) - p).norm() < 1e-9);
        assert!((cam.center() - Vec3::new(2.0, 0.5, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn depth_normalisation() {
        let cam = identity_cam(50.0);
        assert_eq!(cam.normalized_depth(Vec3::new(0.0, 0.0, 0.5)), 0.0);
        assert_eq!(cam.normalized_depth(Vec3::new(0.0, 0.0, 10.0)), 1.0);
        assert!((cam.normalized_depth(Vec3::new(0.0, 0.0, 5.25)) - 0.5).abs() < 1e-12);
        assert_eq!(cam.normalized_depth(Vec3::new(0.0, 0.0, 20.0)), 1.0);
    }
}

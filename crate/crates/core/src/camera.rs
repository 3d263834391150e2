//! Pinhole camera shared by rendering, interpretation and lifting.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Points closer than this along the view axis cannot be projected.
const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Invalid(String),
    #[error("point at depth {0:.4} m is behind the camera")]
    BehindCamera(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vector3<f64>,
    pub target: Vector3<f64>,
    pub up: Vector3<f64>,
    /// Vertical field of view, radians.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Camera {
    /// Frontal view framing a 1.75 m figure standing at the origin.
    fn default() -> Self {
        Camera {
            position: Vector3::new(0.0, 0.9, -3.5),
            target: Vector3::new(0.0, 0.9, 0.0),
            up: Vector3::y(),
            fov_y: 40f64.to_radians(),
            width: 512,
            height: 512,
        }
    }
}

/// Orthonormal camera axes in world coordinates.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    pub forward: Vector3<f64>,
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(CameraError::Invalid(format!("field of view {} outside (0, pi)", self.fov_y)));
        }
        if self.width < 64 || self.height < 64 {
            return Err(CameraError::Invalid(format!("canvas {}x{} below 64 px", self.width, self.height)));
        }
        let f = self.target - self.position;
        if f.norm() < 1e-9 || f.cross(&self.up).norm() < 1e-9 * f.norm() * self.up.norm().max(1e-300) {
            return Err(CameraError::Invalid("degenerate view direction or up vector".into()));
        }
        Ok(())
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = (self.target - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        CameraBasis { right, up, forward }
    }

    pub fn focal_px(&self) -> f64 {
        self.height as f64 / 2.0 / (self.fov_y / 2.0).tan()
    }

    pub fn center_px(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Distance of `p` along the viewing axis.
    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        (p - self.position).dot(&self.basis().forward)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        Projector::new(self).project(p)
    }

    /// World-space ray through a canvas position (pixels, y down).
    pub fn pixel_ray(&self, px: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        Projector::new(self).pixel_ray(px)
    }
}

/// Camera with its basis precomputed, for inner loops.
#[derive(Debug, Clone, Copy)]
pub struct Projector {
    pub origin: Vector3<f64>,
    pub basis: CameraBasis,
    pub focal: f64,
    pub center: Vector2<f64>,
}

impl Projector {
    pub fn new(camera: &Camera) -> Self {
        Projector {
            origin: camera.position,
            basis: camera.basis(),
            focal: camera.focal_px(),
            center: camera.center_px(),
        }
    }

    /// Same intrinsics rescaled to a canvas `scale` times as large.
    pub fn scaled(&self, scale: f64) -> Self {
        Projector { focal: self.focal * scale, center: self.center * scale, ..*self }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, CameraError> {
        let d = p - self.origin;
        let z = d.dot(&self.basis.forward);
        if z <= NEAR_PLANE {
            return Err(CameraError::BehindCamera(z));
        }
        Ok(Vector2::new(
            self.center.x + self.focal * d.dot(&self.basis.right) / z,
            self.center.y - self.focal * d.dot(&self.basis.up) / z,
        ))
    }

    pub fn pixel_ray(&self, px: &Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let x = (px.x - self.center.x) / self.focal;
        let y = -(px.y - self.center.y) / self.focal;
        let dir = (self.basis.forward + self.basis.right * x + self.basis.up * y).normalize();
        (self.origin, dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_point_projects_to_center() {
        let cam = Camera::default();
        let p = cam.project(&cam.target).unwrap();
        assert!((p - Vector2::new(256.0, 256.0)).norm() < 1e-6);
    }

    #[test]
    fn figure_right_appears_on_canvas_left() {
        let cam = Camera::default();
        let right = cam.project(&Vector3::new(0.5, 0.9, 0.0)).unwrap();
        assert!(right.x < 256.0);
        let up = cam.project(&Vector3::new(0.0, 1.5, 0.0)).unwrap();
        assert!(up.y < 256.0);
    }

    #[test]
    fn manual_pinhole_matches() {
        let cam = Camera::default();
        let f = 256.0 / (20f64.to_radians()).tan();
        // (0.3, 1.2, 0.5) relative to (0, 0.9, -3.5): right = -x, up = y, depth = z.
        let p = cam.project(&Vector3::new(0.3, 1.2, 0.5)).unwrap();
        let expected = Vector2::new(256.0 + f * (-0.3) / 4.0, 256.0 - f * 0.3 / 4.0);
        assert!((p - expected).norm() < 1e-9);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = Camera::default();
        assert!(matches!(cam.project(&Vector3::new(0.0, 0.9, -4.0)), Err(CameraError::BehindCamera(_))));
    }

    #[test]
    fn pixel_ray_inverts_projection() {
        let cam = Camera::default();
        let p = Vector3::new(0.2, 0.4, 0.7);
        let px = cam.project(&p).unwrap();
        let (o, d) = cam.pixel_ray(&px);
        let t = (p - o).norm();
        assert!((o + d * t - p).norm() < 1e-9);
    }

    #[test]
    fn validation() {
        assert!(Camera::default().validate().is_ok());
        assert!(Camera { fov_y: 4.0, ..Camera::default() }.validate().is_err());
        assert!(Camera { width: 32, ..Camera::default() }.validate().is_err());
    }
}

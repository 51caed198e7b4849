use serde::{Deserialize, Serialize};

use super::vec3::{Mat3, Vec3};
use crate::error::{invalid, Error, Result};

/// Minimum camera-frame depth for a point to be projectable.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn inv_direction(&self) -> Vec3 {
        Vec3::new(1.0 / self.direction.x, 1.0 / self.direction.y, 1.0 / self.direction.z)
    }
}

/// Pinhole camera. `rotation`/`translation` map world to camera frame:
/// `x_cam = rotation · x_world + translation`. The camera looks along +z with
/// +v pointing down the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera has zero image extent"));
        }
        let err = self.rotation.orthonormality_error();
        if err > 1e-6 {
            return Err(invalid(format!("rotation is not orthonormal (error {err:e})")));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Camera {
        let z = (target - eye).normalized();
        let x = z.cross(up).normalized();
        let y = z.cross(x);
        let rotation = Mat3::from_rows(x, y, z);
        let translation = -rotation.mul_vec(eye);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation,
            translation,
            width,
            height,
        }
    }

    pub fn center(&self) -> Vec3 {
        -self.rotation.transpose().mul_vec(self.translation)
    }

    /// World-frame direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2)
    }

    pub fn to_camera_frame(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn from_camera_frame(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(p - self.translation)
    }

    /// Pixel coordinates and camera-frame depth. The result may fall outside the image.
    pub fn project(&self, p: Vec3) -> Result<(f64, f64, f64)> {
        let c = self.to_camera_frame(p);
        if !(c.z > MIN_DEPTH) {
            return Err(Error::NotProjectable { depth: c.z });
        }
        Ok((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// Camera-frame point at pixel `(u, v)` and depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        Vec3::new(depth * (u - self.cx) / self.fx, depth * (v - self.cy) / self.fy, depth)
    }

    pub fn ray(&self, u: f64, v: f64) -> Result<Ray> {
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return Err(invalid(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let d_cam = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let d = self.rotation.transpose().mul_vec(d_cam).normalized();
        Ok(Ray::new(self.center(), d))
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> Ray {
        self.ray(col as f64 + 0.5, row as f64 + 0.5).expect("pixel center is in bounds")
    }
}

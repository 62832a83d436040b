use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with an OpenCV-style frame (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub z_near: f64,
}

impl Camera {
    pub const DEFAULT_Z_NEAR: f64 = 0.01;

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: &Matrix4<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::input(format!("camera {id}: zero image size")));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::input(format!("camera {id}: focal lengths must be positive")));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::input(format!(
                "camera {id}: principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        if world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("camera {id}: non-finite pose")));
        }
        let rotation: Matrix3<f64> = world_to_camera.fixed_view::<3, 3>(0, 0).into();
        let translation: Vector3<f64> = world_to_camera.fixed_view::<3, 1>(0, 3).into();
        let ortho_err = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if ortho_err > 1e-5 || rotation.determinant() < 0.0 {
            return Err(Error::input(format!(
                "camera {id}: rotation block is not a proper rotation"
            )));
        }
        Ok(Self {
            id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            z_near: Self::DEFAULT_Z_NEAR,
        })
    }

    /// Camera at `eye` looking at `target`, `up` giving the world up direction.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        id: u32,
        width: u32,
        height: u32,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Camera::new(
            id,
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            &m,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

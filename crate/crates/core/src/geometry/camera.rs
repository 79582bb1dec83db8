use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3};

use super::GeometryError;
use crate::Scalar;

/// Calibrated pinhole camera. Extrinsics map world to camera:
/// `x_cam = rotation * x_world + translation` (millimetres).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView<T: Scalar> {
    intrinsics: Matrix3<T>,
    rotation: Matrix3<T>,
    translation: Vector3<T>,
    image_size: (u32, u32),
}

impl<T: Scalar> CameraView<T> {
    pub fn new(
        intrinsics: Matrix3<T>,
        rotation: Matrix3<T>,
        translation: Vector3<T>,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let ortho_tol = T::lit(1e-9);
        let rtr = rotation.transpose() * rotation;
        let eye = Matrix3::<T>::identity();
        if (rtr - eye).iter().any(|e| e.abs() >= ortho_tol) {
            return Err(GeometryError::InvalidCamera(
                "rotation is not orthonormal".into(),
            ));
        }
        if rotation.determinant() <= T::zero() {
            return Err(GeometryError::InvalidCamera(
                "rotation is a reflection".into(),
            ));
        }
        if intrinsics[(0, 0)] <= T::zero() || intrinsics[(1, 1)] <= T::zero() {
            return Err(GeometryError::InvalidCamera(
                "focal lengths must be positive".into(),
            ));
        }
        if intrinsics[(1, 0)] != T::zero()
            || intrinsics[(2, 0)] != T::zero()
            || intrinsics[(2, 1)] != T::zero()
            || intrinsics[(2, 2)] != T::one()
        {
            return Err(GeometryError::InvalidCamera(
                "intrinsics must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        if intrinsics
            .iter()
            .chain(translation.iter())
            .any(|v| !v.is_finite())
        {
            return Err(GeometryError::InvalidCamera("non-finite parameter".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            image_size,
        })
    }

    /// Camera at `eye` looking at `target`, world `up` projecting upwards in
    /// the image. Principal point at the image centre.
    pub fn look_at(
        eye: Vector3<T>,
        target: Vector3<T>,
        up: Vector3<T>,
        focal: T,
        image_size: (u32, u32),
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() <= T::default_epsilon() {
            return Err(GeometryError::InvalidCamera("eye equals target".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&up);
        if x.norm() <= T::lit(1e-12) {
            return Err(GeometryError::InvalidCamera(
                "viewing direction parallel to up vector".into(),
            ));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let translation = -(rotation * eye);
        let half = T::lit(0.5);
        let intrinsics = Matrix3::new(
            focal,
            T::zero(),
            T::lit(image_size.0 as f64) * half,
            T::zero(),
            focal,
            T::lit(image_size.1 as f64) * half,
            T::zero(),
            T::zero(),
            T::one(),
        );
        Self::new(intrinsics, rotation, translation, image_size)
    }

    pub fn intrinsics(&self) -> &Matrix3<T> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<T> {
        &self.translation
    }

    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    pub fn focal(&self) -> T {
        (self.intrinsics[(0, 0)] + self.intrinsics[(1, 1)]) * T::lit(0.5)
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn image_diagonal(&self) -> T {
        let (w, h) = self.image_size;
        T::lit(((w as f64).powi(2) + (h as f64).powi(2)).sqrt())
    }

    pub fn to_camera(&self, point: &Vector3<T>) -> Vector3<T> {
        self.rotation * point + self.translation
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, point: &Vector3<T>) -> T {
        self.to_camera(point).z
    }

    /// Pinhole projection to pixels. No clamping to the image bounds.
    pub fn project(&self, point: &Vector3<T>) -> Result<Vector2<T>, GeometryError> {
        let pc = self.to_camera(point);
        if pc.z <= T::zero() {
            return Err(GeometryError::BehindCamera {
                depth: pc.z.as_f64(),
            });
        }
        let h = self.intrinsics * (pc / pc.z);
        Ok(Vector2::new(h.x, h.y))
    }

    pub fn in_image(&self, pixel: &Vector2<T>) -> bool {
        let (w, h) = self.image_size;
        pixel.x >= T::zero()
            && pixel.y >= T::zero()
            && pixel.x <= T::lit(w as f64)
            && pixel.y <= T::lit(h as f64)
    }

    /// `K [R | t]`.
    pub fn projection_matrix(&self) -> Matrix3x4<T> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        rt.set_column(3, &self.translation);
        self.intrinsics * rt
    }

    /// Unit direction (world frame) of the ray through `pixel`.
    pub fn ray_direction(&self, pixel: &Vector2<T>) -> Vector3<T> {
        let k_inv = self
            .intrinsics
            .try_inverse()
            .expect("validated intrinsics are invertible");
        let dir_cam = k_inv * Vector3::new(pixel.x, pixel.y, T::one());
        (self.rotation.transpose() * dir_cam).normalize()
    }

    /// Normalised image coordinates `K^-1 [u, v, 1]` (third entry is 1).
    pub fn normalize_pixel(&self, pixel: &Vector2<T>) -> Vector2<T> {
        let k = &self.intrinsics;
        let y = (pixel.y - k[(1, 2)]) / k[(1, 1)];
        let x = (pixel.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
        Vector2::new(x, y)
    }
}

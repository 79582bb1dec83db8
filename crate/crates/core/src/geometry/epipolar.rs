use nalgebra::{Matrix3, Vector2, Vector3};

use super::{CameraView, GeometryError};
use crate::Scalar;

/// Default decay constant `m` of the correspondence score `exp(-m d)`.
pub const DEFAULT_SCORE_DECAY: f64 = 10.0;

/// Fundamental matrix between two views, with `x_b^T F x_a = 0` for
/// corresponding homogeneous pixels. Stores both image diagonals so the
/// symmetric distance can be expressed resolution-free.
#[derive(Debug, Clone, PartialEq)]
pub struct EpipolarPair<T: Scalar> {
    fundamental: Matrix3<T>,
    diagonal_a: T,
    diagonal_b: T,
}

fn skew<T: Scalar>(t: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -t.z,
        t.y,
        t.z,
        T::zero(),
        -t.x,
        -t.y,
        t.x,
        T::zero(),
    )
}

/// Fundamental matrix of view `b` relative to view `a`, scaled to unit
/// Frobenius norm.
pub fn fundamental_matrix<T: Scalar>(
    a: &CameraView<T>,
    b: &CameraView<T>,
) -> Result<EpipolarPair<T>, GeometryError> {
    let baseline = a.center() - b.center();
    let scale = T::one().max(a.center().norm()).max(b.center().norm());
    if baseline.norm() <= T::lit(1e-9) * scale {
        return Err(GeometryError::DegenerateRig);
    }
    let rel_r = b.rotation() * a.rotation().transpose();
    let rel_t = b.translation() - rel_r * a.translation();
    let essential = skew(&rel_t) * rel_r;
    let ka_inv = a
        .intrinsics()
        .try_inverse()
        .ok_or_else(|| GeometryError::InvalidCamera("singular intrinsics".into()))?;
    let kb_inv = b
        .intrinsics()
        .try_inverse()
        .ok_or_else(|| GeometryError::InvalidCamera("singular intrinsics".into()))?;
    let f = kb_inv.transpose() * essential * ka_inv;
    let norm = f.norm();
    if norm <= T::zero() || !norm.is_finite() {
        return Err(GeometryError::DegenerateRig);
    }
    Ok(EpipolarPair {
        fundamental: f / norm,
        diagonal_a: a.image_diagonal(),
        diagonal_b: b.image_diagonal(),
    })
}

fn homogeneous<T: Scalar>(p: &Vector2<T>) -> Vector3<T> {
    Vector3::new(p.x, p.y, T::one())
}

fn point_line_distance<T: Scalar>(p: &Vector3<T>, line: &Vector3<T>) -> T {
    let n = (line.x * line.x + line.y * line.y).sqrt();
    if n <= T::zero() {
        // point coincides with the epipole; every line passes through it
        return T::zero();
    }
    p.dot(line).abs() / n
}

impl<T: Scalar> EpipolarPair<T> {
    pub fn fundamental(&self) -> &Matrix3<T> {
        &self.fundamental
    }

    /// The relation with the roles of the two views exchanged.
    pub fn reversed(&self) -> Self {
        Self {
            fundamental: self.fundamental.transpose(),
            diagonal_a: self.diagonal_b,
            diagonal_b: self.diagonal_a,
        }
    }

    /// Algebraic residual `x_b^T F x_a` divided by `|x_a| |x_b|`.
    pub fn normalized_residual(&self, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
        let ha = homogeneous(xa);
        let hb = homogeneous(xb);
        hb.dot(&(self.fundamental * ha)) / (ha.norm() * hb.norm())
    }

    /// Pixel distance of `xb` to the epipolar line of `xa` in view b.
    pub fn distance_in_b(&self, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
        point_line_distance(&homogeneous(xb), &(self.fundamental * homogeneous(xa)))
    }

    /// Pixel distance of `xa` to the epipolar line of `xb` in view a.
    pub fn distance_in_a(&self, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
        point_line_distance(
            &homogeneous(xa),
            &(self.fundamental.transpose() * homogeneous(xb)),
        )
    }

    /// Mean of the two point-to-epipolar-line distances, each divided by
    /// its image diagonal.
    pub fn symmetric_distance(&self, xa: &Vector2<T>, xb: &Vector2<T>) -> T {
        let db = self.distance_in_b(xa, xb) / self.diagonal_b;
        let da = self.distance_in_a(xa, xb) / self.diagonal_a;
        (da + db) * T::lit(0.5)
    }

    /// Smallest over largest singular value of the fundamental matrix.
    pub fn rank_deficiency(&self) -> T {
        let sv = self.fundamental.singular_values();
        let max = sv.max();
        if max <= T::zero() {
            return T::zero();
        }
        sv.min() / max
    }
}

/// `exp(-decay * d)` for a non-negative epipolar distance `d`.
pub fn correspondence_score<T: Scalar>(d: T, decay: T) -> Result<T, GeometryError> {
    if !(d >= T::zero()) {
        return Err(GeometryError::NegativeDistance(d.as_f64()));
    }
    Ok((-decay * d).exp())
}

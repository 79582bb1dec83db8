use nalgebra::{DMatrix, Matrix3x4, Vector2, Vector3};

use super::{CameraView, GeometryError};
use crate::Scalar;

/// Rank threshold for [`triangulate`]: the third singular value of the
/// normalised design matrix must exceed this fraction of the first.
pub const DEFAULT_MIN_SINGULAR_RATIO: f64 = 1e-10;

/// Linear (DLT) triangulation from two or more calibrated observations.
pub fn triangulate<T: Scalar>(
    observations: &[(&CameraView<T>, Vector2<T>)],
) -> Result<Vector3<T>, GeometryError> {
    triangulate_with(observations, T::lit(DEFAULT_MIN_SINGULAR_RATIO))
}

/// [`triangulate`] with an explicit conditioning threshold.
///
/// Rows are built in normalised image coordinates and the world frame is
/// shifted and scaled to the camera centroid so the SVD sees O(1) entries.
pub fn triangulate_with<T: Scalar>(
    observations: &[(&CameraView<T>, Vector2<T>)],
    min_singular_ratio: T,
) -> Result<Vector3<T>, GeometryError> {
    let n = observations.len();
    if n < 2 {
        return Err(GeometryError::InsufficientViews(n));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let centroid = observations
        .iter()
        .fold(Vector3::zeros(), |acc, (cam, _)| acc + cam.center())
        * inv_n;
    let mut scale = observations
        .iter()
        .fold(T::zero(), |acc, (cam, _)| acc + (cam.center() - centroid).norm())
        * inv_n;
    if scale <= T::zero() {
        scale = T::one();
    }

    let mut a = DMatrix::<T>::zeros(2 * n, 4);
    for (i, (cam, pixel)) in observations.iter().enumerate() {
        // P' = [s R | R c + t] maps normalised world points X' = (X - c) / s
        let mut p = Matrix3x4::<T>::zeros();
        p.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(cam.rotation() * scale));
        p.set_column(3, &(cam.rotation() * centroid + cam.translation()));
        let xn = cam.normalize_pixel(pixel);
        for (r, coord) in [(0usize, xn.x), (1usize, xn.y)] {
            let row = p.row(2) * coord - p.row(r);
            let norm = row.norm();
            let row = if norm > T::zero() { row / norm } else { row };
            for c in 0..4 {
                a[(2 * i + r, c)] = row[c];
            }
        }
    }

    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(GeometryError::IllConditioned { ratio: 0.0 })?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let largest = svd.singular_values[order[0]];
    let third = svd.singular_values[order[2]];
    let ratio = if largest > T::zero() {
        third / largest
    } else {
        T::zero()
    };
    if !(ratio > min_singular_ratio) {
        return Err(GeometryError::IllConditioned {
            ratio: ratio.as_f64(),
        });
    }
    let h = v_t.row(order[3]);
    let w = h[3];
    if w.abs() <= T::lit(1e-12) {
        return Err(GeometryError::IllConditioned { ratio: 0.0 });
    }
    let local = Vector3::new(h[0] / w, h[1] / w, h[2] / w);
    Ok(local * scale + centroid)
}

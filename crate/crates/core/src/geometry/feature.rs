use nalgebra::Vector2;

use super::GeometryError;
use crate::Scalar;

/// Dense per-view feature map. Cell `(x, y)` holds a `channels`-vector and
/// covers `stride` image pixels per side; cell centres sit at pixel
/// `x * stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T: Scalar> {
    width: usize,
    height: usize,
    channels: usize,
    stride: T,
    values: Vec<T>,
}

/// Result of a bilinear lookup. `in_view` is false when the query fell
/// outside the grid; `values` is then all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample<T> {
    pub values: Vec<T>,
    pub in_view: bool,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn zeros(width: usize, height: usize, channels: usize, stride: T) -> Self {
        Self {
            width,
            height,
            channels,
            stride,
            values: vec![T::zero(); width * height * channels],
        }
    }

    pub fn from_values(
        width: usize,
        height: usize,
        channels: usize,
        stride: T,
        values: Vec<T>,
    ) -> Result<Self, GeometryError> {
        if values.len() != width * height * channels {
            return Err(GeometryError::GridShape(format!(
                "expected {} values for {width}x{height}x{channels}, got {}",
                width * height * channels,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::GridShape("non-finite feature value".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            stride,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn stride(&self) -> T {
        self.stride
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn cell(&self, x: usize, y: usize) -> &[T] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let start = (y * self.width + x) * self.channels;
        &mut self.values[start..start + self.channels]
    }

    /// Bilinear lookup in grid coordinates.
    pub fn sample(&self, point: &Vector2<T>) -> FeatureSample<T> {
        bilinear_sample(self.width, self.height, self.channels, point, |x, y, out| {
            out.copy_from_slice(self.cell(x, y))
        })
    }

    /// Bilinear lookup at an image pixel.
    pub fn sample_pixel(&self, pixel: &Vector2<T>) -> FeatureSample<T> {
        self.sample(&(pixel / self.stride))
    }
}

/// Per-view feature lookups at image pixels. Implemented by dense grid sets
/// and by lazily evaluated feature generators.
pub trait FeatureSource<T: Scalar> {
    fn num_views(&self) -> usize;
    fn channels(&self) -> usize;
    fn sample_view(&self, view: usize, pixel: &Vector2<T>) -> FeatureSample<T>;
}

impl<T: Scalar> FeatureSource<T> for [FeatureGrid<T>] {
    fn num_views(&self) -> usize {
        self.len()
    }

    fn channels(&self) -> usize {
        self.first().map_or(0, |g| g.channels)
    }

    fn sample_view(&self, view: usize, pixel: &Vector2<T>) -> FeatureSample<T> {
        self[view].sample_pixel(pixel)
    }
}

impl<T: Scalar> FeatureSource<T> for Vec<FeatureGrid<T>> {
    fn num_views(&self) -> usize {
        self.len()
    }

    fn channels(&self) -> usize {
        self.as_slice().channels()
    }

    fn sample_view(&self, view: usize, pixel: &Vector2<T>) -> FeatureSample<T> {
        self[view].sample_pixel(pixel)
    }
}

/// Bilinear interpolation over the four cells surrounding `point` on a
/// `width x height` lattice, reading cells through `fetch`. Points outside
/// `[0, width-1] x [0, height-1]` give zeros with `in_view = false`.
pub fn bilinear_sample<T, F>(
    width: usize,
    height: usize,
    channels: usize,
    point: &Vector2<T>,
    mut fetch: F,
) -> FeatureSample<T>
where
    T: Scalar,
    F: FnMut(usize, usize, &mut [T]),
{
    let zero = FeatureSample {
        values: vec![T::zero(); channels],
        in_view: false,
    };
    if width == 0 || height == 0 || !point.x.is_finite() || !point.y.is_finite() {
        return zero;
    }
    let max_x = T::lit((width - 1) as f64);
    let max_y = T::lit((height - 1) as f64);
    if point.x < T::zero() || point.y < T::zero() || point.x > max_x || point.y > max_y {
        return zero;
    }
    let fx0 = point.x.floor();
    let fy0 = point.y.floor();
    let x0 = fx0.as_f64() as usize;
    let y0 = fy0.as_f64() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let ax = point.x - fx0;
    let ay = point.y - fy0;
    let one = T::one();
    let weights = [
        (x0, y0, (one - ax) * (one - ay)),
        (x1, y0, ax * (one - ay)),
        (x0, y1, (one - ax) * ay),
        (x1, y1, ax * ay),
    ];
    let mut values = vec![T::zero(); channels];
    let mut buf = vec![T::zero(); channels];
    for (x, y, w) in weights {
        if w == T::zero() {
            continue;
        }
        fetch(x, y, &mut buf);
        for (acc, v) in values.iter_mut().zip(&buf) {
            *acc += w * *v;
        }
    }
    FeatureSample {
        values,
        in_view: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FeatureGrid<f64> {
        let (w, h, c) = (4, 3, 2);
        let mut values = Vec::new();
        for y in 0..h {
            for x in 0..w {
                values.push((x + 10 * y) as f64);
                values.push(-(x as f64) * 0.5);
            }
        }
        FeatureGrid::from_values(w, h, c, 1.0, values).unwrap()
    }

    #[test]
    fn node_query_returns_stored_vector() {
        let g = ramp();
        let s = g.sample(&Vector2::new(2.0, 1.0));
        assert!(s.in_view);
        assert_eq!(s.values, g.cell(2, 1).to_vec());
        let corner = g.sample(&Vector2::new(3.0, 2.0));
        assert_eq!(corner.values, g.cell(3, 2).to_vec());
    }

    #[test]
    fn midpoint_is_average() {
        let g = ramp();
        let s = g.sample(&Vector2::new(1.5, 2.0));
        let v1 = g.cell(1, 2);
        let v2 = g.cell(2, 2);
        let expect: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(s.values, expect);
    }

    #[test]
    fn outside_returns_zero_and_flag() {
        let g = ramp();
        let s = g.sample(&Vector2::new(-5.0, -5.0));
        assert!(!s.in_view);
        assert_eq!(s.values, vec![0.0, 0.0]);
        assert!(!g.sample(&Vector2::new(3.01, 0.0)).in_view);
    }

    #[test]
    fn pixel_lookup_uses_stride() {
        let mut g = FeatureGrid::<f64>::zeros(3, 3, 1, 4.0);
        g.cell_mut(1, 1)[0] = 2.0;
        let s = g.sample_pixel(&Vector2::new(4.0, 4.0));
        assert_eq!(s.values, vec![2.0]);
        let s = g.sample_pixel(&Vector2::new(6.0, 4.0));
        assert_eq!(s.values, vec![1.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(FeatureGrid::<f64>::from_values(2, 2, 1, 1.0, vec![0.0; 3]).is_err());
        assert!(FeatureGrid::<f64>::from_values(1, 1, 1, 1.0, vec![f64::NAN]).is_err());
    }
}

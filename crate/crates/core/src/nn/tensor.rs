use crate::Scalar;

/// Row-major 2-D array. Rows are vertices, messages or edges depending on
/// where it sits in a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Vec<T> {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates columns of tensors with equal row counts.
    pub fn hcat(parts: &[&Tensor<T>]) -> Self {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                assert_eq!(p.rows, rows, "hcat row mismatch");
                out.row_mut(r)[offset..offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        out
    }

    /// `self * w + bias` where `w` is `cols x out`.
    pub fn affine(&self, w: &Tensor<T>, bias: &[T]) -> Tensor<T> {
        assert_eq!(self.cols, w.rows, "affine shape mismatch");
        assert_eq!(bias.len(), w.cols, "bias length mismatch");
        let mut out = Tensor::zeros(self.rows, w.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[r * w.cols..(r + 1) * w.cols];
            dst.copy_from_slice(bias);
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (d, &wv) in dst.iter_mut().zip(w.row(k)) {
                    *d += a * wv;
                }
            }
        }
        out
    }

    /// `self^T * other`, accumulated into `acc` (`self.cols x other.cols`).
    pub fn tmul_acc(&self, other: &Tensor<T>, acc: &mut [T]) {
        assert_eq!(self.rows, other.rows, "tmul shape mismatch");
        assert_eq!(acc.len(), self.cols * other.cols);
        for r in 0..self.rows {
            let g = other.row(r);
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let dst = &mut acc[k * other.cols..(k + 1) * other.cols];
                for (d, &gv) in dst.iter_mut().zip(g) {
                    *d += a * gv;
                }
            }
        }
    }

    /// `self * w^T` where `w` is `out x cols`.
    pub fn mul_t(&self, w: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.cols, w.cols, "mul_t shape mismatch");
        let mut out = Tensor::zeros(self.rows, w.rows);
        for r in 0..self.rows {
            let g = self.row(r);
            for k in 0..w.rows {
                let mut s = T::zero();
                for (&a, &b) in g.iter().zip(w.row(k)) {
                    s += a * b;
                }
                out.data[r * w.rows + k] = s;
            }
        }
        out
    }
}

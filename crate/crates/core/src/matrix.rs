use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Batches are stored batch-major: one observation per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Matrix2D::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    context: "Matrix2D::from_rows",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · otherᵀ`, i.e. applies a weight matrix stored as
    /// `out × in` to a batch stored as `batch × in`.
    pub fn matmul_transposed(&self, other: &Matrix2D) -> Result<Matrix2D> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                context: "matmul_transposed",
                expected: other.cols,
                got: self.cols,
            });
        }
        let mut out = Matrix2D::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let lhs = self.row(r);
            let dst = out.row_mut(r);
            for (o, slot) in dst.iter_mut().enumerate() {
                *slot = dot(lhs, other.row(o));
            }
        }
        Ok(out)
    }

    pub(crate) fn ensure_shape(&self, context: &'static str, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows {
            return Err(Error::Dimension {
                context,
                expected: rows,
                got: self.rows,
            });
        }
        if self.cols != cols {
            return Err(Error::Dimension {
                context,
                expected: cols,
                got: self.cols,
            });
        }
        Ok(())
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Matrix2D::from_vec(2, 3, vec![0.0; 5]).is_err());
        let m = Matrix2D::from_vec(2, 3, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(m.get(1, 2), 5.0);
        assert_eq!(m.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix2D::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_transposed_small() {
        let x = Matrix2D::from_rows(&[vec![1.0, 2.0, 5.0]]).unwrap();
        let w = Matrix2D::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, -1.0, 2.0]]).unwrap();
        let z = x.matmul_transposed(&w).unwrap();
        assert_eq!(z.shape(), (1, 2));
        assert_eq!(z.data(), &[3.0, 8.0]);
        assert!(w.matmul_transposed(&x).is_ok());
        assert!(x.matmul_transposed(&Matrix2D::zeros(1, 2)).is_err());
    }
}

use crate::{Result, TensorError};

/// A dense row-major matrix of f64 values.
///
/// Shape is `[rows, cols]`; vectors are represented as `[n, 1]` or `[1, n]`
/// matrices. Tensors are plain values: once detached from a graph they are
/// immutable in practice and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::InvalidShape {
                op: "Tensor::new",
                shape: vec![rows, cols],
                reason: format!("{} values for {}x{} matrix", data.len(), rows, cols),
            });
        }
        Ok(Tensor {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: [rows, cols],
            data: vec![0.0; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: [1, 1],
            data: vec![value],
        }
    }

    /// Column vector `[n, 1]`.
    pub fn col(values: &[f64]) -> Self {
        Tensor {
            shape: [values.len(), 1],
            data: values.to_vec(),
        }
    }

    /// Row vector `[1, n]`.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: [1, values.len()],
            data: values.to_vec(),
        }
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::InvalidShape {
                    op: "Tensor::from_rows",
                    shape: vec![r, c],
                    reason: "ragged rows".into(),
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.shape[0], self.shape[1])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Round every value to the nearest f32. Values survive an f32 store
    /// and re-load bit-exactly afterwards.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn eye_and_accessors() {
        let t = Tensor::eye(3);
        assert_eq!(t.shape(), (3, 3));
        assert_eq!(t.at(1, 1), 1.0);
        assert_eq!(t.at(1, 2), 0.0);
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::row(&[0.1, -1.0 / 3.0, 2.0e-11]);
        t.quantize_f32();
        let once = t.clone();
        t.quantize_f32();
        assert_eq!(t, once);
    }
}

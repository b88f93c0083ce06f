//! Dense trainable tensors with per-coordinate Adagrad state.

use std::io::{Read, Write};

use crate::embeddings::ADAGRAD_EPS;
use crate::error::{Error, Result};

/// Row-major matrix (a vector is `cols == 1`). Values and optimizer state
/// are f64 in memory and f32 in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParam {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    accum: Vec<f64>,
}

impl DenseParam {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseParam { rows, cols, values: vec![0.0; rows * cols], accum: vec![0.0; rows * cols] }
    }

    /// Uniform in +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Self {
        use rand::RngExt;
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        DenseParam {
            rows,
            cols,
            values: (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect(),
            accum: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// y = W x, where x has `cols` entries and y has `rows`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let row = &self.values[i * self.cols..(i + 1) * self.cols];
            *yi = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
        }
    }

    /// x_grad += W^T dy.
    pub fn add_matvec_transpose(&self, dy: &[f64], x_grad: &mut [f64]) {
        debug_assert_eq!(dy.len(), self.rows);
        debug_assert_eq!(x_grad.len(), self.cols);
        for (i, &dyi) in dy.iter().enumerate() {
            let row = &self.values[i * self.cols..(i + 1) * self.cols];
            for (g, w) in x_grad.iter_mut().zip(row) {
                *g += w * dyi;
            }
        }
    }

    /// Adagrad over a dense gradient of identical layout. Rejects non-finite
    /// gradients by flat index, mirroring the sparse tables.
    pub fn apply_grad(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::config("dense gradient shape mismatch"));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { slot: i });
        }
        for (i, &g) in grad.iter().enumerate() {
            self.accum[i] += g * g;
            self.values[i] -= lr * g / (self.accum[i] + ADAGRAD_EPS).sqrt();
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        for &v in &self.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for &a in &self.accum {
            w.write_all(&(a as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let cols = u64::from_le_bytes(b8) as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n <= (1 << 32))
            .ok_or_else(|| Error::Checkpoint("dense parameter shape overflow".into()))?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b4 = [0u8; 4];
            for _ in 0..n {
                r.read_exact(&mut b4)?;
                out.push(f32::from_le_bytes(b4) as f64);
            }
            Ok(out)
        };
        let values = read_vec(n)?;
        let accum = read_vec(n)?;
        Ok(DenseParam { rows, cols, values, accum })
    }
}

/// outer[i][j] += dy[i] * x[j], flattened row-major into `grad`.
pub fn add_outer(grad: &mut [f64], dy: &[f64], x: &[f64]) {
    debug_assert_eq!(grad.len(), dy.len() * x.len());
    for (i, &dyi) in dy.iter().enumerate() {
        let row = &mut grad[i * x.len()..(i + 1) * x.len()];
        for (g, &xj) in row.iter_mut().zip(x) {
            *g += dyi * xj;
        }
    }
}

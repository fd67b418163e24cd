//! Dense brute-force references for verification at test scale.
//!
//! Everything here materializes `n x n` matrices with `n = (|U| + |I|) f`, so
//! each builder refuses inputs above a size cap.

use nalgebra::{DMatrix, DVector};

use crate::data::HdiDataset;
use crate::error::{Error, Result};
use crate::model::{dot, gradient, loss, Entity, FactorState, Layout};

pub const DEFAULT_CAP: usize = 200;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] += v;
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        self.values
            .chunks_exact(self.cols.max(1))
            .map(|row| dot(row, v))
            .collect()
    }

    /// `self^T self`.
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.cols, self.cols);
        for row in self.values.chunks_exact(self.cols.max(1)) {
            for (a, &ra) in row.iter().enumerate() {
                if ra == 0.0 {
                    continue;
                }
                for (b, &rb) in row.iter().enumerate() {
                    g.add(a, b, ra * rb);
                }
            }
        }
        g
    }

    pub fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &s) in self.values.chunks_exact(self.cols.max(1)).zip(v) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x * s;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Square sub-matrix starting at `(at, at)`.
    pub fn block(&self, at: usize, size: usize) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(size, size);
        for r in 0..size {
            for c in 0..size {
                out.set(r, c, self.get(at + r, at + c));
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && (0..self.rows).all(|r| (0..r).all(|c| self.get(r, c) == self.get(c, r)))
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    /// Smallest eigenvalue of a symmetric matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        self.to_nalgebra()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    /// Direct LU solve of `self x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let b = DVector::from_column_slice(rhs);
        self.to_nalgebra().lu().solve(&b).map(|x| x.iter().cloned().collect())
    }
}

/// Dense reference builders with a configurable size cap.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub cap: usize,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle { cap: DEFAULT_CAP }
    }
}

impl Oracle {
    fn check(&self, layout: Layout) -> Result<usize> {
        let n = layout.len();
        if n > self.cap {
            return Err(Error::OracleCapExceeded { size: n, cap: self.cap });
        }
        Ok(n)
    }

    /// Exact Hessian of the regularized loss, assembled entry by entry from the
    /// closed-form second derivatives.
    pub fn dense_hessian(&self, state: &FactorState, data: &HdiDataset, lambda: f64) -> Result<DenseMatrix> {
        let layout = state.layout();
        let n = self.check(layout)?;
        let f = layout.f;
        let mut h = DenseMatrix::zeros(n, n);
        for t in data.entries() {
            let pu = layout.range(Entity::User(t.user)).start;
            let qi = layout.range(Entity::Item(t.item)).start;
            let (p, q) = (state.user(t.user), state.item(t.item));
            let pred = dot(p, q);
            for a in 0..f {
                // user-user block: q_a q_b, plus λ on the diagonal
                for b in 0..f {
                    h.add(pu + a, pu + b, q[a] * q[b]);
                    h.add(qi + a, qi + b, p[a] * p[b]);
                }
                h.add(pu + a, pu + a, lambda);
                h.add(qi + a, qi + a, lambda);
                // user-item coupling
                for b in 0..f {
                    let v = if a == b {
                        p[a] * q[a] - t.rating + pred
                    } else {
                        p[b] * q[a]
                    };
                    h.add(pu + a, qi + b, v);
                    h.add(qi + b, pu + a, v);
                }
            }
        }
        Ok(h)
    }

    /// Jacobian of the predictions: one row per observation.
    pub fn dense_jacobian(&self, state: &FactorState, data: &HdiDataset) -> Result<DenseMatrix> {
        let layout = state.layout();
        let n = self.check(layout)?;
        let mut j = DenseMatrix::zeros(data.len(), n);
        for (row, t) in data.entries().iter().enumerate() {
            let pu = layout.range(Entity::User(t.user)).start;
            let qi = layout.range(Entity::Item(t.item)).start;
            for d in 0..layout.f {
                j.set(row, pu + d, state.item(t.item)[d]);
                j.set(row, qi + d, state.user(t.user)[d]);
            }
        }
        Ok(j)
    }

    /// `J^T J`.
    pub fn dense_gauss_newton(&self, state: &FactorState, data: &HdiDataset) -> Result<DenseMatrix> {
        Ok(self.dense_jacobian(state, data)?.gram())
    }

    /// The Gauss-Newton matrix with everything outside the per-entity diagonal
    /// blocks zeroed, plus `(γ + λ|R_e|) I` on each block.
    pub fn block_diagonal_gauss_newton(
        &self,
        state: &FactorState,
        data: &HdiDataset,
        lambda: f64,
        gamma: f64,
    ) -> Result<DenseMatrix> {
        let layout = state.layout();
        let gn = self.dense_gauss_newton(state, data)?;
        let mut out = DenseMatrix::zeros(gn.rows(), gn.cols());
        let f = layout.f;
        for k in 0..layout.num_entities() {
            let degree = match layout.entity(k) {
                Entity::User(u) => data.by_user().degree(u),
                Entity::Item(i) => data.by_item().degree(i),
            };
            let shift = gamma + lambda * degree as f64;
            for a in 0..f {
                for b in 0..f {
                    out.set(k * f + a, k * f + b, gn.get(k * f + a, k * f + b));
                }
                out.add(k * f + a, k * f + a, shift);
            }
        }
        Ok(out)
    }

    /// Frobenius norms of the per-entity diagonal blocks of the exact Hessian
    /// and of everything else.
    pub fn hessian_offdiag_mass(&self, state: &FactorState, data: &HdiDataset, lambda: f64) -> Result<(f64, f64)> {
        let h = self.dense_hessian(state, data, lambda)?;
        let f = state.f();
        let (mut diag, mut off) = (0.0, 0.0);
        for r in 0..h.rows() {
            for c in 0..h.cols() {
                let v = h.get(r, c);
                if r / f == c / f {
                    diag += v * v;
                } else {
                    off += v * v;
                }
            }
        }
        Ok((diag.sqrt(), off.sqrt()))
    }
}

/// Central-difference gradient of the loss.
pub fn fd_gradient(state: &FactorState, data: &HdiDataset, lambda: f64, step: f64) -> Vec<f64> {
    let mut probe = state.clone();
    (0..state.values().len())
        .map(|k| {
            let x = state.values()[k];
            probe.values_mut()[k] = x + step;
            let up = loss(&probe, data, lambda);
            probe.values_mut()[k] = x - step;
            let down = loss(&probe, data, lambda);
            probe.values_mut()[k] = x;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Hessian by central differences of the analytic gradient, column by column.
pub fn fd_hessian(state: &FactorState, data: &HdiDataset, lambda: f64, step: f64) -> DenseMatrix {
    let n = state.values().len();
    let mut h = DenseMatrix::zeros(n, n);
    let mut probe = state.clone();
    for c in 0..n {
        let x = state.values()[c];
        probe.values_mut()[c] = x + step;
        let up = gradient(&probe, data, lambda);
        probe.values_mut()[c] = x - step;
        let down = gradient(&probe, data, lambda);
        probe.values_mut()[c] = x;
        for r in 0..n {
            h.set(r, c, (up.values()[r] - down.values()[r]) / (2.0 * step));
        }
    }
    h
}

/// Per-component relative error `|a - b| / max(|a|, |b|, 1)`, maximized.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn max_abs_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

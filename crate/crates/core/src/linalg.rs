//! Dense matrix products with row-parallel dispatch.
//!
//! The kernel accumulates in a fixed k-then-j order and each output row is
//! owned by a single task, so `matmul` and `matmul_seq` agree bitwise for
//! any thread count.

use ndarray::{Array2, ArrayView2};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

fn row_kernel(a_row: &[f64], b: &[f64], m: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (kk, &aik) in a_row.iter().enumerate() {
        let b_row = &b[kk * m..(kk + 1) * m];
        for (o, &bv) in out.iter_mut().zip(b_row.iter()) {
            *o += aik * bv;
        }
    }
}

/// `a (n x k)` times `b (k x m)`, sequential reference path.
pub fn matmul_seq(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2, "matmul shape mismatch: ({n} x {k}) * ({k2} x {m})");
    let a_std = a.as_standard_layout();
    let b_std = b.as_standard_layout();
    let a_s = a_std.as_slice().expect("standard layout");
    let b_s = b_std.as_slice().expect("standard layout");
    let mut out = vec![0.0; n * m];
    for (i, o_row) in out.chunks_mut(m.max(1)).enumerate().take(n) {
        row_kernel(&a_s[i * k..(i + 1) * k], b_s, m, o_row);
    }
    Array2::from_shape_vec((n, m), out).expect("shape")
}

/// `a (n x k)` times `b (k x m)` on the active backend, rows in parallel.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    #[cfg(feature = "parallel")]
    {
        let (n, k) = a.dim();
        let (k2, m) = b.dim();
        assert_eq!(k, k2, "matmul shape mismatch: ({n} x {k}) * ({k2} x {m})");
        if m == 0 || n == 0 {
            return Array2::zeros((n, m));
        }
        let a_std = a.as_standard_layout();
        let b_std = b.as_standard_layout();
        let a_s = a_std.as_slice().expect("standard layout");
        let b_s = b_std.as_slice().expect("standard layout");
        let mut out = vec![0.0; n * m];
        out.par_chunks_mut(m)
            .enumerate()
            .for_each(|(i, o_row)| row_kernel(&a_s[i * k..(i + 1) * k], b_s, m, o_row));
        Array2::from_shape_vec((n, m), out).expect("shape")
    }
    #[cfg(not(feature = "parallel"))]
    {
        matmul_seq(a, b)
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix,
/// tracking pivot extremes for a cheap condition estimate.
pub struct Cholesky {
    l: Array2<f64>,
    min_pivot: f64,
    max_pivot: f64,
}

impl Cholesky {
    /// Factor `a = L Lᵀ`. Fails when a pivot is non-positive or falls below
    /// `1e-12` times the largest pivot seen, i.e. the matrix is singular
    /// (or indefinite) to working precision; the error carries the pivot
    /// ratio condition estimate at the point of failure (infinite for a
    /// non-positive pivot).
    pub fn factor(a: &Array2<f64>) -> Result<Cholesky, f64> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "Cholesky needs a square matrix");
        let mut l = Array2::<f64>::zeros((n, n));
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(f64::INFINITY);
                    }
                    let p = sum.sqrt();
                    min_pivot = min_pivot.min(p);
                    max_pivot = max_pivot.max(p);
                    if min_pivot < 1e-12 * max_pivot {
                        return Err((max_pivot / min_pivot).powi(2));
                    }
                    l[(i, j)] = p;
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(Cholesky {
            l,
            min_pivot,
            max_pivot,
        })
    }

    /// Solve `a x = b` using the stored factor.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for (k, &yk) in y.iter().enumerate().take(i) {
                sum -= self.l[(i, k)] * yk;
            }
            y[i] = sum / self.l[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for (k, &xk) in x.iter().enumerate().skip(i + 1) {
                sum -= self.l[(k, i)] * xk;
            }
            x[i] = sum / self.l[(i, i)];
        }
        x
    }

    /// Squared pivot ratio `(max/min)²`, a cheap proxy for the 2-norm
    /// condition number.
    pub fn condition_estimate(&self) -> f64 {
        (self.max_pivot / self.min_pivot).powi(2)
    }

    /// Diagonal of `a⁻¹`, one triangular solve per basis vector.
    pub fn inverse_diagonal(&self) -> Vec<f64> {
        let n = self.l.nrows();
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.solve(&e)[i]
            })
            .collect()
    }
}

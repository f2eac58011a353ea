use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Thin singular value decomposition `M = left * diag(values) * right_t`
/// with `p = min(rows, cols)` retained triplets.
///
/// Columns of `left` are the left singular vectors, rows of `right_t` the
/// right singular vectors, `values` is non-increasing. Sign convention: the
/// first nonzero entry of each left singular vector is non-negative, with the
/// paired right vector flipped to compensate.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left: Matrix,
    pub values: Vec<f64>,
    pub right_t: Matrix,
}

impl SvdResult {
    /// Number of retained singular triplets.
    pub fn rank_bound(&self) -> usize {
        self.values.len()
    }

    /// The i-th left singular vector.
    pub fn left_vector(&self, i: usize) -> Vec<f64> {
        self.left.column(i)
    }

    /// Reconstructs `left * diag(values) * right_t`.
    pub fn reconstruct(&self) -> Matrix {
        let p = self.values.len();
        let m = self.left.rows();
        let n = self.right_t.cols();
        let mut out = Matrix::zeros(m, n);
        for t in 0..p {
            let sigma = self.values[t];
            if sigma == 0.0 {
                continue;
            }
            for i in 0..m {
                let coeff = sigma * self.left.get(i, t);
                for j in 0..n {
                    out.set(i, j, out.get(i, j) + coeff * self.right_t.get(t, j));
                }
            }
        }
        out
    }
}

/// Exact dense SVD of `m`, values sorted non-increasing, deterministic signs.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let decomp = a.svd(true, true);
    let u = decomp.u.expect("u requested");
    let v_t = decomp.v_t.expect("v_t requested");
    let p = decomp.singular_values.len();

    let mut left = Matrix::from_fn(m.rows(), p, |i, j| u[(i, j)]);
    let mut right_t = Matrix::from_fn(p, m.cols(), |i, j| v_t[(i, j)]);
    let values: Vec<f64> = decomp.singular_values.iter().copied().collect();

    // Canonical signs: first nonzero entry of each left vector non-negative.
    for j in 0..p {
        let flip = (0..left.rows())
            .map(|i| left.get(i, j))
            .find(|&x| x != 0.0)
            .is_some_and(|x| x < 0.0);
        if flip {
            for i in 0..left.rows() {
                left.set(i, j, -left.get(i, j));
            }
            for c in 0..right_t.cols() {
                right_t.set(j, c, -right_t.get(j, c));
            }
        }
    }

    Ok(SvdResult {
        left,
        values,
        right_t,
    })
}

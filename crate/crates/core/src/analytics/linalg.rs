//! Small dense linear algebra for the ANOVA/MANOVA code: least squares by
//! Householder QR, Cholesky, and symmetric eigenvalues by Jacobi rotation.

use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged matrix");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Result of projecting `y` onto the column space of a design matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquares<T> {
    pub rss: T,
    pub rank: usize,
}

/// Residual sum of squares of `y` regressed on the columns of `x`.
///
/// Columns are orthogonalised in order with Householder reflections; a
/// column whose remaining norm is negligible relative to its original
/// norm is treated as aliased and skipped, so the rank is reported
/// rather than failing.
pub fn least_squares<T: Scalar>(x: &Matrix<T>, y: &[T]) -> LeastSquares<T> {
    let n = x.rows();
    assert_eq!(n, y.len());
    let mut a = x.clone();
    let mut qty = y.to_vec();
    let mut rank = 0;
    let tol = T::epsilon() * T::from_count(n.max(x.cols()).max(1)) * T::lit(64.0);

    for j in 0..x.cols() {
        if rank >= n {
            break;
        }
        let orig_norm = (0..n).map(|i| x[(i, j)] * x[(i, j)]).sum::<T>().sqrt();
        let norm = (rank..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<T>().sqrt();
        if orig_norm == T::zero() || norm <= tol * orig_norm {
            continue;
        }
        // Householder vector v so that (I - 2vv'/v'v) maps a[rank.., j] to -sign*norm e1.
        let alpha = if a[(rank, j)] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (rank..n).map(|i| a[(i, j)]).collect();
        v[0] = v[0] - alpha;
        let vtv: T = v.iter().map(|&e| e * e).sum();
        if vtv == T::zero() {
            rank += 1;
            continue;
        }
        let two = T::lit(2.0);
        for k in j..x.cols() {
            let dot: T = v.iter().enumerate().map(|(t, &vi)| vi * a[(rank + t, k)]).sum();
            let s = two * dot / vtv;
            for (t, &vi) in v.iter().enumerate() {
                a[(rank + t, k)] = a[(rank + t, k)] - s * vi;
            }
        }
        let dot: T = v.iter().enumerate().map(|(t, &vi)| vi * qty[rank + t]).sum();
        let s = two * dot / vtv;
        for (t, &vi) in v.iter().enumerate() {
            qty[rank + t] = qty[rank + t] - s * vi;
        }
        rank += 1;
    }
    let rss = qty[rank..].iter().map(|&e| e * e).sum();
    LeastSquares { rss, rank }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// or `None` if a pivot is not safely positive.
pub fn cholesky<T: Scalar>(a: &Matrix<T>) -> Option<Matrix<T>> {
    let n = a.rows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(T::zero(), T::max);
    if scale == T::zero() {
        return None;
    }
    let tol = scale * T::epsilon() * T::from_count(n) * T::lit(16.0);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - l[(j, k)] * l[(j, k)];
        }
        if d.is_nan() || d <= tol {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L X = B` for lower-triangular `L`.
fn forward_substitute<T: Scalar>(l: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let n = l.rows();
    let mut x = Matrix::zeros(n, b.cols());
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s = s - l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

fn transpose<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut t = Matrix::zeros(m.cols(), m.rows());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            t[(j, i)] = m[(i, j)];
        }
    }
    t
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn symmetric_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Vec<T> {
    let n = a.rows();
    let mut m = a.clone();
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let off: T = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: T = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= T::epsilon() * T::epsilon() * diag || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    eig
}

/// Eigenvalues of `E⁻¹H` for symmetric `H` and positive definite `E`,
/// computed as the eigenvalues of the symmetric `L⁻¹ H L⁻ᵀ` where `E = LLᵀ`.
/// Returns `None` when `E` is not positive definite.
pub fn generalized_eigenvalues<T: Scalar>(h: &Matrix<T>, e: &Matrix<T>) -> Option<Vec<T>> {
    let l = cholesky(e)?;
    let y = forward_substitute(&l, h); // L⁻¹ H
    let m = forward_substitute(&l, &transpose(&y)); // L⁻¹ (L⁻¹ H)ᵀ = L⁻¹ H L⁻ᵀ
                                                    // symmetrise against rounding
    let mut sym = m.clone();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            sym[(i, j)] = (m[(i, j)] + m[(j, i)]) / T::lit(2.0);
        }
    }
    Some(symmetric_eigenvalues(&sym))
}

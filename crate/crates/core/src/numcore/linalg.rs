//! LU factorization, inversion, and the continuous Lyapunov solver.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Pivots smaller than this abort the factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// LU factorization with partial pivoting, `P·A = L·U` packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    packed: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "LU factorization (square)",
                expected: a.rows(),
                actual: a.cols(),
            });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pmax < PIVOT_TOLERANCE {
                return Err(Error::Singular {
                    pivot: pmax,
                    column: k,
                });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= factor * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Lu { packed: lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let lu = &self.packed;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s / lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve_vec(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

pub fn mat_inverse(m: &Matrix) -> Result<Matrix> {
    Ok(Lu::factor(m)?.inverse())
}

pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    Ok(Lu::factor(a)?.solve_vec(b))
}

/// Solves `A·P + P·Aᵀ + Q = 0` through the Kronecker-vectorized linear system.
///
/// Intended for the small observer dimensions used here; cost is O(n⁶).
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "Lyapunov A (square)",
            expected: n,
            actual: a.cols(),
        });
    }
    if q.rows() != n || q.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "Lyapunov Q",
            expected: n,
            actual: q.rows().max(q.cols()),
        });
    }
    // vec(P) row-major: P_ij -> i*n + j
    let n2 = n * n;
    let mut k = Matrix::zeros(n2, n2);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for l in 0..n {
                k[(row, l * n + j)] += a[(i, l)];
                k[(row, i * n + l)] += a[(j, l)];
            }
        }
    }
    let rhs: Vec<f64> = q.as_slice().iter().map(|v| -v).collect();
    let lu = Lu::factor(&k).map_err(|e| match e {
        Error::Singular { .. } => Error::NotHurwitz(
            "Kronecker Lyapunov operator is singular (eigenvalue pair summing to zero)".into(),
        ),
        other => other,
    })?;
    let p = Matrix::from_vec(n, n, lu.solve_vec(&rhs))?;
    Ok(p.add(&p.transpose()).scale(0.5))
}

/// Hurwitz test for small matrices.
///
/// Accepts immediately when every Gershgorin disc lies in the open left half
/// plane; otherwise falls back to the Routh-Hurwitz criterion on the
/// characteristic polynomial (Faddeev-LeVerrier).
pub fn is_hurwitz(a: &Matrix) -> bool {
    if !a.is_square() || a.rows() == 0 {
        return false;
    }
    let n = a.rows();
    let gershgorin = (0..n).all(|i| {
        let radius: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        a[(i, i)] + radius < 0.0
    });
    if gershgorin {
        return true;
    }
    routh_hurwitz(&characteristic_polynomial(a))
}

/// Monic characteristic polynomial coefficients `[1, c1, …, cn]` of `det(λI − A)`.
pub fn characteristic_polynomial(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut coeffs = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    let ident = Matrix::identity(n);
    for k in 1..=n {
        // M_k = A·M_{k−1} + c_{k−1}·I ; c_k = −tr(A·M_k)/k
        m = a.matmul(&m).add(&ident.scale(coeffs[k - 1]));
        let c = -a.matmul(&m).trace() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

/// True when every root of the polynomial (highest degree first) has negative real part.
fn routh_hurwitz(coeffs: &[f64]) -> bool {
    let n = coeffs.len() - 1;
    if n == 0 {
        return true;
    }
    let lead = coeffs[0];
    if coeffs.iter().any(|c| c * lead <= 0.0) {
        return false;
    }
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width)
        .map(|i| *coeffs.get(2 * i).unwrap_or(&0.0))
        .collect();
    let mut cur: Vec<f64> = (0..width)
        .map(|i| *coeffs.get(2 * i + 1).unwrap_or(&0.0))
        .collect();
    for _ in 1..n {
        if cur[0] * lead <= 0.0 {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|i| {
                let a = prev.get(i + 1).copied().unwrap_or(0.0);
                let b = cur.get(i + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur[0] * lead > 0.0
}

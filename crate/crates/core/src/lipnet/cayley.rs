use crate::error::{Error, Result};
use crate::numcore::{mat_inverse, Matrix};

/// The coupled pair produced by the Cayley transform of `(X, Y)`.
///
/// `M` is `d×d`, `N` is `d×c`, and `M·Mᵀ + N·Nᵀ = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CayleyPair {
    pub m: Matrix,
    pub n: Matrix,
}

/// Cayley transform with the intermediates needed for the adjoint.
#[derive(Debug, Clone)]
pub(crate) struct CayleyCache {
    pub pair: CayleyPair,
    /// `Z = X − Xᵀ + YᵀY`
    pub z: Matrix,
    /// `(I + Z)⁻¹`
    pub g: Matrix,
}

pub fn cayley(x: &Matrix, y: &Matrix) -> Result<CayleyPair> {
    Ok(cayley_cached(x, y)?.pair)
}

pub(crate) fn cayley_cached(x: &Matrix, y: &Matrix) -> Result<CayleyCache> {
    let d = x.rows();
    if !x.is_square() {
        return Err(Error::DimensionMismatch {
            context: "Cayley X (square)",
            expected: d,
            actual: x.cols(),
        });
    }
    if y.cols() != d {
        return Err(Error::DimensionMismatch {
            context: "Cayley Y columns",
            expected: d,
            actual: y.cols(),
        });
    }
    let ident = Matrix::identity(d);
    let z = x.sub(&x.transpose()).add(&y.transpose().matmul(y));
    let g = mat_inverse(&ident.add(&z))?;
    let m = g.matmul(&ident.sub(&z)).transpose();
    let n = y.matmul(&g).scale(-2.0).transpose();
    Ok(CayleyCache {
        pair: CayleyPair { m, n },
        z,
        g,
    })
}

/// Pulls adjoints of `(M, N)` back to `(X, Y)`.
pub(crate) fn cayley_backward(
    cache: &CayleyCache,
    y: &Matrix,
    d_m: &Matrix,
    d_n: &Matrix,
) -> (Matrix, Matrix) {
    let d = cache.z.rows();
    let ident = Matrix::identity(d);
    let g = &cache.g;
    let gt = g.transpose();
    // M = Kᵀ with K = G(I − Z); N = −2Lᵀ with L = Y·G
    let d_k = d_m.transpose();
    let d_l = d_n.transpose().scale(-2.0);
    let d_g = d_k
        .matmul(&ident.sub(&cache.z).transpose())
        .add(&y.transpose().matmul(&d_l));
    let d_z = gt
        .matmul(&d_k)
        .add(&gt.matmul(&d_g).matmul(&gt))
        .scale(-1.0);
    let d_zt = d_z.transpose();
    let d_x = d_z.sub(&d_zt);
    let d_y = d_l.matmul(&gt).add(&y.matmul(&d_z.add(&d_zt)));
    (d_x, d_y)
}

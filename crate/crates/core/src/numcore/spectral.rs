use super::matrix::{norm2, Matrix};
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 10_000;
const RESIDUAL_TOL: f64 = 1e-9;
const STALL_TOL: f64 = 1e-15;

/// Largest singular value via power iteration on `mᵀm`.
///
/// Starts from the normalized all-ones vector. When the iterate collapses to
/// zero (start vector in the null space of `mᵀm`) the run restarts from a
/// fixed, sign-alternating perturbation and then from unit vectors.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("spectral_norm of an empty matrix"));
    }
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let n = m.cols();
    let mut starts: Vec<Vec<f64>> = vec![vec![1.0; n]];
    starts.push(
        (0..n)
            .map(|i| 1.0 + if i % 2 == 0 { 0.5 } else { -0.5 } / (i + 1) as f64)
            .collect(),
    );
    starts.extend((0..n).map(|k| {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        e
    }));

    for start in starts {
        match power_iterate(m, start)? {
            Some(lambda) => return Ok(lambda.max(0.0).sqrt()),
            None => continue,
        }
    }
    Ok(0.0)
}

/// Returns the dominant eigenvalue of `mᵀm`, or `None` if the iterate vanished.
fn power_iterate(m: &Matrix, start: Vec<f64>) -> Result<Option<f64>> {
    let apply = |v: &[f64]| m.matvec_t(&m.matvec(v));
    let mut v = start;
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut lambda_prev = f64::NAN;
    for _ in 0..MAX_ITERATIONS {
        let w = apply(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok(None);
        }
        // Rayleigh quotient with unit v
        let lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let resid = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (b - lambda * a).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= RESIDUAL_TOL * lambda.abs()
            || (lambda - lambda_prev).abs() <= STALL_TOL * lambda.abs()
        {
            return Ok(Some(lambda));
        }
        lambda_prev = lambda;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;

    /// Cyclic Jacobi eigenvalues of a symmetric matrix; test oracle only.
    fn jacobi_eigenvalues(s: &Matrix) -> Vec<f64> {
        let n = s.rows();
        let mut a = s.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - sn * akq;
                        a[(k, q)] = sn * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - sn * aqk;
                        a[(q, k)] = sn * apk + c * aqk;
                    }
                }
            }
        }
        a.diagonal()
    }

    #[test]
    fn diagonal_and_zero() {
        assert!((spectral_norm(&Matrix::diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
        assert!(spectral_norm(&Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn start_vector_in_null_space() {
        // mᵀm·1 = 0, top singular vector is (1, -1)/√2 with σ = 2
        let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]).unwrap();
        assert!((spectral_norm(&m).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_matrix_has_unit_norm() {
        let (c, s) = (0.3_f64.cos(), 0.3_f64.sin());
        let q = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        assert!((spectral_norm(&q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_jacobi_oracle() {
        let mut rng = RngState::new(3);
        for _ in 0..20 {
            let m = Matrix::from_fn(6, 4, |_, _| rng.uniform(-1.0, 1.0));
            let ata = m.transpose().matmul(&m);
            let top = jacobi_eigenvalues(&ata)
                .into_iter()
                .fold(f64::MIN, f64::max);
            let got = spectral_norm(&m).unwrap();
            assert!(
                (got * got - top).abs() <= 1e-8 * top.max(1.0),
                "power {} vs jacobi {}",
                got * got,
                top
            );
        }
    }

    #[test]
    fn transpose_invariance() {
        let mut rng = RngState::new(9);
        for _ in 0..20 {
            let m = Matrix::from_fn(5, 3, |_, _| rng.uniform(-2.0, 2.0));
            let a = spectral_norm(&m).unwrap();
            let b = spectral_norm(&m.transpose()).unwrap();
            assert!((a - b).abs() <= 1e-9 * a);
        }
    }
}

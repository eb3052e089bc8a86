//! Small dense routines for the q x q matrices that appear in the model.
//! Sizes are bounded by the random-effect dimension, so plain loops suffice.

use ndarray::{Array1, Array2};

use crate::real::Real;

/// Lower Cholesky factor of a symmetric positive definite matrix, or `None`
/// when a pivot is not strictly positive.
pub fn cholesky<F: Real>(a: &Array2<F>) -> Option<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<F>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d = d - l[[j, k]] * l[[j, k]];
        }
        if !(d > F::zero()) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s = s - l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_solve<F: Real>(l: &Array2<F>, b: &[F]) -> Vec<F> {
    let n = l.nrows();
    let mut x = vec![F::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues<F: Real>(a: &Array2<F>) -> Array1<F> {
    let n = a.nrows();
    let mut m = a.clone();
    let tol = F::epsilon() * F::lit(4.0);
    for _sweep in 0..100 {
        let mut off = F::zero();
        let mut diag = F::zero();
        for i in 0..n {
            diag = diag + m[[i, i]] * m[[i, i]];
            for j in (i + 1)..n {
                off = off + m[[i, j]] * m[[i, j]];
            }
        }
        if off <= tol * tol * (diag + F::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == F::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (F::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<F> = (0..n).map(|i| m[[i, i]]).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Array1::from(ev)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix.
pub fn max_eigenvalue<F: Real>(a: &Array2<F>) -> F {
    match a.nrows() {
        0 => F::zero(),
        1 => a[[0, 0]],
        _ => symmetric_eigenvalues(a).iter().copied().fold(F::neg_infinity(), F::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a: Array2<f64> = array![[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(cholesky(&a).is_none());
    }

    #[test]
    fn forward_solve_inverts_lower() {
        let l: Array2<f64> = array![[2.0, 0.0], [1.0, 3.0]];
        let x = forward_solve(&l, &[4.0, 11.0]);
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // eigenvalues 1 and 3
        let a: Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
        assert!((max_eigenvalue(&a) - 3.0).abs() < 1e-12);
    }
}

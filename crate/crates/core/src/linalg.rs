//! Small dense helpers: Frobenius norms and symmetric eigenvalues for the
//! low-dimensional diffusion matrices handled here (n <= 2 in practice, the
//! routines are written for general small n).

use ndarray::{Array1, Array2, ArrayView2};

use crate::scalar::Real;

pub fn frobenius<T: Real>(m: &ArrayView2<T>) -> T {
    m.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b).sqrt()
}

pub fn frobenius_diff<T: Real>(a: &ArrayView2<T>, b: &ArrayView2<T>) -> T {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

pub fn euclidean<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b).sqrt()
}

pub fn euclidean_diff<T: Real>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(T::zero(), |acc, v| acc + v)
        .sqrt()
}

/// `sigma sigma^T` for a rectangular `n x m` matrix.
pub fn gram<T: Real>(sigma: &ArrayView2<T>) -> Array2<T> {
    let (n, m) = sigma.dim();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = T::zero();
            for k in 0..m {
                s += sigma[[i, k]] * sigma[[j, k]];
            }
            out[[i, j]] = s;
            out[[j, i]] = s;
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Plenty for the tiny matrices that show up in the ellipticity checks.
pub fn sym_eigenvalues<T: Real>(a: &ArrayView2<T>) -> Array1<T> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut m = a.to_owned();
    let tol = T::epsilon() * T::of(64.0);
    let scale = frobenius(&m.view()).max(T::one());
    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::two() * apq);
                // stable tangent of the rotation angle
                let t = {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
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
    let mut eig: Vec<T> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Array1::from(eig)
}

pub fn min_eigenvalue<T: Real>(a: &ArrayView2<T>) -> T {
    sym_eigenvalues(a)[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gram_of_block_matrix() {
        // [sigma | sqrt(eps) I] with sigma = 3, eps = 0.04 in one dimension
        let s = array![[3.0f64, 0.2]];
        let g = gram(&s.view());
        assert!((g[[0, 0]] - 9.04).abs() < 1e-15);
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let a = array![[2.0f64, 1.0], [1.0, 2.0]];
        let e = sym_eigenvalues(&a.view());
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jacobi_on_diagonal_matrix_is_exact() {
        let a = array![[4.0f64, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 0.5]];
        let e = sym_eigenvalues(&a.view());
        assert_eq!(e[0], -1.0);
        assert_eq!(e[1], 0.5);
        assert_eq!(e[2], 4.0);
    }

    #[test]
    fn min_eigenvalue_detects_near_singular() {
        let a = array![[1.0f64, 1.0], [1.0, 1.0 + 1e-9]];
        let e = min_eigenvalue(&a.view());
        assert!(e.abs() < 1e-8);
    }
}

//! Thin singular value decomposition by one-sided Jacobi rotations.
//!
//! For `W [d1×d2]` returns `(U [d1×r], S [r], V [d2×r])` with
//! `r = min(d1, d2)`, `U·diag(S)·Vᵀ ≈ W`, singular values non-negative and
//! sorted descending, and the columns of `U` and `V` orthonormal.
//!
//! The algorithm orthogonalizes column pairs of a working copy of `W`
//! (transposed first when `d1 < d2` so the tall case is canonical). A sweep
//! visits every column pair once; convergence is declared when every pair
//! satisfies `|u·v| ≤ 1e-10·‖u‖‖v‖`. The sweep cap is `100·min(d1, d2)`
//! (minimum 30); exceeding it is reported as an error, never silently.

use crate::tensor::{Scalar, Tensor};
use crate::{NumError, Result};

const OFF_DIAG_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Svd<T: Scalar> {
    pub u: Tensor<T>,
    pub s: Tensor<T>,
    pub v: Tensor<T>,
}

pub fn svd<T: Scalar>(w: &Tensor<T>) -> Result<Svd<T>> {
    let (d1, d2) = match w.shape() {
        [r, c] => (*r, *c),
        s => {
            return Err(NumError::ShapeMismatch {
                op: "svd",
                detail: format!("expected rank 2, got {:?}", s),
            })
        }
    };
    w.check_finite("svd")?;
    if d1 >= d2 {
        svd_tall(w, d1, d2)
    } else {
        // A = (AT)T: swap the roles of U and V.
        let wt = crate::kernels::transpose(w)?;
        let f = svd_tall(&wt, d2, d1)?;
        Ok(Svd { u: f.v, s: f.s, v: f.u })
    }
}

fn svd_tall<T: Scalar>(w: &Tensor<T>, m: usize, n: usize) -> Result<Svd<T>> {
    let mut a: Vec<T> = w.data().to_vec(); // m×n, mutated in place
    let mut v = vec![T::zero(); n * n];
    for j in 0..n {
        v[j * n + j] = T::one();
    }
    let tol = T::of_f64(OFF_DIAG_TOL);
    let max_sweeps = (100 * n.max(1)).max(30);
    let mut converged = n < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut app = T::zero();
                let mut aqq = T::zero();
                let mut apq = T::zero();
                for i in 0..m {
                    let x = a[i * n + p];
                    let y = a[i * n + q];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                if app == T::zero() || aqq == T::zero() {
                    continue;
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Jacobi rotation zeroing the (p,q) Gram entry.
                let zeta = (aqq - app) / (T::of_f64(2.0) * apq);
                let t = {
                    let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                    sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt())
                };
                let c = (T::one() + t * t).sqrt().recip();
                let s = c * t;
                for i in 0..m {
                    let x = a[i * n + p];
                    let y = a[i * n + q];
                    a[i * n + p] = c * x - s * y;
                    a[i * n + q] = s * x + c * y;
                }
                for i in 0..n {
                    let x = v[i * n + p];
                    let y = v[i * n + q];
                    v[i * n + p] = c * x - s * y;
                    v[i * n + q] = s * x + c * y;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(NumError::SvdNonConvergence { sweeps: max_sweeps });
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..n).collect();
    let mut sigma = vec![T::zero(); n];
    for (j, s) in sigma.iter_mut().enumerate() {
        let mut acc = T::zero();
        for i in 0..m {
            let x = a[i * n + j];
            acc += x * x;
        }
        *s = acc.sqrt();
    }
    order.sort_by(|&x, &y| sigma[y].partial_cmp(&sigma[x]).unwrap().then(x.cmp(&y)));

    let mut u = vec![T::zero(); m * n];
    let mut s_sorted = vec![T::zero(); n];
    let mut v_sorted = vec![T::zero(); n * n];
    let smax = sigma[order[0]];
    let negligible = smax * T::of_f64(1e-300).max(T::epsilon() * T::of_f64(m as f64));
    for (dst, &src) in order.iter().enumerate() {
        s_sorted[dst] = sigma[src];
        for i in 0..n {
            v_sorted[i * n + dst] = v[i * n + src];
        }
        if sigma[src] > negligible && sigma[src] > T::zero() {
            let inv = sigma[src].recip();
            for i in 0..m {
                u[i * n + dst] = a[i * n + src] * inv;
            }
        }
    }
    // Zero singular values leave empty U columns; complete them to an
    // orthonormal basis from standard basis candidates.
    for dst in 0..n {
        let norm2: T = (0..m).map(|i| u[i * n + dst] * u[i * n + dst]).fold(T::zero(), |a, b| a + b);
        if norm2 > T::of_f64(0.5) {
            continue;
        }
        'candidate: for e in 0..m {
            let mut col = vec![T::zero(); m];
            col[e] = T::one();
            for j in 0..n {
                if j == dst {
                    continue;
                }
                let mut dot = T::zero();
                for i in 0..m {
                    dot += col[i] * u[i * n + j];
                }
                for i in 0..m {
                    col[i] -= dot * u[i * n + j];
                }
            }
            let mut nrm = T::zero();
            for &x in &col {
                nrm += x * x;
            }
            let nrm = nrm.sqrt();
            if nrm > T::of_f64(0.1) {
                for i in 0..m {
                    u[i * n + dst] = col[i] / nrm;
                }
                break 'candidate;
            }
        }
    }

    Ok(Svd {
        u: Tensor::new(vec![m, n], u)?,
        s: Tensor::new(vec![n], s_sorted)?,
        v: Tensor::new(vec![n, n], v_sorted)?,
    })
}

/// Rank-`k` reconstruction `U_k·diag(S_k)·V_kᵀ`.
pub fn truncated_product<T: Scalar>(f: &Svd<T>, k: usize) -> Result<Tensor<T>> {
    let m = f.u.rows();
    let n = f.v.rows();
    let r = f.s.len();
    let k = k.min(r);
    let mut out = vec![T::zero(); m * n];
    for t in 0..k {
        let s = f.s.data()[t];
        for i in 0..m {
            let us = f.u.get2(i, t) * s;
            for j in 0..n {
                out[i * n + j] += us * f.v.get2(j, t);
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn reconstruct(f: &Svd<f64>) -> Tensor<f64> {
        truncated_product(f, f.s.len()).unwrap()
    }

    fn assert_orthonormal(t: &Tensor<f64>, tol: f64) {
        let cols = t.cols();
        for a in 0..cols {
            for b in 0..cols {
                let mut dot = 0.0;
                for i in 0..t.rows() {
                    dot += t.get2(i, a) * t.get2(i, b);
                }
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < tol, "col {} · col {} = {}", a, b, dot);
            }
        }
    }

    #[test]
    fn identity_3x3() {
        let f = svd(&Tensor::<f64>::eye(3)).unwrap();
        for &s in f.s.data() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let r = reconstruct(&f);
        assert!(r.max_abs_diff(&Tensor::eye(3)) < 1e-12);
    }

    #[test]
    fn diagonal_case_sorted() {
        let mut w = Tensor::<f64>::zeros(vec![3, 3]);
        w.set2(0, 0, 2.0);
        w.set2(1, 1, 3.0);
        w.set2(2, 2, 1.0);
        let f = svd(&w).unwrap();
        assert_eq!(f.s.data(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_rectangular_reconstruction() {
        let mut rng = SeededRng::new(21);
        for &(m, n) in &[(4usize, 3usize), (3, 4), (8, 5), (5, 8), (6, 6)] {
            let w = rng.normal_tensor::<f64>(vec![m, n], 1.0).unwrap();
            let f = svd(&w).unwrap();
            let err = reconstruct(&f).max_abs_diff(&w);
            assert!(err < 1e-10, "{}x{} reconstruction err {}", m, n, err);
            assert_orthonormal(&f.u, 1e-10);
            assert_orthonormal(&f.v, 1e-10);
            for win in f.s.data().windows(2) {
                assert!(win[0] >= win[1]);
            }
        }
    }

    #[test]
    fn rank_deficient_zero_column() {
        let w = Tensor::from_rows(&[
            vec![3.0, 0.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let f = svd(&w).unwrap();
        assert_eq!(f.s.data(), &[3.0, 2.0, 1.0, 0.0]);
        assert_orthonormal(&f.u, 1e-12);
        assert!(reconstruct(&f).max_abs_diff(&w) < 1e-12);
    }

    #[test]
    fn eckart_young_truncation_error() {
        let mut rng = SeededRng::new(33);
        let w = rng.normal_tensor::<f64>(vec![7, 5], 1.0).unwrap();
        let f = svd(&w).unwrap();
        let total: f64 = f.s.data().iter().map(|s| s * s).sum();
        for k in 0..=5 {
            let trunc = truncated_product(&f, k).unwrap();
            let diff = crate::kernels::sub(&w, &trunc).unwrap();
            let err2 = diff.data().iter().map(|v| v * v).sum::<f64>();
            let discarded: f64 = f.s.data()[k..].iter().map(|s| s * s).sum();
            assert!(
                (err2 - discarded).abs() <= 1e-8 * total.max(1.0),
                "k={} err2={} discarded={}",
                k,
                err2,
                discarded
            );
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = SeededRng::new(4);
        let w = rng.normal_tensor::<f64>(vec![6, 4], 1.0).unwrap();
        let a = svd(&w).unwrap();
        let b = svd(&w).unwrap();
        assert_eq!(a.u.data(), b.u.data());
        assert_eq!(a.s.data(), b.s.data());
        assert_eq!(a.v.data(), b.v.data());
    }
}

//! Dense kernels shared by the numeric core: row-major GEMM with fixed-chunk
//! parallelism, split-complex matrix products, and a Hermitian Jacobi
//! eigensolver used for the subspace fit.

use crate::scalar::Real;
use crate::util;
use num_complex::Complex;

/// C(m,n) = alpha * A(m,k) B(k,n) + beta * C, C contiguous row-major.
///
/// A and B are strided views (row stride, col stride). Work is split over
/// fixed row chunks of C, so the result does not depend on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn gemm_rm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: F,
    a: &[F],
    rsa: usize,
    csa: usize,
    b: &[F],
    rsb: usize,
    csb: usize,
    beta: F,
    c: &mut [F],
) {
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x = beta * *x;
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);

    // Chunk rows; 2 cores only pay off on reasonably tall outputs.
    let chunk = if m >= 128 { m.div_ceil(8).max(32) } else { m };
    util::par_chunks_mut(c, chunk * n, |ci, cc| {
        let r0 = ci * chunk;
        let rows = cc.len() / n;
        F::gemm(
            rows,
            k,
            n,
            alpha,
            a[r0 * rsa..].as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            cc.as_mut_ptr(),
            n as isize,
            1,
        );
    });
}

/// Complex matrix held as separate real and imaginary planes.
#[derive(Clone, Debug)]
pub struct SplitMat<F> {
    pub re: Vec<F>,
    pub im: Vec<F>,
    pub rows: usize,
    pub cols: usize,
}

impl<F: Real> SplitMat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SplitMat {
            re: vec![F::zero(); rows * cols],
            im: vec![F::zero(); rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_complex(x: &[Complex<F>], rows: usize, cols: usize) -> Self {
        assert_eq!(x.len(), rows * cols);
        let mut re = Vec::with_capacity(x.len());
        let mut im = Vec::with_capacity(x.len());
        for z in x {
            re.push(z.re);
            im.push(z.im);
        }
        SplitMat { re, im, rows, cols }
    }

    pub fn to_complex(&self) -> Vec<Complex<F>> {
        self.re
            .iter()
            .zip(self.im.iter())
            .map(|(&r, &i)| Complex::new(r, i))
            .collect()
    }
}

/// Whether an operand of [`cgemm`] enters plain, conjugated, transposed, or
/// conjugate-transposed.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum COp {
    None,
    Conj,
    Transpose,
    Hermitian,
}

impl COp {
    fn conjugates(self) -> bool {
        matches!(self, COp::Conj | COp::Hermitian)
    }
    fn transposes(self) -> bool {
        matches!(self, COp::Transpose | COp::Hermitian)
    }
}

/// C = op_a(A) * op_b(B) for split-complex row-major matrices, computed as
/// four real GEMMs.
pub fn cgemm<F: Real>(a: &SplitMat<F>, op_a: COp, b: &SplitMat<F>, op_b: COp) -> SplitMat<F> {
    let (m, k1, rsa, csa) = if op_a.transposes() {
        (a.cols, a.rows, 1, a.cols)
    } else {
        (a.rows, a.cols, a.cols, 1)
    };
    let (k2, n, rsb, csb) = if op_b.transposes() {
        (b.cols, b.rows, 1, b.cols)
    } else {
        (b.rows, b.cols, b.cols, 1)
    };
    assert_eq!(k1, k2, "cgemm inner dimension");
    let k = k1;
    let sa = if op_a.conjugates() { -F::one() } else { F::one() };
    let sb = if op_b.conjugates() { -F::one() } else { F::one() };

    let mut out = SplitMat::zeros(m, n);
    // re = Ar Br - (sa*sb) Ai Bi ; im = sb Ar Bi + sa Ai Br
    gemm_rm(m, k, n, F::one(), &a.re, rsa, csa, &b.re, rsb, csb, F::zero(), &mut out.re);
    gemm_rm(m, k, n, -(sa * sb), &a.im, rsa, csa, &b.im, rsb, csb, F::one(), &mut out.re);
    gemm_rm(m, k, n, sb, &a.re, rsa, csa, &b.im, rsb, csb, F::zero(), &mut out.im);
    gemm_rm(m, k, n, sa, &a.im, rsa, csa, &b.re, rsb, csb, F::one(), &mut out.im);
    out
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of a row-major d x d matrix. Deterministic: fixed sweep order,
/// fixed convergence threshold.
pub fn hermitian_eig_desc<F: Real>(
    a: &[Complex<F>],
    d: usize,
) -> crate::Result<(Vec<F>, Vec<Complex<F>>)> {
    assert_eq!(a.len(), d * d);
    let mut m: Vec<Complex<F>> = a.to_vec();
    // v starts as identity; accumulates the product of rotations (columns are
    // eigenvectors on exit).
    let mut v: Vec<Complex<F>> = vec![Complex::new(F::zero(), F::zero()); d * d];
    for i in 0..d {
        v[i * d + i] = Complex::new(F::one(), F::zero());
    }

    let frob: F = m.iter().map(|z| z.norm_sqr()).sum::<F>().sqrt();
    if frob == F::zero() {
        let vals = vec![F::zero(); d];
        return Ok((vals, v));
    }
    let tol = F::of_f64(1e-14) * frob;
    let max_sweeps = 60;

    for _sweep in 0..max_sweeps {
        let mut off = F::zero();
        for p in 0..d {
            for q in (p + 1)..d {
                off = off + m[p * d + q].norm_sqr();
            }
        }
        let off = (off + off).sqrt();
        if off <= tol {
            // Eigenvalues on the diagonal; sort descending.
            let mut idx: Vec<usize> = (0..d).collect();
            let diag: Vec<F> = (0..d).map(|i| m[i * d + i].re).collect();
            idx.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));
            let vals: Vec<F> = idx.iter().map(|&i| diag[i]).collect();
            let mut vecs = vec![Complex::new(F::zero(), F::zero()); d * d];
            for (new_j, &old_j) in idx.iter().enumerate() {
                for i in 0..d {
                    vecs[i * d + new_j] = v[i * d + old_j];
                }
            }
            return Ok((vals, vecs));
        }

        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                let r = apq.norm();
                if r <= tol * F::of_f64(1e-2) {
                    continue;
                }
                let app = m[p * d + p].re;
                let aqq = m[q * d + q].re;
                // Phase factor turning the 2x2 block real: with
                // e = apq / |apq|, the similarity by diag(1, conj(e)) maps
                // the block to [[app, r], [r, aqq]].
                let e = apq / Complex::new(r, F::zero());
                // Real Jacobi angle for [[app, r], [r, aqq]].
                let tau = (aqq - app) / (r + r);
                let t = {
                    let s = if tau >= F::zero() { F::one() } else { -F::one() };
                    s / (tau.abs() + (F::one() + tau * tau).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;
                // Column-p/q update coefficients of J = diag(1, conj(e)) * R,
                // with R = [[c, s], [-s, c]]:
                //   J[:,p] = (c, -s*conj(e)),  J[:,q] = (s, c*conj(e)).
                let jp_p = Complex::new(c, F::zero());
                let jq_p = Complex::new(-s, F::zero()) * e.conj();
                let jp_q = Complex::new(s, F::zero());
                let jq_q = Complex::new(c, F::zero()) * e.conj();

                // m <- J^H m J : first columns (m J), then rows (J^H m).
                for i in 0..d {
                    let mip = m[i * d + p];
                    let miq = m[i * d + q];
                    m[i * d + p] = mip * jp_p + miq * jq_p;
                    m[i * d + q] = mip * jp_q + miq * jq_q;
                }
                for j in 0..d {
                    let mpj = m[p * d + j];
                    let mqj = m[q * d + j];
                    m[p * d + j] = jp_p.conj() * mpj + jq_p.conj() * mqj;
                    m[q * d + j] = jp_q.conj() * mpj + jq_q.conj() * mqj;
                }
                // Hermitian cleanup on the pivot entries.
                let re_pp = m[p * d + p].re;
                let re_qq = m[q * d + q].re;
                m[p * d + p] = Complex::new(re_pp, F::zero());
                m[q * d + q] = Complex::new(re_qq, F::zero());
                m[p * d + q] = Complex::new(F::zero(), F::zero());
                m[q * d + p] = Complex::new(F::zero(), F::zero());

                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = vip * jp_p + viq * jq_p;
                    v[i * d + q] = vip * jp_q + viq * jq_q;
                }
            }
        }
    }
    Err(crate::Error::Numerical(
        "Jacobi eigensolver did not converge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randn(rng: &mut impl Rng) -> f64 {
        // Box-Muller is plenty here.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn gemm_rm_matches_naive() {
        let mut rng = crate::util::rng_for(1, "gemm", 0);
        let (m, k, n) = (37, 11, 23);
        let a: Vec<f64> = (0..m * k).map(|_| randn(&mut rng)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| randn(&mut rng)).collect();
        let mut c = vec![0.0; m * n];
        gemm_rm(m, k, n, 1.0, &a, k, 1, &b, n, 1, 0.0, &mut c);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                assert!((c[i * n + j] - s).abs() < 1e-12 * (1.0 + s.abs()));
            }
        }
    }

    #[test]
    fn cgemm_hermitian_product() {
        let mut rng = crate::util::rng_for(2, "cgemm", 0);
        let (m, k) = (9, 6);
        let a: Vec<Complex<f64>> = (0..m * k)
            .map(|_| Complex::new(randn(&mut rng), randn(&mut rng)))
            .collect();
        let sa = SplitMat::from_complex(&a, m, k);
        // G = A^H A must be Hermitian PSD.
        let g = cgemm(&sa, COp::Hermitian, &sa, COp::None);
        let gc = g.to_complex();
        for i in 0..k {
            for j in 0..k {
                let gij = gc[i * k + j];
                let gji = gc[j * k + i];
                assert!((gij - gji.conj()).norm() < 1e-12);
                let mut s = Complex::new(0.0, 0.0);
                for v in 0..m {
                    s += a[v * k + i].conj() * a[v * k + j];
                }
                assert!((gij - s).norm() < 1e-12 * (1.0 + s.norm()));
            }
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // Build A = U diag(lams) U^H from a unitary U (Householder-free:
        // orthonormalize a random complex matrix by Gram-Schmidt).
        let mut rng = crate::util::rng_for(3, "jacobi", 0);
        let d = 12;
        let mut u: Vec<Complex<f64>> = (0..d * d)
            .map(|_| Complex::new(randn(&mut rng), randn(&mut rng)))
            .collect();
        for j in 0..d {
            for prev in 0..j {
                let mut dot = Complex::new(0.0, 0.0);
                for i in 0..d {
                    dot += u[i * d + prev].conj() * u[i * d + j];
                }
                for i in 0..d {
                    let t = u[i * d + prev];
                    u[i * d + j] -= dot * t;
                }
            }
            let nrm = (0..d).map(|i| u[i * d + j].norm_sqr()).sum::<f64>().sqrt();
            for i in 0..d {
                u[i * d + j] /= nrm;
            }
        }
        let lams: Vec<f64> = (0..d).map(|i| (d - i) as f64).collect();
        let mut a = vec![Complex::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = Complex::new(0.0, 0.0);
                for l in 0..d {
                    s += u[i * d + l] * lams[l] * u[j * d + l].conj();
                }
                a[i * d + j] = s;
            }
        }
        let (vals, vecs) = hermitian_eig_desc(&a, d).unwrap();
        for (got, want) in vals.iter().zip(lams.iter()) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        // Residual ||A v - lam v|| per eigenpair.
        for j in 0..d {
            let mut res = 0.0;
            for i in 0..d {
                let mut av = Complex::new(0.0, 0.0);
                for l in 0..d {
                    av += a[i * d + l] * vecs[l * d + j];
                }
                res += (av - vecs[i * d + j] * vals[j]).norm_sqr();
            }
            assert!(res.sqrt() < 1e-8, "eigenpair {j} residual {res}");
        }
    }
}

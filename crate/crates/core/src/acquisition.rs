//! The spatiotemporal acquisition operator: per-frame cartesian Fourier
//! subsampling composed with the temporal subspace.
//!
//! Forward: expand the (H*W) x t TSMI to T timeframes via V^H, unitary 2-D
//! FFT per frame, then pick the masked k-space locations. The adjoint
//! zero-fills, inverse-FFTs and contracts back through V. With the unitary
//! FFT and orthonormal basis the two are exact adjoints and the operator
//! norm is at most one.

use crate::autodiff::LinearOperator;
use crate::error::{Error, Result};
use crate::fft::Fft2;
 
use crate::masks::SamplingMask;
use crate::scalar::Real;
use crate::subspace::TemporalBasis;
use num_complex::Complex;
use rand::Rng;
use rustfft::FftNum;
use std::sync::Arc;

pub struct AcquisitionOperator<F: Real + FftNum> {
    pub mask: SamplingMask,
    pub basis: TemporalBasis<F>,
    flat: Vec<Vec<u32>>,
    fft: Fft2<F>,
    pub h: usize,
    pub w: usize,
}

impl<F: Real + FftNum> AcquisitionOperator<F> {
    pub fn new(mask: SamplingMask, basis: TemporalBasis<F>) -> Result<Self> {
        if mask.t_frames() != basis.t_full {
            return Err(Error::shape(
                "acquisition",
                format!(
                    "mask has {} frames but basis expands to {}",
                    mask.t_frames(),
                    basis.t_full
                ),
            ));
        }
        let flat = mask.flat_indices();
        let (h, w) = (mask.h, mask.w);
        Ok(AcquisitionOperator {
            fft: Fft2::new(h, w),
            flat,
            mask,
            basis,
            h,
            w,
        })
    }

    /// Image voxels n = H*W.
    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn t(&self) -> usize {
        self.basis.t
    }

    pub fn t_frames(&self) -> usize {
        self.basis.t_full
    }

    pub fn m(&self) -> usize {
        self.mask.m
    }

    /// Spatial compression ratio n / m.
    pub fn compression_ratio(&self) -> f64 {
        self.n() as f64 / self.m() as f64
    }

    pub fn mask_id(&self) -> String {
        self.mask.id()
    }

    /// x: (H*W) x t row-major -> y: m x T row-major (y[s*T + frame]).
    ///
    /// The FFT commutes with the per-voxel temporal combination, so the t
    /// coefficient images are transformed once and frames are assembled
    /// only at the sampled k-space locations:
    /// y[s, tau] = sum_j conj(V[tau, j]) * (F x_j)[mask[tau][s]].
    pub fn forward(&self, x: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
        let (n, t, tf, m) = (self.n(), self.t(), self.t_frames(), self.m());
        if x.len() != n * t {
            return Err(Error::shape(
                "acquisition forward",
                format!("{} values, expected {n} x {t}", x.len()),
            ));
        }
        let k_imgs: Vec<Vec<Complex<F>>> = crate::util::par_map(t, |j| {
            let mut buf: Vec<Complex<F>> = (0..n).map(|v| x[v * t + j]).collect();
            self.fft.forward(&mut buf);
            buf
        });

        let per_frame: Vec<Vec<Complex<F>>> = crate::util::par_map(tf, |frame| {
            let idxs = &self.flat[frame];
            let mut out = vec![Complex::new(F::zero(), F::zero()); m];
            for (j, k_img) in k_imgs.iter().enumerate() {
                let vc = self.basis.v[frame * t + j].conj();
                for (s, &idx) in idxs.iter().enumerate() {
                    out[s] += vc * k_img[idx as usize];
                }
            }
            out
        });

        let mut y = vec![Complex::new(F::zero(), F::zero()); m * tf];
        for (frame, samples) in per_frame.into_iter().enumerate() {
            for (s, z) in samples.into_iter().enumerate() {
                y[s * tf + frame] = z;
            }
        }
        Ok(y)
    }

    /// Exact adjoint of `forward`: y m x T -> x (H*W) x t. Zero-filled
    /// samples accumulate into the t coefficient k-space images, which are
    /// inverse-transformed once each.
    pub fn backproject(&self, y: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
        let (n, t, tf, m) = (self.n(), self.t(), self.t_frames(), self.m());
        if y.len() != m * tf {
            return Err(Error::shape(
                "acquisition backproject",
                format!("{} values, expected {m} x {tf}", y.len()),
            ));
        }
        let imgs: Vec<Vec<Complex<F>>> = crate::util::par_map(t, |j| {
            let mut acc = vec![Complex::new(F::zero(), F::zero()); n];
            for frame in 0..tf {
                let vj = self.basis.v[frame * t + j];
                for (s, &idx) in self.flat[frame].iter().enumerate() {
                    acc[idx as usize] += vj * y[s * tf + frame];
                }
            }
            self.fft.inverse(&mut acc);
            acc
        });
        let mut x = vec![Complex::new(F::zero(), F::zero()); n * t];
        for (j, img) in imgs.into_iter().enumerate() {
            for (v, z) in img.into_iter().enumerate() {
                x[v * t + j] = z;
            }
        }
        Ok(x)
    }

    /// Max normalized adjoint defect over random complex pairs:
    /// |<Ax, y> - <x, A^H y>| / (||Ax|| ||y|| + ||x|| ||A^H y||).
    pub fn adjoint_defect(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = crate::util::rng_for(seed, "acq-adjoint", 0);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let x: Vec<Complex<F>> = (0..self.n() * self.t())
                .map(|_| {
                    Complex::new(
                        F::of_f64(rng.gen_range(-1.0..1.0)),
                        F::of_f64(rng.gen_range(-1.0..1.0)),
                    )
                })
                .collect();
            let y: Vec<Complex<F>> = (0..self.m() * self.t_frames())
                .map(|_| {
                    Complex::new(
                        F::of_f64(rng.gen_range(-1.0..1.0)),
                        F::of_f64(rng.gen_range(-1.0..1.0)),
                    )
                })
                .collect();
            let ax = self.forward(&x).expect("shapes fixed");
            let ahy = self.backproject(&y).expect("shapes fixed");
            let cdot = |a: &[Complex<F>], b: &[Complex<F>]| -> Complex<f64> {
                let mut acc = Complex::new(0.0f64, 0.0);
                for (p, q) in a.iter().zip(b) {
                    let z = p * q.conj();
                    acc += Complex::new(z.re.as_f64(), z.im.as_f64());
                }
                acc
            };
            let nrm = |a: &[Complex<F>]| cdot(a, a).re.sqrt();
            let lhs = cdot(&ax, &y);
            let rhs = cdot(&x, &ahy);
            let denom = nrm(&ax) * nrm(&y) + nrm(&x) * nrm(&ahy);
            if denom > 0.0 {
                worst = worst.max((lhs - rhs).norm() / denom);
            }
        }
        worst
    }

    /// Power-iteration estimate of ||A|| (square root of the top eigenvalue
    /// of A^H A).
    pub fn operator_norm_estimate(&self, iters: usize, seed: u64) -> f64 {
        let mut rng = crate::util::rng_for(seed, "acq-norm", 0);
        let mut x: Vec<Complex<F>> = (0..self.n() * self.t())
            .map(|_| {
                Complex::new(
                    F::of_f64(rng.gen_range(-1.0..1.0)),
                    F::of_f64(rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        let mut top = 0.0f64;
        for _ in 0..iters {
            let ax = self.forward(&x).expect("shapes fixed");
            let nx: f64 = x.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt();
            let nax: f64 = ax.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt();
            if nx == 0.0 {
                return 0.0;
            }
            top = nax / nx;
            let mut next = self.backproject(&ax).expect("shapes fixed");
            let nn: f64 = next.iter().map(|z| z.norm_sqr().as_f64()).sum::<f64>().sqrt();
            if nn == 0.0 {
                return top;
            }
            let s = F::of_f64(1.0 / nn);
            for z in next.iter_mut() {
                *z = z.scale(s);
            }
            x = next;
        }
        top
    }
}

/// Real-channel tensor layout used inside the differentiation graph:
/// [2t, H, W] with the first t channels real parts, the last t imaginary.
pub fn tsmi_to_channels<F: Real>(x: &[Complex<F>], n: usize, t: usize) -> Vec<F> {
    let mut out = vec![F::zero(); 2 * t * n];
    for v in 0..n {
        for j in 0..t {
            out[j * n + v] = x[v * t + j].re;
            out[(t + j) * n + v] = x[v * t + j].im;
        }
    }
    out
}

pub fn channels_to_tsmi<F: Real>(ch: &[F], n: usize, t: usize) -> Vec<Complex<F>> {
    let mut out = vec![Complex::new(F::zero(), F::zero()); n * t];
    for v in 0..n {
        for j in 0..t {
            out[v * t + j] = Complex::new(ch[j * n + v], ch[(t + j) * n + v]);
        }
    }
    out
}

/// k-space [2, m, T] real channels (re plane then im plane).
pub fn kspace_to_channels<F: Real>(y: &[Complex<F>]) -> Vec<F> {
    let mut out = vec![F::zero(); 2 * y.len()];
    for (i, z) in y.iter().enumerate() {
        out[i] = z.re;
        out[y.len() + i] = z.im;
    }
    out
}

pub fn channels_to_kspace<F: Real>(ch: &[F]) -> Vec<Complex<F>> {
    let half = ch.len() / 2;
    (0..half).map(|i| Complex::new(ch[i], ch[half + i])).collect()
}

/// Graph-facing view of A: real channels [2t, H, W] -> [2, m, T]. The real
/// inner product of stacked channels equals the real part of the complex
/// one, so the complex adjoint realizes the transpose exactly.
pub fn as_linear_op<F: Real + FftNum>(op: Arc<AcquisitionOperator<F>>) -> LinearOperator<F> {
    let (n, t, m, tf, h, w) = (op.n(), op.t(), op.m(), op.t_frames(), op.h, op.w);
    let fwd = {
        let op = op.clone();
        move |ch: &[F]| {
            let x = channels_to_tsmi(ch, n, t);
            kspace_to_channels(&op.forward(&x).expect("shape enforced by graph"))
        }
    };
    let adj = {
        let op = op.clone();
        move |ch: &[F]| {
            let y = channels_to_kspace(ch);
            tsmi_to_channels(&op.backproject(&y).expect("shape enforced by graph"), n, t)
        }
    };
    LinearOperator::new(vec![2 * t, h, w], vec![2, m, tf], fwd, adj)
}

/// Graph-facing view of A^H: real channels [2, m, T] -> [2t, H, W].
pub fn as_adjoint_linear_op<F: Real + FftNum>(
    op: Arc<AcquisitionOperator<F>>,
) -> LinearOperator<F> {
    let (n, t, m, tf, h, w) = (op.n(), op.t(), op.m(), op.t_frames(), op.h, op.w);
    let fwd = {
        let op = op.clone();
        move |ch: &[F]| {
            let y = channels_to_kspace(ch);
            tsmi_to_channels(&op.backproject(&y).expect("shape enforced by graph"), n, t)
        }
    };
    let adj = {
        let op = op.clone();
        move |ch: &[F]| {
            let x = channels_to_tsmi(ch, n, t);
            kspace_to_channels(&op.forward(&x).expect("shape enforced by graph"))
        }
    };
    LinearOperator::new(vec![2, m, tf], vec![2 * t, h, w], fwd, adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::{make_epi_mask, make_spiral_mask, golden_angle_deg};
    use crate::subspace::TemporalBasis;

    fn random_basis(t_full: usize, t: usize, seed: u64) -> TemporalBasis<f64> {
        // Orthonormalize a random complex T x t matrix by Gram-Schmidt.
        let mut rng = crate::util::rng_for(seed, "acq-test-basis", 0);
        let mut v = vec![Complex::new(0.0, 0.0); t_full * t];
        for j in 0..t {
            for i in 0..t_full {
                v[i * t + j] = Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            for prev in 0..j {
                let mut dot = Complex::new(0.0, 0.0);
                for i in 0..t_full {
                    dot += v[i * t + prev].conj() * v[i * t + j];
                }
                for i in 0..t_full {
                    let p = v[i * t + prev];
                    v[i * t + j] -= dot * p;
                }
            }
            let nrm: f64 = (0..t_full).map(|i| v[i * t + j].norm_sqr()).sum::<f64>().sqrt();
            for i in 0..t_full {
                v[i * t + j] = v[i * t + j].unscale(nrm);
            }
        }
        TemporalBasis::from_columns(v, t_full, t).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let mask = make_epi_mask(16, 16, 20, 8).unwrap();
        let op = AcquisitionOperator::new(mask, random_basis(8, 4, 1)).unwrap();
        let x = vec![Complex::new(0.0, 0.0); op.n() * op.t()];
        let y = op.forward(&x).unwrap();
        assert!(y.iter().all(|z| z.norm() == 0.0));
        let back = op.backproject(&y).unwrap();
        assert!(back.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn adjoint_identity_both_patterns() {
        for mask in [
            make_spiral_mask(16, 16, 24, 6, golden_angle_deg()).unwrap(),
            make_epi_mask(16, 16, 24, 6).unwrap(),
        ] {
            let op = AcquisitionOperator::new(mask, random_basis(6, 4, 2)).unwrap();
            assert!(op.adjoint_defect(25, 7) < 1e-12);
        }
    }

    #[test]
    fn roundtrip_with_full_sampling_and_identity_basis() {
        // m = H*W (every location sampled), t = T identity basis: A is a
        // stack of unitary maps, so A^H A = I.
        let (h, w, t) = (8, 8, 3);
        let mask = make_epi_mask(h, w, h * w, t).unwrap();
        let op = AcquisitionOperator::new(mask, TemporalBasis::identity(t)).unwrap();
        let mut rng = crate::util::rng_for(4, "acq-roundtrip", 0);
        let x: Vec<Complex<f64>> = (0..h * w * t)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let y = op.forward(&x).unwrap();
        let back = op.backproject(&y).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_image_gives_flat_modulus_per_frame() {
        // Single-frame identity basis, delta at the spatial center: every
        // sampled location sees the same modulus.
        let (h, w) = (16, 16);
        let mask = make_spiral_mask(h, w, 30, 1, 0.0).unwrap();
        let op = AcquisitionOperator::new(mask, TemporalBasis::identity(1)).unwrap();
        let mut x = vec![Complex::new(0.0, 0.0); h * w];
        x[(h / 2) * w + w / 2] = Complex::new(1.0, 0.0);
        let y = op.forward(&x).unwrap();
        let want = 1.0 / ((h * w) as f64).sqrt();
        assert!(y.iter().all(|z| (z.norm() - want).abs() < 1e-12));
    }

    #[test]
    fn operator_norm_at_most_one() {
        let mask = make_spiral_mask(16, 16, 24, 8, golden_angle_deg()).unwrap();
        let op = AcquisitionOperator::new(mask, random_basis(8, 4, 3)).unwrap();
        let norm = op.operator_norm_estimate(40, 5);
        assert!(norm <= 1.0 + 1e-8, "norm {norm}");
    }

    #[test]
    fn channel_layout_roundtrip() {
        let mut rng = crate::util::rng_for(6, "acq-ch", 0);
        let (n, t) = (12, 5);
        let x: Vec<Complex<f64>> = (0..n * t)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let ch = tsmi_to_channels(&x, n, t);
        assert_eq!(channels_to_tsmi(&ch, n, t), x);
    }

    #[test]
    fn linear_op_adapter_passes_real_adjoint_test() {
        let mask = make_epi_mask(16, 16, 18, 5).unwrap();
        let op = Arc::new(AcquisitionOperator::new(mask, random_basis(5, 4, 8)).unwrap());
        let lin = as_linear_op(op.clone());
        assert!(lin.adjoint_defect(20, 9) < 1e-12);
        let adj = as_adjoint_linear_op(op);
        assert!(adj.adjoint_defect(20, 10) < 1e-12);
    }
}

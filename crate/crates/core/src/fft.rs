//! Unitary 2-D FFT on row-major complex buffers, with cached plans.

use crate::scalar::Real;
use num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};
use std::sync::Arc;

pub struct Fft2<F: FftNum> {
    pub h: usize,
    pub w: usize,
    row_fwd: Arc<dyn Fft<F>>,
    row_inv: Arc<dyn Fft<F>>,
    col_fwd: Arc<dyn Fft<F>>,
    col_inv: Arc<dyn Fft<F>>,
}

impl<F: Real + FftNum> Fft2<F> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    fn run(&self, buf: &mut [Complex<F>], inverse: bool) {
        assert_eq!(buf.len(), self.h * self.w);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let mut scratch =
            vec![Complex::new(F::zero(), F::zero()); row.get_inplace_scratch_len()];
        for r in buf.chunks_exact_mut(self.w) {
            row.process_with_scratch(r, &mut scratch);
        }
        // Columns via transpose, FFT rows, transpose back.
        let mut tr = transpose(buf, self.h, self.w);
        scratch.resize(col.get_inplace_scratch_len(), Complex::new(F::zero(), F::zero()));
        for r in tr.chunks_exact_mut(self.h) {
            col.process_with_scratch(r, &mut scratch);
        }
        let back = transpose(&tr, self.w, self.h);
        buf.copy_from_slice(&back);
        // Unitary normalization in both directions.
        let s = F::one() / F::of_usize(self.h * self.w).sqrt();
        for v in buf.iter_mut() {
            *v = v.scale(s);
        }
    }

    pub fn forward(&self, buf: &mut [Complex<F>]) {
        self.run(buf, false);
    }

    pub fn inverse(&self, buf: &mut [Complex<F>]) {
        self.run(buf, true);
    }
}

fn transpose<F: Copy>(m: &[F], rows: usize, cols: usize) -> Vec<F> {
    assert!(!m.is_empty());
    let mut out = vec![m[0]; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = m[r * cols + c];
        }
    }
    out
}

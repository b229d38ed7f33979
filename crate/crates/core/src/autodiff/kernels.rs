//! Dense kernels behind the graph ops: same-padding cross-correlation via
//! im2col + GEMM, factor-2 pooling and upsampling.

use crate::linalg::gemm_rm;
use crate::scalar::Real;
use crate::util;

#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> usize {
        self.k / 2
    }
    fn hw(&self) -> usize {
        self.h * self.w
    }
    fn ckk(&self) -> usize {
        self.cin * self.k * self.k
    }
}

fn im2col<F: Real>(x: &[F], d: &ConvDims) -> Vec<F> {
    let (h, w, pad) = (d.h as isize, d.w as isize, d.pad() as isize);
    let hw = d.hw();
    let mut cols = vec![F::zero(); d.ckk() * hw];
    let mut row = 0usize;
    for ci in 0..d.cin {
        let xc = &x[ci * hw..(ci + 1) * hw];
        for dy in -pad..=pad {
            for dx in -pad..=pad {
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    let src_off = (sy * w + (x0 + dx)) as usize;
                    let dst_off = (y * w + x0) as usize;
                    let len = (x1 - x0).max(0) as usize;
                    dst[dst_off..dst_off + len]
                        .copy_from_slice(&xc[src_off..src_off + len]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im_acc<F: Real>(gcols: &[F], d: &ConvDims, gx: &mut [F]) {
    let (h, w, pad) = (d.h as isize, d.w as isize, d.pad() as isize);
    let hw = d.hw();
    let mut row = 0usize;
    for ci in 0..d.cin {
        let gxc = &mut gx[ci * hw..(ci + 1) * hw];
        for dy in -pad..=pad {
            for dx in -pad..=pad {
                let src = &gcols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + dy;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    for xx in x0..x1 {
                        gxc[(sy * w + xx + dx) as usize] += src[(y * w + xx) as usize];
                    }
                }
                row += 1;
            }
        }
    }
}

/// out[n, co, y, x] = bias[co] + sum_{ci,dy,dx} w[co,ci,dy,dx] * x[n,ci,y+dy-p,x+dx-p]
pub fn conv2d_forward<F: Real>(x: &[F], wgt: &[F], bias: &[F], d: &ConvDims) -> Vec<F> {
    let hw = d.hw();
    let ckk = d.ckk();
    let mut out = vec![F::zero(); d.n * d.cout * hw];
    util::par_chunks_mut(&mut out, d.cout * hw, |s, out_s| {
        let xs = &x[s * d.cin * hw..(s + 1) * d.cin * hw];
        let cols = im2col(xs, d);
        gemm_rm(d.cout, ckk, hw, F::one(), wgt, ckk, 1, &cols, hw, 1, F::zero(), out_s);
        for co in 0..d.cout {
            let b = bias[co];
            for v in &mut out_s[co * hw..(co + 1) * hw] {
                *v += b;
            }
        }
    });
    out
}

/// Gradients w.r.t. input, kernel and bias. Per-sample contributions to the
/// kernel/bias gradients are reduced in sample order, so the result is
/// independent of the parallel schedule.
pub fn conv2d_backward<F: Real>(
    x: &[F],
    wgt: &[F],
    gout: &[F],
    d: &ConvDims,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let hw = d.hw();
    let ckk = d.ckk();
    let per_sample = util::par_map(d.n, |s| {
        let xs = &x[s * d.cin * hw..(s + 1) * d.cin * hw];
        let gs = &gout[s * d.cout * hw..(s + 1) * d.cout * hw];
        let cols = im2col(xs, d);
        // gw_s = gout_s (cout x hw) @ cols^T (hw x ckk)
        let mut gw_s = vec![F::zero(); d.cout * ckk];
        gemm_rm(d.cout, hw, ckk, F::one(), gs, hw, 1, &cols, 1, hw, F::zero(), &mut gw_s);
        let mut gb_s = vec![F::zero(); d.cout];
        for co in 0..d.cout {
            gb_s[co] = gs[co * hw..(co + 1) * hw].iter().copied().sum();
        }
        // gcols = w^T (ckk x cout) @ gout_s (cout x hw)
        let mut gcols = vec![F::zero(); ckk * hw];
        gemm_rm(ckk, d.cout, hw, F::one(), wgt, 1, ckk, gs, hw, 1, F::zero(), &mut gcols);
        let mut gx_s = vec![F::zero(); d.cin * hw];
        col2im_acc(&gcols, d, &mut gx_s);
        (gx_s, gw_s, gb_s)
    });

    let mut gx = vec![F::zero(); d.n * d.cin * hw];
    let mut gw = vec![F::zero(); d.cout * ckk];
    let mut gb = vec![F::zero(); d.cout];
    for (s, (gx_s, gw_s, gb_s)) in per_sample.into_iter().enumerate() {
        gx[s * d.cin * hw..(s + 1) * d.cin * hw].copy_from_slice(&gx_s);
        for (a, b) in gw.iter_mut().zip(gw_s.iter()) {
            *a += *b;
        }
        for (a, b) in gb.iter_mut().zip(gb_s.iter()) {
            *a += *b;
        }
    }
    (gx, gw, gb)
}

pub fn avgpool2_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of_f64(0.25);
    let mut out = vec![F::zero(); n * c * oh * ow];
    for img in 0..n * c {
        let src = &x[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * oh * ow..(img + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = s * quarter;
            }
        }
    }
    out
}

pub fn avgpool2_backward<F: Real>(gout: &[F], n: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of_f64(0.25);
    let mut gx = vec![F::zero(); n * c * h * w];
    for img in 0..n * c {
        let g = &gout[img * oh * ow..(img + 1) * oh * ow];
        let dst = &mut gx[img * h * w..(img + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[y * ow + xx] * quarter;
                dst[2 * y * w + 2 * xx] = v;
                dst[2 * y * w + 2 * xx + 1] = v;
                dst[(2 * y + 1) * w + 2 * xx] = v;
                dst[(2 * y + 1) * w + 2 * xx + 1] = v;
            }
        }
    }
    gx
}

pub fn upsample2_forward<F: Real>(x: &[F], n: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); n * c * oh * ow];
    for img in 0..n * c {
        let src = &x[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * oh * ow..(img + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Real>(gout: &[F], n: usize, c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![F::zero(); n * c * h * w];
    for img in 0..n * c {
        let g = &gout[img * oh * ow..(img + 1) * oh * ow];
        let dst = &mut gx[img * h * w..(img + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += g[y * ow + xx];
            }
        }
    }
    gx
}

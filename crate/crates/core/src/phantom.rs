//! Procedural brain-like phantoms: an elliptical head containing smooth
//! randomized tissue regions drawn from a physiologically plausible palette,
//! with smoothly varying complex proton density.

use crate::dictionary::GridSpec;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Per-voxel tissue parameter images. Outside the head mask all maps are
/// zero; the mask itself is exactly the |PD| > 0 region.
#[derive(Clone, Debug)]
pub struct QMaps {
    pub h: usize,
    pub w: usize,
    pub t1_s: Vec<f64>,
    pub t2_s: Vec<f64>,
    pub pd_re: Vec<f64>,
    pub pd_im: Vec<f64>,
    pub head_mask: Vec<bool>,
}

impl QMaps {
    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn in_mask_count(&self) -> usize {
        self.head_mask.iter().filter(|&&b| b).count()
    }

    pub fn pd_magnitude(&self) -> Vec<f64> {
        self.pd_re
            .iter()
            .zip(&self.pd_im)
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect()
    }

    /// Channel-stacked [4, H, W] layout: T1, T2, PD_re, PD_im.
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.n());
        out.extend_from_slice(&self.t1_s);
        out.extend_from_slice(&self.t2_s);
        out.extend_from_slice(&self.pd_re);
        out.extend_from_slice(&self.pd_im);
        out
    }
}

/// Tissue palette: (T1 s, T2 s). Labeled synthetic stand-ins, spanning the
/// dictionary domain.
const WHITE_MATTER: (f64, f64) = (0.8, 0.07);
const GRAY_MATTER: (f64, f64) = (1.3, 0.11);
const CSF: (f64, f64) = (4.0, 1.8);

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    rot: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.rot.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn smooth_in_mask(map: &mut [f64], mask: &[bool], h: usize, w: usize) {
    let src = map.to_vec();
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let mut acc = 0.0;
            let mut count = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    let idx = (sy * w as i64 + sx) as usize;
                    if mask[idx] {
                        acc += src[idx];
                        count += 1.0;
                    }
                }
            }
            map[y * w + x] = acc / count;
        }
    }
}

/// Deterministic in `seed`. `smooth` applies a 3x3 in-mask average to T1/T2
/// to soften single-voxel edges (desk-scale default; off at full scale).
pub fn make_brain_phantom(h: usize, w: usize, seed: u64, smooth: bool) -> QMaps {
    assert!(h >= 16 && w >= 16, "phantom needs at least a 16x16 grid");
    let mut rng: ChaCha12Rng = crate::util::rng_for(seed, "phantom", 0);
    let domain = GridSpec::default();

    let head = Ellipse {
        cy: (h as f64 - 1.0) / 2.0,
        cx: (w as f64 - 1.0) / 2.0,
        ry: h as f64 * rng.gen_range(0.36..0.42),
        rx: w as f64 * rng.gen_range(0.30..0.36),
        rot: 0.0,
    };

    let n = h * w;
    let mut head_mask = vec![false; n];
    let mut t1 = vec![0.0; n];
    let mut t2 = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            if head.contains(y as f64, x as f64) {
                head_mask[y * w + x] = true;
                t1[y * w + x] = WHITE_MATTER.0;
                t2[y * w + x] = WHITE_MATTER.1;
            }
        }
    }

    // Randomized interior structures, later ones painting over earlier.
    let n_blobs = rng.gen_range(6..=12);
    for _ in 0..n_blobs {
        let (mut bt1, mut bt2) = match rng.gen_range(0..4) {
            0 => WHITE_MATTER,
            1 => GRAY_MATTER,
            2 => CSF,
            _ => (rng.gen_range(0.5..2.0), rng.gen_range(0.05..0.4)),
        };
        bt1 *= rng.gen_range(0.92..1.08);
        bt2 *= rng.gen_range(0.92..1.08);
        bt1 = bt1.clamp(domain.t1_range.0, domain.t1_range.1);
        bt2 = bt2.clamp(domain.t2_range.0, domain.t2_range.1);

        let r = rng.gen_range(0.0f64..0.75);
        let ang = rng.gen_range(0.0..std::f64::consts::TAU);
        let blob = Ellipse {
            cy: head.cy + r * ang.sin() * head.ry,
            cx: head.cx + r * ang.cos() * head.rx,
            ry: rng.gen_range(0.04..0.22) * h as f64,
            rx: rng.gen_range(0.04..0.22) * w as f64,
            rot: rng.gen_range(0.0..std::f64::consts::PI),
        };
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                if head_mask[idx] && blob.contains(y as f64, x as f64) {
                    t1[idx] = bt1;
                    t2[idx] = bt2;
                }
            }
        }
    }

    if smooth {
        smooth_in_mask(&mut t1, &head_mask, h, w);
        smooth_in_mask(&mut t2, &head_mask, h, w);
    }

    // Smooth PD magnitude in [0.6, 1.0] and a slowly varying phase.
    let (fy, fx) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
    let phi0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gy, gx) = (rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5));
    let psi0 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pd_re = vec![0.0; n];
    let mut pd_im = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if !head_mask[idx] {
                continue;
            }
            let (uy, ux) = (y as f64 / h as f64, x as f64 / w as f64);
            let mag = (0.8 + 0.12 * (std::f64::consts::TAU * (fy * uy + fx * ux) + phi0).sin())
                .clamp(0.6, 1.0);
            let phase = 0.5 * (std::f64::consts::TAU * (gy * uy + gx * ux) + psi0).sin();
            pd_re[idx] = mag * phase.cos();
            pd_im[idx] = mag * phase.sin();
        }
    }

    QMaps {
        h,
        w,
        t1_s: t1,
        t2_s: t2,
        pd_re,
        pd_im,
        head_mask,
    }
}

//! Classical dictionary matching and the SVD-MRF baseline: backproject to an
//! aliased TSMI, then per voxel pick the unit-norm atom with the largest
//! magnitude correlation. The complex proton density comes from the inner
//! product against the winning unit atom.

use crate::acquisition::AcquisitionOperator;
use crate::dataset::{KSpaceData, Tsmi};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use num_complex::Complex;

type C64 = Complex<f64>;

/// Matched quantitative maps. Every matched voxel carries a dictionary grid
/// pair; unmatched (out-of-mask or zero-signal) voxels hold the (0, 0)
/// sentinel with zero PD and zero correlation.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub h: usize,
    pub w: usize,
    pub t1_s: Vec<f64>,
    pub t2_s: Vec<f64>,
    pub pd_re: Vec<f64>,
    pub pd_im: Vec<f64>,
    pub correlation: Vec<f64>,
    /// Winning atom index per voxel (usize::MAX at sentinel voxels).
    pub atom_index: Vec<usize>,
}

impl MatchResult {
    pub fn pd_magnitude(&self) -> Vec<f64> {
        self.pd_re
            .iter()
            .zip(&self.pd_im)
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect()
    }
}

struct VoxelMatch {
    atom: usize,
    pd: C64,
    correlation: f64,
}

fn match_one(x_v: &[C64], dict: &Dictionary<f64>) -> Option<VoxelMatch> {
    let t = dict.entry_len;
    let norm_x: f64 = x_v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm_x == 0.0 {
        return None;
    }
    let mut best = 0usize;
    let mut best_score = -1.0f64;
    let mut best_dot = C64::new(0.0, 0.0);
    for i in 0..dict.n_atoms() {
        let atom = &dict.unit_atoms[i * t..(i + 1) * t];
        let mut dot = C64::new(0.0, 0.0);
        for (xv, av) in x_v.iter().zip(atom) {
            dot += xv * av.conj();
        }
        let score = dot.norm_sqr();
        if score > best_score {
            best_score = score;
            best = i;
            best_dot = dot;
        }
    }
    Some(VoxelMatch {
        atom: best,
        pd: best_dot / dict.norms[best],
        correlation: (best_score.sqrt() / norm_x).min(1.0),
    })
}

/// Exhaustive per-voxel match over the compressed dictionary. Ties break to
/// the lowest atom index (strict improvement scan in index order). Blocked
/// and parallel over voxels; the per-voxel scan itself is sequential, so the
/// winning index is independent of the schedule.
pub fn dictionary_match(
    x: &Tsmi,
    dict: &Dictionary<f64>,
    head_mask: &[bool],
    h: usize,
    w: usize,
) -> Result<MatchResult> {
    if dict.basis_hash.is_none() {
        return Err(Error::Config(
            "dictionary_match needs a subspace-compressed dictionary".into(),
        ));
    }
    if dict.entry_len != x.t {
        return Err(Error::shape(
            "dictionary_match",
            format!("query length {} vs dictionary entries {}", x.t, dict.entry_len),
        ));
    }
    if x.n != h * w || head_mask.len() != x.n {
        return Err(Error::shape(
            "dictionary_match",
            format!("{} voxels vs {h}x{w} grid", x.n),
        ));
    }

    let t = x.t;
    let matches: Vec<Option<VoxelMatch>> = crate::util::par_map(x.n, |v| {
        if !head_mask[v] {
            return None;
        }
        match_one(&x.data[v * t..(v + 1) * t], dict)
    });

    let n = x.n;
    let mut out = MatchResult {
        h,
        w,
        t1_s: vec![0.0; n],
        t2_s: vec![0.0; n],
        pd_re: vec![0.0; n],
        pd_im: vec![0.0; n],
        correlation: vec![0.0; n],
        atom_index: vec![usize::MAX; n],
    };
    for (v, m) in matches.into_iter().enumerate() {
        if let Some(m) = m {
            let (t1, t2) = dict.grid[m.atom];
            out.t1_s[v] = t1;
            out.t2_s[v] = t2;
            out.pd_re[v] = m.pd.re;
            out.pd_im[v] = m.pd.im;
            out.correlation[v] = m.correlation;
            out.atom_index[v] = m.atom;
        }
    }
    Ok(out)
}

/// SVD-MRF baseline: backproject the measurements and dictionary-match the
/// aliased TSMI.
pub fn svd_mrf_reconstruct(
    y: &KSpaceData,
    op: &AcquisitionOperator<f64>,
    dict: &Dictionary<f64>,
    head_mask: &[bool],
) -> Result<MatchResult> {
    match &dict.basis_hash {
        None => {
            return Err(Error::Config(
                "svd_mrf_reconstruct needs a compressed dictionary".into(),
            ))
        }
        Some(hash) if *hash != op.basis.content_hash => {
            return Err(Error::HashMismatch {
                kind: "basis",
                expected: hash.clone(),
                got: op.basis.content_hash.clone(),
            })
        }
        Some(_) => {}
    }
    let data = op.backproject(&y.samples)?;
    let x = Tsmi {
        n: op.n(),
        t: op.t(),
        data,
    };
    dictionary_match(&x, dict, head_mask, op.h, op.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, GridSpec};
    use crate::epg::default_flip_schedule;
    use crate::subspace::fit_basis;
    use rand::Rng;

    fn compressed_dict() -> Dictionary<f64> {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(30);
        let dict = build_dictionary::<f64>(
            &sched,
            &GridSpec {
                n_t1: 12,
                n_t2: 10,
                ..Default::default()
            },
            12,
        )
        .unwrap();
        let basis = fit_basis(&dict, 6).unwrap();
        dict.compressed(&basis).unwrap()
    }

    #[test]
    fn exact_scaled_atom_recovers_grid_pair_and_pd() {
        let dict = compressed_dict();
        let t = dict.entry_len;
        let mut rng = crate::util::rng_for(1, "match", 0);
        let (h, w) = (2, 2);
        let mut data = vec![C64::new(0.0, 0.0); h * w * t];
        let mut expect = Vec::new();
        for v in 0..h * w {
            let atom = rng.gen_range(0..dict.n_atoms());
            let c = C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            for j in 0..t {
                data[v * t + j] = c * dict.atom(atom)[j];
            }
            expect.push((atom, c));
        }
        let x = Tsmi { n: h * w, t, data };
        let res = dictionary_match(&x, &dict, &vec![true; h * w], h, w).unwrap();
        for v in 0..h * w {
            let (atom, c) = expect[v];
            assert_eq!(res.atom_index[v], atom);
            assert!((res.pd_re[v] - c.re).abs() < 1e-10);
            assert!((res.pd_im[v] - c.im).abs() < 1e-10);
            assert!((res.correlation[v] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_voxel_gets_sentinel() {
        let dict = compressed_dict();
        let t = dict.entry_len;
        let x = Tsmi {
            n: 4,
            t,
            data: vec![C64::new(0.0, 0.0); 4 * t],
        };
        let res = dictionary_match(&x, &dict, &vec![true; 4], 2, 2).unwrap();
        assert!(res.t1_s.iter().all(|&v| v == 0.0));
        assert!(res.correlation.iter().all(|&v| v == 0.0));
        assert!(res.atom_index.iter().all(|&v| v == usize::MAX));
    }

    #[test]
    fn scaling_query_leaves_match_invariant_and_scales_pd() {
        let dict = compressed_dict();
        let t = dict.entry_len;
        let mut rng = crate::util::rng_for(2, "match", 1);
        let data: Vec<C64> = (0..t)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let x = Tsmi { n: 1, t, data: data.clone() };
        let res = dictionary_match(&x, &dict, &[true], 1, 1).unwrap();
        let c = C64::new(-0.7, 1.9);
        let x2 = Tsmi {
            n: 1,
            t,
            data: data.iter().map(|z| c * z).collect(),
        };
        let res2 = dictionary_match(&x2, &dict, &[true], 1, 1).unwrap();
        assert_eq!(res.atom_index[0], res2.atom_index[0]);
        let pd1 = C64::new(res.pd_re[0], res.pd_im[0]);
        let pd2 = C64::new(res2.pd_re[0], res2.pd_im[0]);
        assert!((pd2 - c * pd1).norm() < 1e-12 * (1.0 + pd2.norm()));
        assert!((res.correlation[0] - res2.correlation[0]).abs() < 1e-12);
    }

    #[test]
    fn out_of_mask_voxels_are_zeroed() {
        let dict = compressed_dict();
        let t = dict.entry_len;
        let mut rng = crate::util::rng_for(3, "match", 2);
        let data: Vec<C64> = (0..2 * t)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let x = Tsmi { n: 2, t, data };
        let res = dictionary_match(&x, &dict, &[true, false], 2, 1).unwrap();
        assert!(res.atom_index[0] != usize::MAX);
        assert_eq!(res.atom_index[1], usize::MAX);
        assert_eq!(res.t1_s[1], 0.0);
    }

    #[test]
    fn uncompressed_dictionary_is_rejected() {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(10);
        let dict = build_dictionary::<f64>(
            &sched,
            &GridSpec {
                n_t1: 3,
                n_t2: 3,
                ..Default::default()
            },
            8,
        )
        .unwrap();
        let x = Tsmi {
            n: 1,
            t: 10,
            data: vec![C64::new(1.0, 0.0); 10],
        };
        assert!(dictionary_match(&x, &dict, &[true], 1, 1).is_err());
    }
}

//! The spatial transform group: vertical flips combined with quarter-turn
//! rotations. Every transform is a pure pixel-index permutation (no
//! interpolation), so composing one with its inverse is bit-exact identity.
//! The seven non-identity transforms plus identity form the dihedral group
//! of the square.

use crate::error::{Error, Result};
use std::sync::Arc;

/// Gather permutation on the H x W grid: out[i] = in[perm[i]].
#[derive(Clone, Debug)]
pub struct SpatialTransform {
    /// 0 is identity; 1..=7 follow the fixed catalog order (vertical flip,
    /// the three quarter-turn rotations, and their flip combinations).
    pub id: u8,
    pub h: usize,
    pub w: usize,
    pub perm: Arc<Vec<u32>>,
}

fn identity_perm(h: usize, w: usize) -> Vec<u32> {
    (0..(h * w) as u32).collect()
}

fn vflip_perm(h: usize, w: usize) -> Vec<u32> {
    let mut p = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            p[r * w + c] = ((h - 1 - r) * w + c) as u32;
        }
    }
    p
}

/// Quarter-turn rotation (counterclockwise) on a square grid.
fn rot90_perm(n: usize) -> Vec<u32> {
    let mut p = vec![0u32; n * n];
    for r in 0..n {
        for c in 0..n {
            p[r * n + c] = (c * n + (n - 1 - r)) as u32;
        }
    }
    p
}

/// first(.) then second(.): out[i] = in[first[second[i]]].
fn compose_perms(second: &[u32], first: &[u32]) -> Vec<u32> {
    second.iter().map(|&i| first[i as usize]).collect()
}

fn invert_perm(p: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j as usize] = i as u32;
    }
    inv
}

impl SpatialTransform {
    pub fn identity(h: usize, w: usize) -> Self {
        SpatialTransform {
            id: 0,
            h,
            w,
            perm: Arc::new(identity_perm(h, w)),
        }
    }

    pub fn inverse(&self) -> SpatialTransform {
        SpatialTransform {
            id: self.id,
            h: self.h,
            w: self.w,
            perm: Arc::new(invert_perm(&self.perm)),
        }
    }

    /// self applied after `first`.
    pub fn compose(&self, first: &SpatialTransform) -> Vec<u32> {
        compose_perms(&self.perm, &first.perm)
    }

    /// Channel-wise application to a [C, H*W] image.
    pub fn apply(&self, img: &[f64], channels: usize) -> Vec<f64> {
        let hw = self.h * self.w;
        assert_eq!(img.len(), channels * hw);
        let mut out = vec![0.0; img.len()];
        for c in 0..channels {
            let src = &img[c * hw..(c + 1) * hw];
            let dst = &mut out[c * hw..(c + 1) * hw];
            for (i, &p) in self.perm.iter().enumerate() {
                dst[i] = src[p as usize];
            }
        }
        out
    }

    pub fn apply_mask(&self, mask: &[bool]) -> Vec<bool> {
        self.perm.iter().map(|&p| mask[p as usize]).collect()
    }
}

/// The seven non-identity transforms, in catalog order:
/// 1 vertical flip, 2 rot90, 3 flip+rot90, 4 rot180, 5 flip+rot180,
/// 6 rot270, 7 flip+rot270. Flip combinations apply the flip first.
/// Quarter-turn rotations need a square grid.
pub fn dihedral_transforms(h: usize, w: usize) -> Result<Vec<SpatialTransform>> {
    if h != w {
        return Err(Error::Config(format!(
            "quarter-turn rotations need a square grid, got {h}x{w}"
        )));
    }
    let flip = vflip_perm(h, w);
    let r90 = rot90_perm(h);
    let r180 = compose_perms(&r90, &r90);
    let r270 = compose_perms(&r180, &r90);
    let perms = vec![
        flip.clone(),
        r90.clone(),
        compose_perms(&r90, &flip),
        r180.clone(),
        compose_perms(&r180, &flip),
        r270.clone(),
        compose_perms(&r270, &flip),
    ];
    Ok(perms
        .into_iter()
        .enumerate()
        .map(|(i, perm)| SpatialTransform {
            id: (i + 1) as u8,
            h,
            w,
            perm: Arc::new(perm),
        })
        .collect())
}

/// Draw `count` distinct transforms from the seven (identity never drawn).
pub fn sample_transforms(
    all: &[SpatialTransform],
    count: usize,
    rng: &mut impl rand::Rng,
) -> Vec<SpatialTransform> {
    assert!(count <= all.len());
    let mut idx: Vec<usize> = (0..all.len()).collect();
    // Partial Fisher-Yates: the first `count` positions become the draw.
    for i in 0..count {
        let j = rng.gen_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..count].iter().map(|&i| all[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn all_seven_are_permutations() {
        let ts = dihedral_transforms(6, 6).unwrap();
        assert_eq!(ts.len(), 7);
        for t in &ts {
            let seen: HashSet<u32> = t.perm.iter().copied().collect();
            assert_eq!(seen.len(), 36);
        }
    }

    #[test]
    fn flip_and_rot180_are_involutions() {
        let ts = dihedral_transforms(8, 8).unwrap();
        let img: Vec<f64> = (0..64).map(|i| i as f64).collect();
        for id in [1usize, 4] {
            let t = &ts[id - 1];
            let twice = t.apply(&t.apply(&img, 1), 1);
            assert_eq!(twice, img, "transform {id} twice");
        }
    }

    #[test]
    fn inverse_composes_to_identity_bit_exact() {
        let ts = dihedral_transforms(8, 8).unwrap();
        let img: Vec<f64> = (0..2 * 64).map(|i| (i as f64) * 0.37).collect();
        for t in &ts {
            let back = t.inverse().apply(&t.apply(&img, 2), 2);
            assert_eq!(back, img);
        }
    }

    #[test]
    fn group_closes_under_composition() {
        // Brute-force: the 8 permutations (identity + 7) composed pairwise
        // always land back in the set.
        let ts = dihedral_transforms(4, 4).unwrap();
        let mut perms: Vec<Vec<u32>> = vec![identity_perm(4, 4)];
        perms.extend(ts.iter().map(|t| t.perm.as_ref().clone()));
        for a in &perms {
            for b in &perms {
                let c = compose_perms(a, b);
                assert!(perms.iter().any(|p| *p == c), "composition left the group");
            }
        }
        // All 8 elements are distinct: it is the full dihedral group.
        let unique: HashSet<Vec<u32>> = perms.iter().cloned().collect();
        assert_eq!(unique.len(), 8);
    }

    #[test]
    fn sampling_never_draws_identity_and_is_distinct() {
        let ts = dihedral_transforms(4, 4).unwrap();
        let mut rng = crate::util::rng_for(1, "transforms", 0);
        for _ in 0..50 {
            let draw = sample_transforms(&ts, 3, &mut rng);
            let ids: HashSet<u8> = draw.iter().map(|t| t.id).collect();
            assert_eq!(ids.len(), 3);
            assert!(!ids.contains(&0));
        }
    }

    #[test]
    fn rotations_reject_non_square_grids() {
        assert!(dihedral_transforms(4, 6).is_err());
    }
}

//! Seeding, determinism control, and small shared helpers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

/// When set, kernels that would otherwise fan out over rayon run
/// sequentially. Parallel kernels are written to be reproducible anyway
/// (fixed work partitioning, fixed reduction order); the flag removes even
/// the thread scheduler from the picture.
pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-seed from a master seed, a purpose tag, and an
/// index. Separate streams keep e.g. batch shuffling independent of
/// transform sampling, so disabling one consumer does not shift the others.
pub fn mix_seed(seed: u64, tag: &str, index: u64) -> u64 {
    // FNV-1a over the tag, then splitmix to decorrelate.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h ^ splitmix64(index)))
}

pub fn rng_for(seed: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix_seed(seed, tag, index))
}

/// Median of a sample (average of the two middle elements for even n).
pub fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty(), "median of empty sample");
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Run `f` over mutable chunks of `data`, in parallel unless the determinism
/// flag is set. Chunking is fixed by `chunk`, so results do not depend on
/// the thread count.
pub fn par_chunks_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    if deterministic() {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    } else {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Map `0..n` to a vector, in parallel unless the determinism flag is set.
/// Output order is by index either way.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if deterministic() {
        (0..n).map(f).collect()
    } else {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_streams_differ() {
        let a = mix_seed(7, "shuffle", 0);
        let b = mix_seed(7, "transforms", 0);
        let c = mix_seed(7, "shuffle", 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, mix_seed(7, "shuffle", 0));
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn par_map_matches_seq() {
        let p = par_map(100, |i| i * i);
        let s: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(p, s);
    }
}

//! SVD temporal subspace: fit the top-t right singular vectors of the
//! dictionary and move fingerprints between the length-T time domain and the
//! length-t subspace.
//!
//! The right singular vectors come from an eigen-decomposition of the T x T
//! Gram matrix rather than a full SVD of the N x T atom matrix (N is much
//! larger than T at scale). Caveat: squaring the spectrum halves the
//! attainable relative accuracy of small singular values; for subspace
//! selection only the leading ones matter.

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{cgemm, hermitian_eig_desc, COp, SplitMat};
use crate::scalar::Real;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// T x t matrix with orthonormal columns, ordered by descending singular
/// value. `rank` counts the numerically significant singular values; any
/// columns past it are an orthonormal completion, not data.
#[derive(Clone, Debug)]
pub struct TemporalBasis<F: Real> {
    /// Row-major T x t.
    pub v: Vec<Complex<F>>,
    pub t_full: usize,
    pub t: usize,
    pub singular_values: Vec<F>,
    pub rank: usize,
    pub content_hash: String,
}

#[derive(Serialize, Deserialize)]
struct BasisSidecar {
    t_full: usize,
    t: usize,
    rank: usize,
    singular_values: Vec<f64>,
    dictionary_hash: Option<String>,
}

fn hash_columns<F: Real>(v: &[Complex<F>]) -> String {
    let flat: Vec<f64> = v.iter().flat_map(|z| [z.re.as_f64(), z.im.as_f64()]).collect();
    crate::io::hash_f64s(&flat)
}

/// Phase-normalize each column so its largest-magnitude entry is real and
/// positive (ties broken by lowest row index), making fits reproducible.
fn normalize_column_phases<F: Real>(v: &mut [Complex<F>], t_full: usize, t: usize) {
    for j in 0..t {
        let mut best = 0usize;
        let mut best_mag = F::neg_infinity();
        for i in 0..t_full {
            let m = v[i * t + j].norm_sqr();
            if m > best_mag {
                best_mag = m;
                best = i;
            }
        }
        let z = v[best * t + j];
        let mag = z.norm();
        if mag > F::zero() {
            let phase = z.unscale(mag).conj();
            for i in 0..t_full {
                v[i * t + j] *= phase;
            }
        }
    }
}

impl<F: Real> TemporalBasis<F> {
    /// Identity basis (t = T); useful for fully sampled sanity checks.
    pub fn identity(t_full: usize) -> Self {
        let mut v = vec![Complex::new(F::zero(), F::zero()); t_full * t_full];
        for i in 0..t_full {
            v[i * t_full + i] = Complex::new(F::one(), F::zero());
        }
        let content_hash = hash_columns(&v);
        TemporalBasis {
            v,
            t_full,
            t: t_full,
            singular_values: vec![F::one(); t_full],
            rank: t_full,
            content_hash,
        }
    }

    /// Wrap explicit columns, verifying orthonormality.
    pub fn from_columns(v: Vec<Complex<F>>, t_full: usize, t: usize) -> Result<Self> {
        if v.len() != t_full * t {
            return Err(Error::shape(
                "basis from_columns",
                format!("{} values for {t_full} x {t}", v.len()),
            ));
        }
        let b = TemporalBasis {
            content_hash: hash_columns(&v),
            v,
            t_full,
            t,
            singular_values: Vec::new(),
            rank: t,
        };
        let err = b.orthonormality_error();
        if err.as_f64() > 1e-10 {
            return Err(Error::Numerical(format!(
                "basis columns are not orthonormal (defect {err})"
            )));
        }
        Ok(b)
    }

    /// max |V^H V - I|.
    pub fn orthonormality_error(&self) -> F {
        let mut worst = F::zero();
        for a in 0..self.t {
            for b in 0..self.t {
                let mut dot = Complex::new(F::zero(), F::zero());
                for i in 0..self.t_full {
                    dot += self.v[i * self.t + a].conj() * self.v[i * self.t + b];
                }
                let want = if a == b { F::one() } else { F::zero() };
                worst = worst.max((dot - Complex::new(want, F::zero())).norm());
            }
        }
        worst
    }

    /// X (n x T) -> X V (n x t).
    pub fn compress_rows(&self, x: &[Complex<F>], n: usize) -> Result<Vec<Complex<F>>> {
        if x.len() != n * self.t_full {
            return Err(Error::shape(
                "compress",
                format!("{} values for {n} x {}", x.len(), self.t_full),
            ));
        }
        let xs = SplitMat::from_complex(x, n, self.t_full);
        let vs = SplitMat::from_complex(&self.v, self.t_full, self.t);
        Ok(cgemm(&xs, COp::None, &vs, COp::None).to_complex())
    }

    /// X (n x t) -> X V^H (n x T); the adjoint of `compress_rows`.
    pub fn decompress_rows(&self, x: &[Complex<F>], n: usize) -> Result<Vec<Complex<F>>> {
        if x.len() != n * self.t {
            return Err(Error::shape(
                "decompress",
                format!("{} values for {n} x {}", x.len(), self.t),
            ));
        }
        let xs = SplitMat::from_complex(x, n, self.t);
        let vs = SplitMat::from_complex(&self.v, self.t_full, self.t);
        Ok(cgemm(&xs, COp::None, &vs, COp::Hermitian).to_complex())
    }

    pub fn compress_series(&self, x: &[Complex<F>]) -> Result<Vec<Complex<F>>> {
        self.compress_rows(x, 1)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let v64: Vec<num_complex::Complex<f64>> = self
            .v
            .iter()
            .map(|z| num_complex::Complex::new(z.re.as_f64(), z.im.as_f64()))
            .collect();
        crate::io::write_complex(&base.with_extension("bin"), &v64)?;
        let side = BasisSidecar {
            t_full: self.t_full,
            t: self.t,
            rank: self.rank,
            singular_values: self.singular_values.iter().map(|s| s.as_f64()).collect(),
            dictionary_hash: None,
        };
        crate::io::write_json(&base.with_extension("json"), &side)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let side: BasisSidecar = crate::io::read_json(&base.with_extension("json"))?;
        let v64 = crate::io::read_complex(&base.with_extension("bin"))?;
        if v64.len() != side.t_full * side.t {
            return Err(Error::Parse {
                path: base.display().to_string(),
                detail: "basis sidecar disagrees with binary size".into(),
            });
        }
        let v: Vec<Complex<F>> = v64
            .iter()
            .map(|z| Complex::new(F::of_f64(z.re), F::of_f64(z.im)))
            .collect();
        Ok(TemporalBasis {
            content_hash: hash_columns(&v),
            v,
            t_full: side.t_full,
            t: side.t,
            singular_values: side.singular_values.iter().map(|&s| F::of_f64(s)).collect(),
            rank: side.rank,
        })
    }
}

/// Top-t right singular vectors of the dictionary atom matrix.
pub fn fit_basis<F: Real>(dict: &Dictionary<F>, t: usize) -> Result<TemporalBasis<F>> {
    let t_full = dict.entry_len;
    if !(t > 3 && t < t_full) {
        return Err(Error::Config(format!(
            "subspace dimension must satisfy 3 < t < T, got t={t}, T={t_full}"
        )));
    }
    let n = dict.n_atoms();
    let a = SplitMat::from_complex(&dict.atoms, n, t_full);
    let gram = cgemm(&a, COp::Hermitian, &a, COp::None).to_complex();
    let (eigvals, eigvecs) = hermitian_eig_desc(&gram, t_full)?;

    let n_sv = n.min(t_full);
    let singular_values: Vec<F> = eigvals
        .iter()
        .take(n_sv)
        .map(|&l| l.max(F::zero()).sqrt())
        .collect();
    let sv_max = singular_values.first().copied().unwrap_or(F::zero());
    let thresh = sv_max * F::of_f64(1e-12);
    let rank_full = singular_values.iter().filter(|&&s| s > thresh).count();
    let rank = rank_full.min(t);
    if rank < t {
        log::warn!(
            "dictionary rank {rank_full} is below requested subspace dimension {t}; \
             columns {rank}.. are an orthonormal completion"
        );
    }

    let mut v = vec![Complex::new(F::zero(), F::zero()); t_full * t];
    for i in 0..t_full {
        for j in 0..t {
            v[i * t + j] = eigvecs[i * t_full + j];
        }
    }
    normalize_column_phases(&mut v, t_full, t);
    Ok(TemporalBasis {
        content_hash: hash_columns(&v),
        v,
        t_full,
        t,
        singular_values,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, GridSpec};
    use crate::epg::default_flip_schedule;
    use num_complex::Complex;

    fn small_dict() -> Dictionary<f64> {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(24);
        let spec = GridSpec {
            n_t1: 12,
            n_t2: 8,
            ..Default::default()
        };
        build_dictionary(&sched, &spec, 12).unwrap()
    }

    #[test]
    fn basis_is_orthonormal_and_ordered() {
        let dict = small_dict();
        let basis = fit_basis(&dict, 6).unwrap();
        assert!(basis.orthonormality_error() < 1e-10);
        for w in basis.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert_eq!(basis.t, 6);
        assert_eq!(basis.t_full, 24);
    }

    #[test]
    fn t_out_of_range_is_rejected() {
        let dict = small_dict();
        assert!(fit_basis(&dict, 3).is_err());
        assert!(fit_basis(&dict, 24).is_err());
    }

    #[test]
    fn rank_deficient_dictionary_is_flagged() {
        // One atom: rank 1, requested t = 4 -> completion columns.
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(16);
        let spec = GridSpec {
            n_t1: 1,
            n_t2: 1,
            t1_range: (0.8, 0.8),
            t2_range: (0.07, 0.07),
            ..Default::default()
        };
        let dict: Dictionary<f64> = build_dictionary(&sched, &spec, 8).unwrap();
        let basis = fit_basis(&dict, 4).unwrap();
        assert_eq!(basis.rank, 1);
        assert!(basis.orthonormality_error() < 1e-10);
    }

    #[test]
    fn compress_zero_is_zero_and_subspace_roundtrip_holds() {
        let dict = small_dict();
        let basis = fit_basis(&dict, 5).unwrap();
        let zero = vec![Complex::new(0.0, 0.0); basis.t_full];
        let c = basis.compress_series(&zero).unwrap();
        assert!(c.iter().all(|z| z.norm() == 0.0));

        // Any z already in the subspace: compress(decompress(z)) == z.
        let mut rng = crate::util::rng_for(5, "subspace", 0);
        use rand::Rng;
        let z: Vec<Complex<f64>> = (0..basis.t)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let up = basis.decompress_rows(&z, 1).unwrap();
        let back = basis.compress_rows(&up, 1).unwrap();
        for (a, b) in z.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent_and_contracts() {
        let dict = small_dict();
        let basis = fit_basis(&dict, 5).unwrap();
        let mut rng = crate::util::rng_for(6, "subspace", 1);
        use rand::Rng;
        let a: Vec<Complex<f64>> = (0..basis.t_full)
            .map(|_| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let ca = basis.compress_rows(&a, 1).unwrap();
        let na: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nca: f64 = ca.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(nca <= na + 1e-12);

        let once = basis.decompress_rows(&ca, 1).unwrap();
        let twice = basis
            .decompress_rows(&basis.compress_rows(&once, 1).unwrap(), 1)
            .unwrap();
        for (x, y) in once.iter().zip(&twice) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn retained_energy_grows_with_t() {
        let dict = small_dict();
        let b4 = fit_basis(&dict, 4).unwrap();
        let b8 = fit_basis(&dict, 8).unwrap();
        let energy = |b: &TemporalBasis<f64>| {
            let c = b.compress_rows(&dict.atoms, dict.n_atoms()).unwrap();
            c.iter().map(|z| z.norm_sqr()).sum::<f64>()
        };
        assert!(energy(&b8) >= energy(&b4) - 1e-9);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join("mrfkit-basis-test");
        std::fs::create_dir_all(&dir).unwrap();
        let dict = small_dict();
        let basis = fit_basis(&dict, 5).unwrap();
        let base = dir.join("basis");
        basis.save(&base).unwrap();
        let loaded: TemporalBasis<f64> = TemporalBasis::load(&base).unwrap();
        assert_eq!(loaded.content_hash, basis.content_hash);
        assert_eq!(loaded.t, basis.t);
        assert_eq!(loaded.rank, basis.rank);
    }
}

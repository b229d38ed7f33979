//! Fingerprint dictionaries over logarithmically sampled (T1, T2) grids.

use crate::epg::{epg_fisp, SequenceSchedule};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::subspace::TemporalBasis;
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_N_STATES: usize = 32;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub t1_range: (f64, f64),
    pub t2_range: (f64, f64),
    pub n_t1: usize,
    pub n_t2: usize,
    /// Drop grid pairs with T2 > T1 when set.
    pub require_t2_le_t1: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t1_range: (0.01, 6.0),
            t2_range: (0.004, 4.0),
            n_t1: 60,
            n_t2: 50,
            require_t2_le_t1: false,
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            // Pin the endpoints: exp(ln(x)) can land one ulp outside.
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

impl GridSpec {
    /// Grid pairs in row-major order: T1 outer, T2 inner.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let t1s = log_space(self.t1_range.0, self.t1_range.1, self.n_t1);
        let t2s = log_space(self.t2_range.0, self.t2_range.1, self.n_t2);
        let mut pts = Vec::with_capacity(self.n_t1 * self.n_t2);
        for &t1 in &t1s {
            for &t2 in &t2s {
                if self.require_t2_le_t1 && t2 > t1 {
                    continue;
                }
                pts.push((t1, t2));
            }
        }
        pts
    }

    pub fn contains(&self, t1: f64, t2: f64) -> bool {
        t1 >= self.t1_range.0
            && t1 <= self.t1_range.1
            && t2 >= self.t2_range.0
            && t2 <= self.t2_range.1
    }
}

/// Simulated fingerprints with their grid coordinates. `entry_len` is T for
/// a raw dictionary and t after subspace compression.
#[derive(Clone, Debug)]
pub struct Dictionary<F: Real> {
    pub atoms: Vec<Complex<F>>,
    pub entry_len: usize,
    pub grid: Vec<(f64, f64)>,
    /// Euclidean norms of the raw atoms.
    pub norms: Vec<F>,
    /// Unit-norm atoms cached for matching.
    pub unit_atoms: Vec<Complex<F>>,
    pub grid_spec: GridSpec,
    pub schedule_hash: String,
    /// Present once the dictionary has been compressed into a basis.
    pub basis_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct DictSidecar {
    n_atoms: usize,
    entry_len: usize,
    grid_spec: GridSpec,
    schedule_hash: String,
    basis_hash: Option<String>,
}

impl<F: Real> Dictionary<F> {
    pub fn n_atoms(&self) -> usize {
        self.grid.len()
    }

    pub fn atom(&self, i: usize) -> &[Complex<F>] {
        &self.atoms[i * self.entry_len..(i + 1) * self.entry_len]
    }

    pub fn unit_atom(&self, i: usize) -> &[Complex<F>] {
        &self.unit_atoms[i * self.entry_len..(i + 1) * self.entry_len]
    }

    fn from_atoms(
        atoms: Vec<Complex<F>>,
        entry_len: usize,
        grid: Vec<(f64, f64)>,
        grid_spec: GridSpec,
        schedule_hash: String,
        basis_hash: Option<String>,
    ) -> Self {
        // Zero atoms cannot be matched against; drop them here.
        let mut kept_atoms = Vec::with_capacity(atoms.len());
        let mut kept_grid = Vec::with_capacity(grid.len());
        let mut norms = Vec::with_capacity(grid.len());
        let mut unit_atoms = Vec::with_capacity(atoms.len());
        let mut dropped = 0usize;
        for (i, &pair) in grid.iter().enumerate() {
            let row = &atoms[i * entry_len..(i + 1) * entry_len];
            let n = row.iter().map(|z| z.norm_sqr()).sum::<F>().sqrt();
            if n == F::zero() {
                dropped += 1;
                continue;
            }
            kept_atoms.extend_from_slice(row);
            kept_grid.push(pair);
            norms.push(n);
            unit_atoms.extend(row.iter().map(|z| z.unscale(n)));
        }
        if dropped > 0 {
            log::warn!("dropped {dropped} zero atoms from dictionary");
        }
        Dictionary {
            atoms: kept_atoms,
            entry_len,
            grid: kept_grid,
            norms,
            unit_atoms,
            grid_spec,
            schedule_hash,
            basis_hash,
        }
    }

    /// Project every atom into a temporal basis. Grid and ordering are
    /// preserved; norms and unit atoms are recomputed in the subspace.
    pub fn compressed(&self, basis: &TemporalBasis<F>) -> Result<Dictionary<F>> {
        if self.basis_hash.is_some() {
            return Err(Error::Config("dictionary is already compressed".into()));
        }
        if basis.t_full != self.entry_len {
            return Err(Error::shape(
                "dictionary compress",
                format!("atoms length {} vs basis T {}", self.entry_len, basis.t_full),
            ));
        }
        let atoms = basis.compress_rows(&self.atoms, self.n_atoms())?;
        Ok(Dictionary::from_atoms(
            atoms,
            basis.t,
            self.grid.clone(),
            self.grid_spec,
            self.schedule_hash.clone(),
            Some(basis.content_hash.clone()),
        ))
    }

    /// Write `<base>.bin`, `<base>.grid.bin` and `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let side = DictSidecar {
            n_atoms: self.n_atoms(),
            entry_len: self.entry_len,
            grid_spec: self.grid_spec,
            schedule_hash: self.schedule_hash.clone(),
            basis_hash: self.basis_hash.clone(),
        };
        let atoms64: Vec<num_complex::Complex<f64>> = self
            .atoms
            .iter()
            .map(|z| num_complex::Complex::new(z.re.as_f64(), z.im.as_f64()))
            .collect();
        crate::io::write_complex(&base.with_extension("bin"), &atoms64)?;
        let mut grid_flat = Vec::with_capacity(self.grid.len() * 2);
        for &(a, b) in &self.grid {
            grid_flat.push(a);
            grid_flat.push(b);
        }
        crate::io::write_f64s(&base.with_extension("grid.bin"), &grid_flat)?;
        crate::io::write_json(&base.with_extension("json"), &side)?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Dictionary<F>> {
        let side: DictSidecar = crate::io::read_json(&base.with_extension("json"))?;
        let atoms64 = crate::io::read_complex(&base.with_extension("bin"))?;
        let grid_flat = crate::io::read_f64s(&base.with_extension("grid.bin"))?;
        if atoms64.len() != side.n_atoms * side.entry_len || grid_flat.len() != side.n_atoms * 2 {
            return Err(Error::Parse {
                path: base.display().to_string(),
                detail: "dictionary sidecar disagrees with binary sizes".into(),
            });
        }
        let atoms: Vec<Complex<F>> = atoms64
            .iter()
            .map(|z| Complex::new(F::of_f64(z.re), F::of_f64(z.im)))
            .collect();
        let grid: Vec<(f64, f64)> = grid_flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        Ok(Dictionary::from_atoms(
            atoms,
            side.entry_len,
            grid,
            side.grid_spec,
            side.schedule_hash,
            side.basis_hash,
        ))
    }

    pub fn content_hash(&self) -> String {
        let atoms64: Vec<f64> = self
            .atoms
            .iter()
            .flat_map(|z| [z.re.as_f64(), z.im.as_f64()])
            .collect();
        crate::io::hash_f64s(&atoms64)
    }
}

/// Simulate a fingerprint for every grid pair. Atom order follows
/// `GridSpec::points` (T1 outer, T2 inner).
pub fn build_dictionary<F: Real>(
    schedule: &SequenceSchedule,
    spec: &GridSpec,
    n_states: usize,
) -> Result<Dictionary<F>> {
    let pts = spec.points();
    if pts.is_empty() {
        return Err(Error::Config("empty dictionary grid".into()));
    }
    let t = schedule.len();
    let rows: Vec<Result<Vec<Complex<F>>>> = crate::util::par_map(pts.len(), |i| {
        let (t1, t2) = pts[i];
        epg_fisp(F::of_f64(t1), F::of_f64(t2), schedule, n_states).map(|f| f.signal)
    });
    let mut atoms = Vec::with_capacity(pts.len() * t);
    for row in rows {
        atoms.extend(row?);
    }
    Ok(Dictionary::from_atoms(
        atoms,
        t,
        pts,
        *spec,
        schedule.content_hash(),
        None,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epg::default_flip_schedule;

    #[test]
    fn single_pair_grid_matches_direct_simulation() {
        let sched = default_flip_schedule();
        let spec = GridSpec {
            n_t1: 1,
            n_t2: 1,
            t1_range: (0.8, 0.8),
            t2_range: (0.07, 0.07),
            ..Default::default()
        };
        let dict: Dictionary<f64> = build_dictionary(&sched, &spec, 16).unwrap();
        assert_eq!(dict.n_atoms(), 1);
        let f = epg_fisp(0.8f64, 0.07, &sched, 16).unwrap();
        for (a, b) in dict.atom(0).iter().zip(&f.signal) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn desk_grid_is_3000_finite_nonzero_atoms() {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(40); // cheap grid sweep
        let spec = GridSpec::default();
        let dict: Dictionary<f64> = build_dictionary(&sched, &spec, 12).unwrap();
        assert_eq!(dict.n_atoms(), 3000);
        assert!(dict.atoms.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        assert!(dict.norms.iter().all(|&n| n > 0.0));
        for (t1, t2) in &dict.grid {
            assert!((0.01..=6.0).contains(t1));
            assert!((0.004..=4.0).contains(t2));
        }
    }

    #[test]
    fn grid_is_log_spaced_row_major() {
        let spec = GridSpec {
            n_t1: 3,
            n_t2: 2,
            ..Default::default()
        };
        let pts = spec.points();
        assert_eq!(pts.len(), 6);
        // T1 outer: first two points share t1 = 0.01
        assert!((pts[0].0 - 0.01).abs() < 1e-12);
        assert!((pts[1].0 - 0.01).abs() < 1e-12);
        // log spacing: middle t1 is the geometric mean of the endpoints
        assert!((pts[2].0 - (0.01f64 * 6.0).sqrt()).abs() < 1e-9);
        assert!((pts[0].1 - 0.004).abs() < 1e-12);
        assert!((pts[1].1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn determinism_same_spec_same_atoms() {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(10);
        let spec = GridSpec {
            n_t1: 5,
            n_t2: 4,
            ..Default::default()
        };
        let a: Dictionary<f64> = build_dictionary(&sched, &spec, 8).unwrap();
        let b: Dictionary<f64> = build_dictionary(&sched, &spec, 8).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }
}

//! Retrospective dataset simulation: phantom QMaps -> TSMIs (exact EPG per
//! voxel) -> undersampled k-space, packaged into train/test splits. The
//! train split is self-supervised: k-space and head mask only.

use crate::acquisition::AcquisitionOperator;
use crate::epg::{epg_fisp, SequenceSchedule};
use crate::error::{Error, Result};
use crate::phantom::{make_brain_phantom, QMaps};
use crate::subspace::TemporalBasis;
use crate::masks::{make_mask, MaskPattern, SamplingMask};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub type Complex64 = Complex<f64>;

/// Complex time-series magnetisation image in the t-dimensional subspace:
/// (H*W) x t row-major.
#[derive(Clone, Debug)]
pub struct Tsmi {
    pub n: usize,
    pub t: usize,
    pub data: Vec<Complex64>,
}

/// Undersampled Fourier measurements, m x T row-major.
#[derive(Clone, Debug)]
pub struct KSpaceData {
    pub m: usize,
    pub t_frames: usize,
    pub samples: Vec<Complex64>,
    pub mask_ref: String,
}

/// Per-voxel Bloch response (exact EPG, not the surrogate) scaled by the
/// complex proton density, then compressed into the basis.
pub fn synthesize_tsmi(
    q: &QMaps,
    schedule: &SequenceSchedule,
    n_states: usize,
    basis: &TemporalBasis<f64>,
) -> Result<Tsmi> {
    let n = q.n();
    let voxels: Vec<usize> = (0..n).filter(|&v| q.head_mask[v]).collect();
    let rows: Vec<Result<Vec<Complex64>>> = crate::util::par_map(voxels.len(), |i| {
        let v = voxels[i];
        epg_fisp(q.t1_s[v], q.t2_s[v], schedule, n_states).map(|f| f.signal)
    });
    let mut series = Vec::with_capacity(voxels.len() * schedule.len());
    for row in rows {
        series.extend(row?);
    }
    let compressed = basis.compress_rows(&series, voxels.len())?;
    let t = basis.t;
    let mut data = vec![Complex64::new(0.0, 0.0); n * t];
    for (i, &v) in voxels.iter().enumerate() {
        let pd = Complex64::new(q.pd_re[v], q.pd_im[v]);
        for j in 0..t {
            data[v * t + j] = pd * compressed[i * t + j];
        }
    }
    Ok(Tsmi { n, t, data })
}

pub fn simulate_kspace(x: &Tsmi, op: &AcquisitionOperator<f64>) -> Result<KSpaceData> {
    let samples = op.forward(&x.data)?;
    Ok(KSpaceData {
        m: op.m(),
        t_frames: op.t_frames(),
        samples,
        mask_ref: op.mask_id(),
    })
}

/// One simulated slice. `truth` is present on the test split (and on train
/// only when ground truth was explicitly kept for supervised baselines).
#[derive(Clone, Debug)]
pub struct SliceRecord {
    pub kspace: KSpaceData,
    pub head_mask: Vec<bool>,
    pub truth: Option<QMaps>,
}

/// Reader view for self-supervised trainers: no ground-truth access.
#[derive(Clone, Copy)]
pub struct SelfSupervisedItem<'a> {
    pub kspace: &'a KSpaceData,
    pub head_mask: &'a [bool],
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub h: usize,
    pub w: usize,
    pub pattern: MaskPattern,
    pub m: usize,
    pub seed: u64,
    /// 3x3 in-mask smoothing of phantom T1/T2.
    pub smooth_phantom: bool,
    /// EPG states used when synthesizing TSMIs.
    pub n_states: usize,
    /// Store ground truth for the train split too (supervised baselines).
    pub keep_train_ground_truth: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 20,
            n_test: 5,
            h: 64,
            w: 64,
            pattern: MaskPattern::Spiral,
            m: 63,
            seed: 0,
            smooth_phantom: true,
            n_states: crate::dictionary::DEFAULT_N_STATES,
            keep_train_ground_truth: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MrfDataset {
    pub cfg: DatasetConfig,
    pub mask: SamplingMask,
    pub basis_hash: String,
    pub schedule_hash: String,
    pub train: Vec<SliceRecord>,
    pub test: Vec<SliceRecord>,
}

impl MrfDataset {
    pub fn train_items(&self) -> impl Iterator<Item = SelfSupervisedItem<'_>> {
        self.train.iter().map(|s| SelfSupervisedItem {
            kspace: &s.kspace,
            head_mask: &s.head_mask,
        })
    }

    pub fn train_ground_truth(&self, i: usize) -> Option<&QMaps> {
        self.train[i].truth.as_ref()
    }
}

/// Build phantoms, synthesize TSMIs and k-space for every slice. Slice
/// phantoms derive from (seed, slice index), so datasets are reproducible
/// and the test split differs from train.
pub fn build_dataset(
    cfg: &DatasetConfig,
    schedule: &SequenceSchedule,
    basis: &TemporalBasis<f64>,
    op: &AcquisitionOperator<f64>,
) -> Result<MrfDataset> {
    if cfg.n_train == 0 || cfg.n_test == 0 {
        return Err(Error::Config("dataset needs at least one slice per split".into()));
    }
    if op.h != cfg.h || op.w != cfg.w || op.m() != cfg.m {
        return Err(Error::shape(
            "build_dataset",
            format!(
                "operator grid {}x{} m={} vs config {}x{} m={}",
                op.h,
                op.w,
                op.m(),
                cfg.h,
                cfg.w,
                cfg.m
            ),
        ));
    }
    let make_slice = |slice_idx: u64, keep_truth: bool| -> Result<SliceRecord> {
        let q = make_brain_phantom(cfg.h, cfg.w, crate::util::mix_seed(cfg.seed, "slice", slice_idx), cfg.smooth_phantom);
        let x = synthesize_tsmi(&q, schedule, cfg.n_states, basis)?;
        let kspace = simulate_kspace(&x, op)?;
        Ok(SliceRecord {
            kspace,
            head_mask: q.head_mask.clone(),
            truth: keep_truth.then_some(q),
        })
    };
    let mut train = Vec::with_capacity(cfg.n_train);
    for i in 0..cfg.n_train {
        train.push(make_slice(i as u64, cfg.keep_train_ground_truth)?);
    }
    let mut test = Vec::with_capacity(cfg.n_test);
    for i in 0..cfg.n_test {
        test.push(make_slice((cfg.n_train + i) as u64, true)?);
    }
    Ok(MrfDataset {
        cfg: *cfg,
        mask: op.mask.clone(),
        basis_hash: basis.content_hash.clone(),
        schedule_hash: schedule.content_hash(),
        train,
        test,
    })
}

/// Convenience: build mask + operator + dataset from a config.
pub fn build_dataset_with_operator(
    cfg: &DatasetConfig,
    schedule: &SequenceSchedule,
    basis: &TemporalBasis<f64>,
) -> Result<(MrfDataset, AcquisitionOperator<f64>)> {
    let mask = make_mask(cfg.pattern, cfg.h, cfg.w, cfg.m, schedule.len())?;
    let op = AcquisitionOperator::new(mask, basis.clone())?;
    let ds = build_dataset(cfg, schedule, basis, &op)?;
    Ok((ds, op))
}

// ---- on-disk layout ----

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    cfg: DatasetConfig,
    basis_hash: String,
    schedule_hash: String,
    mask_id: String,
    t: usize,
    t_frames: usize,
    train_slices: Vec<String>,
    test_slices: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SliceManifest {
    m: usize,
    t_frames: usize,
    h: usize,
    w: usize,
    mask_ref: String,
    has_truth: bool,
}

fn save_slice(dir: &Path, s: &SliceRecord, h: usize, w: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_complex(&dir.join("kspace.bin"), &s.kspace.samples)?;
    let mask_bytes: Vec<u8> = s.head_mask.iter().map(|&b| b as u8).collect();
    std::fs::write(dir.join("head_mask.bin"), &mask_bytes)?;
    if let Some(q) = &s.truth {
        crate::io::write_f64s(&dir.join("t1.bin"), &q.t1_s)?;
        crate::io::write_f64s(&dir.join("t2.bin"), &q.t2_s)?;
        let pd: Vec<Complex64> = q
            .pd_re
            .iter()
            .zip(&q.pd_im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        crate::io::write_complex(&dir.join("pd.bin"), &pd)?;
    }
    crate::io::write_json(
        &dir.join("slice.json"),
        &SliceManifest {
            m: s.kspace.m,
            t_frames: s.kspace.t_frames,
            h,
            w,
            mask_ref: s.kspace.mask_ref.clone(),
            has_truth: s.truth.is_some(),
        },
    )?;
    Ok(())
}

fn load_slice(dir: &Path) -> Result<SliceRecord> {
    let man: SliceManifest = crate::io::read_json(&dir.join("slice.json"))?;
    let samples = crate::io::read_complex(&dir.join("kspace.bin"))?;
    if samples.len() != man.m * man.t_frames {
        return Err(Error::Parse {
            path: dir.display().to_string(),
            detail: "k-space size disagrees with slice manifest".into(),
        });
    }
    let mask_bytes = std::fs::read(dir.join("head_mask.bin"))?;
    let head_mask: Vec<bool> = mask_bytes.iter().map(|&b| b != 0).collect();
    let truth = if man.has_truth {
        let t1 = crate::io::read_f64s(&dir.join("t1.bin"))?;
        let t2 = crate::io::read_f64s(&dir.join("t2.bin"))?;
        let pd = crate::io::read_complex(&dir.join("pd.bin"))?;
        Some(QMaps {
            h: man.h,
            w: man.w,
            t1_s: t1,
            t2_s: t2,
            pd_re: pd.iter().map(|z| z.re).collect(),
            pd_im: pd.iter().map(|z| z.im).collect(),
            head_mask: head_mask.clone(),
        })
    } else {
        None
    };
    Ok(SliceRecord {
        kspace: KSpaceData {
            m: man.m,
            t_frames: man.t_frames,
            samples,
            mask_ref: man.mask_ref,
        },
        head_mask,
        truth,
    })
}

impl MrfDataset {
    /// Write the dataset directory: top-level manifest, mask, basis, and one
    /// directory per slice.
    pub fn save(&self, dir: &Path, basis: &TemporalBasis<f64>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.mask.save(&dir.join("mask"))?;
        basis.save(&dir.join("basis"))?;
        let mut train_slices = Vec::new();
        for (i, s) in self.train.iter().enumerate() {
            let name = format!("train/{i:03}");
            save_slice(&dir.join(&name), s, self.cfg.h, self.cfg.w)?;
            train_slices.push(name);
        }
        let mut test_slices = Vec::new();
        for (i, s) in self.test.iter().enumerate() {
            let name = format!("test/{i:03}");
            save_slice(&dir.join(&name), s, self.cfg.h, self.cfg.w)?;
            test_slices.push(name);
        }
        crate::io::write_json(
            &dir.join("manifest.json"),
            &DatasetManifest {
                cfg: self.cfg,
                basis_hash: self.basis_hash.clone(),
                schedule_hash: self.schedule_hash.clone(),
                mask_id: self.mask.id(),
                t: basis.t,
                t_frames: basis.t_full,
                train_slices,
                test_slices,
            },
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(MrfDataset, TemporalBasis<f64>)> {
        let man: DatasetManifest = crate::io::read_json(&dir.join("manifest.json"))?;
        let mask = SamplingMask::load(&dir.join("mask"))?;
        let basis: TemporalBasis<f64> = TemporalBasis::load(&dir.join("basis"))?;
        if basis.content_hash != man.basis_hash {
            return Err(Error::HashMismatch {
                kind: "basis",
                expected: man.basis_hash,
                got: basis.content_hash,
            });
        }
        let mut train = Vec::new();
        for name in &man.train_slices {
            train.push(load_slice(&dir.join(name))?);
        }
        let mut test = Vec::new();
        for name in &man.test_slices {
            test.push(load_slice(&dir.join(name))?);
        }
        Ok((
            MrfDataset {
                cfg: man.cfg,
                mask,
                basis_hash: man.basis_hash,
                schedule_hash: man.schedule_hash,
                train,
                test,
            },
            basis,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, GridSpec};
    use crate::epg::default_flip_schedule;
    use crate::subspace::fit_basis;

    fn small_setup() -> (SequenceSchedule, TemporalBasis<f64>) {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(30);
        let dict = build_dictionary::<f64>(
            &sched,
            &GridSpec {
                n_t1: 10,
                n_t2: 8,
                ..Default::default()
            },
            12,
        )
        .unwrap();
        let basis = fit_basis(&dict, 5).unwrap();
        (sched, basis)
    }

    #[test]
    fn pd_zero_voxels_give_zero_rows_and_pd_scaling_is_linear() {
        let (sched, basis) = small_setup();
        let mut q = make_brain_phantom(16, 16, 1, true);
        let x = synthesize_tsmi(&q, &sched, 12, &basis).unwrap();
        for v in 0..q.n() {
            if !q.head_mask[v] {
                assert!(x.data[v * x.t..(v + 1) * x.t].iter().all(|z| z.norm() == 0.0));
            }
        }
        // Doubling PD doubles the rows exactly.
        for v in 0..q.n() {
            q.pd_re[v] *= 2.0;
            q.pd_im[v] *= 2.0;
        }
        let x2 = synthesize_tsmi(&q, &sched, 12, &basis).unwrap();
        for (a, b) in x.data.iter().zip(&x2.data) {
            assert_eq!(a.re * 2.0, b.re);
            assert_eq!(a.im * 2.0, b.im);
        }
    }

    #[test]
    fn dataset_split_contract() {
        let (sched, basis) = small_setup();
        let cfg = DatasetConfig {
            n_train: 2,
            n_test: 1,
            h: 16,
            w: 16,
            m: 12,
            seed: 3,
            ..Default::default()
        };
        let (ds, _op) = build_dataset_with_operator(&cfg, &sched, &basis).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.test.len(), 1);
        assert!(ds.train.iter().all(|s| s.truth.is_none()));
        assert!(ds.test.iter().all(|s| s.truth.is_some()));
        // Self-supervised reader exposes only k-space + mask.
        for item in ds.train_items() {
            assert_eq!(item.kspace.samples.len(), 12 * sched.len());
            assert_eq!(item.head_mask.len(), 16 * 16);
        }
    }

    #[test]
    fn dataset_determinism_and_io_roundtrip() {
        let (sched, basis) = small_setup();
        let cfg = DatasetConfig {
            n_train: 1,
            n_test: 1,
            h: 16,
            w: 16,
            m: 10,
            seed: 9,
            ..Default::default()
        };
        let (a, _) = build_dataset_with_operator(&cfg, &sched, &basis).unwrap();
        let (b, _) = build_dataset_with_operator(&cfg, &sched, &basis).unwrap();
        assert_eq!(a.train[0].kspace.samples, b.train[0].kspace.samples);

        let dir = std::env::temp_dir().join("mrfkit-dataset-test");
        let _ = std::fs::remove_dir_all(&dir);
        a.save(&dir, &basis).unwrap();
        let (loaded, basis2) = MrfDataset::load(&dir).unwrap();
        assert_eq!(basis2.content_hash, basis.content_hash);
        assert_eq!(loaded.train[0].kspace.samples, a.train[0].kspace.samples);
        assert_eq!(loaded.test[0].truth.as_ref().unwrap().t1_s, a.test[0].truth.as_ref().unwrap().t1_s);
    }

    #[test]
    fn keep_train_ground_truth_flag() {
        let (sched, basis) = small_setup();
        let cfg = DatasetConfig {
            n_train: 1,
            n_test: 1,
            h: 16,
            w: 16,
            m: 10,
            seed: 2,
            keep_train_ground_truth: true,
            ..Default::default()
        };
        let (ds, _) = build_dataset_with_operator(&cfg, &sched, &basis).unwrap();
        assert!(ds.train_ground_truth(0).is_some());
    }
}

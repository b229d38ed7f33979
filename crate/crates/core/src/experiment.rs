//! Experiment orchestration: build dictionary, basis, surrogate, masks and
//! datasets, run the requested reconstruction methods, and report masked
//! per-map metrics averaged across test slices. Also the alpha sweep with
//! the metric-vote selection rule.

use crate::acquisition::AcquisitionOperator;
use crate::dataset::{build_dataset, DatasetConfig, MrfDataset};
use crate::dictionary::{build_dictionary, Dictionary, GridSpec};
use crate::epg::{default_flip_schedule, SequenceSchedule};
use crate::error::{Error, Result};
use crate::masks::{make_mask, MaskPattern};
use crate::matching::svd_mrf_reconstruct;
use crate::metrics::{map_metrics, MapMetrics, RANGE_PD, RANGE_T1, RANGE_T2};
use crate::subspace::{fit_basis, TemporalBasis};
use crate::surrogate::{train_surrogate, BlochSurrogate, SurrogateConfig};
use crate::train::{
    ei_to_qmaps, reconstruct_qmaps, train, EpochLoss, TrainConfig, TrainMode,
};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SvdMrf,
    Ei,
    Nlei,
    Supervised,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::SvdMrf => "svd-mrf",
            Method::Ei => "ei",
            Method::Nlei => "nlei",
            Method::Supervised => "supervised",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svd-mrf" => Ok(Method::SvdMrf),
            "ei" => Ok(Method::Ei),
            "nlei" => Ok(Method::Nlei),
            "supervised" => Ok(Method::Supervised),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Equivariance weights per method and pattern.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaTable {
    pub nlei_spiral: f64,
    pub nlei_epi: f64,
    pub ei_spiral: f64,
    pub ei_epi: f64,
}

impl Default for AlphaTable {
    /// Full-scale optima.
    fn default() -> Self {
        AlphaTable {
            nlei_spiral: 1e-8,
            nlei_epi: 1e-4,
            ei_spiral: 1e-5,
            ei_epi: 1e-2,
        }
    }
}

impl AlphaTable {
    pub fn get(&self, method: Method, pattern: MaskPattern) -> f64 {
        match (method, pattern) {
            (Method::Nlei, MaskPattern::Spiral) => self.nlei_spiral,
            (Method::Nlei, MaskPattern::Epi) => self.nlei_epi,
            (Method::Ei, MaskPattern::Spiral) => self.ei_spiral,
            (Method::Ei, MaskPattern::Epi) => self.ei_epi,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub size: usize,
    pub m: usize,
    pub t: usize,
    pub t_frames: usize,
    pub dict_n_t1: usize,
    pub dict_n_t2: usize,
    pub n_states: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub patterns: Vec<MaskPattern>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub n_transforms_per_iter: usize,
    pub alpha: AlphaTable,
    pub unet_depth: usize,
    pub unet_base: usize,
    pub surrogate_hidden: usize,
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub smooth_phantom: bool,
    pub expected_compression_ratio: Option<f64>,
    pub deterministic: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: 64x64, ~65:1 undersampling, 20/5 slices.
    fn default() -> Self {
        ExperimentConfig {
            size: 64,
            m: 63,
            t: 10,
            t_frames: 200,
            dict_n_t1: 60,
            dict_n_t2: 50,
            n_states: 32,
            n_train: 20,
            n_test: 5,
            patterns: vec![MaskPattern::Spiral, MaskPattern::Epi],
            methods: vec![Method::SvdMrf, Method::Ei, Method::Nlei, Method::Supervised],
            seed: 0,
            epochs: 150,
            batch_size: 2,
            lr: 5e-4,
            lr_drop_epoch: 100,
            lr_drop_factor: 10.0,
            weight_decay: 1e-8,
            n_transforms_per_iter: 3,
            alpha: AlphaTable {
                nlei_spiral: 1e-8,
                nlei_epi: 1e-8,
                ei_spiral: 1e-5,
                ei_epi: 1e-5,
            },
            unet_depth: 2,
            unet_base: 16,
            surrogate_hidden: 128,
            surrogate_epochs: 1200,
            surrogate_lr: 1e-3,
            smooth_phantom: true,
            expected_compression_ratio: None,
            deterministic: false,
            out_dir: None,
        }
    }
}

/// Full-scale acquisition geometry (224x224, m = 771, t = 10, T = 200) with
/// the published training protocol and alpha optima.
pub fn paper_scale_config() -> ExperimentConfig {
    ExperimentConfig {
        size: 224,
        m: 771,
        n_train: 105,
        n_test: 15,
        epochs: 1000,
        lr_drop_epoch: 300,
        alpha: AlphaTable::default(),
        surrogate_hidden: 300,
        surrogate_epochs: 2000,
        smooth_phantom: false,
        expected_compression_ratio: Some(65.0),
        ..Default::default()
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.patterns.is_empty() {
            return Err(Error::Config("need at least one method and one pattern".into()));
        }
        if self.t_frames > default_flip_schedule().len() {
            return Err(Error::Config(format!(
                "t_frames {} exceeds the built-in schedule length",
                self.t_frames
            )));
        }
        let n = (self.size * self.size) as f64;
        let ratio = n / self.m as f64;
        log::info!("spatial compression ratio n/m = {ratio:.2}");
        if let Some(expected) = self.expected_compression_ratio {
            if (ratio / expected - 1.0).abs() > 0.02 {
                return Err(Error::Config(format!(
                    "compression ratio {ratio:.2} disagrees with expected {expected:.2}"
                )));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> SequenceSchedule {
        let mut s = default_flip_schedule();
        s.flip_angles_deg.truncate(self.t_frames);
        s
    }

    pub fn content_hash(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

/// Per-map predictions for one test slice.
pub struct SliceEstimate {
    pub t1_s: Vec<f64>,
    pub t2_s: Vec<f64>,
    pub pd_mag: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QmapMetricRow {
    pub t1: MapMetrics,
    pub t2: MapMetrics,
    pub pd: MapMetrics,
}

#[derive(Serialize)]
pub struct MethodReport {
    pub method: Method,
    pub per_slice: Vec<QmapMetricRow>,
    pub mean: QmapMetricRow,
    pub loss_history: Option<Vec<EpochLoss>>,
}

#[derive(Serialize)]
pub struct PatternReport {
    pub pattern: MaskPattern,
    pub compression_ratio: f64,
    pub methods: Vec<MethodReport>,
}

#[derive(Serialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub patterns: Vec<PatternReport>,
}

impl ExperimentReport {
    pub fn method_mean(&self, pattern: MaskPattern, method: Method) -> Option<&QmapMetricRow> {
        self.patterns
            .iter()
            .find(|p| p.pattern == pattern)
            .and_then(|p| p.methods.iter().find(|m| m.method == method))
            .map(|m| &m.mean)
    }
}

fn mean_metrics(rows: &[QmapMetricRow]) -> QmapMetricRow {
    let n = rows.len() as f64;
    let avg = |pick: &dyn Fn(&QmapMetricRow) -> MapMetrics| {
        let mut acc = MapMetrics::default();
        for r in rows {
            let m = pick(r);
            acc.mae += m.mae;
            acc.mape += m.mape;
            acc.psnr += m.psnr;
            acc.ssim += m.ssim;
        }
        MapMetrics {
            mae: acc.mae / n,
            mape: acc.mape / n,
            psnr: acc.psnr / n,
            ssim: acc.ssim / n,
        }
    };
    QmapMetricRow {
        t1: avg(&|r| r.t1),
        t2: avg(&|r| r.t2),
        pd: avg(&|r| r.pd),
    }
}

fn evaluate_slices(
    ds: &MrfDataset,
    estimates: &[SliceEstimate],
    h: usize,
    w: usize,
) -> Result<Vec<QmapMetricRow>> {
    let mut rows = Vec::with_capacity(estimates.len());
    for (slice, est) in ds.test.iter().zip(estimates) {
        let truth = slice.truth.as_ref().expect("test slices carry ground truth");
        let mask = &truth.head_mask;
        rows.push(QmapMetricRow {
            t1: map_metrics(&est.t1_s, &truth.t1_s, mask, RANGE_T1, h, w)?,
            t2: map_metrics(&est.t2_s, &truth.t2_s, mask, RANGE_T2, h, w)?,
            pd: map_metrics(&est.pd_mag, &truth.pd_magnitude(), mask, RANGE_PD, h, w)?,
        });
    }
    Ok(rows)
}

pub struct PatternContext {
    pattern: MaskPattern,
    op: Arc<AcquisitionOperator<f64>>,
    ds: MrfDataset,
}

pub struct ExperimentContext {
    schedule: SequenceSchedule,
    dict_c: Dictionary<f64>,
    basis: TemporalBasis<f64>,
    surrogate: Option<BlochSurrogate>,
    domain: GridSpec,
}

fn build_context(cfg: &ExperimentConfig) -> Result<ExperimentContext> {
    let schedule = cfg.schedule();
    let grid = GridSpec {
        n_t1: cfg.dict_n_t1,
        n_t2: cfg.dict_n_t2,
        ..Default::default()
    };
    log::info!("building dictionary ({} x {} grid)", grid.n_t1, grid.n_t2);
    let dict = build_dictionary::<f64>(&schedule, &grid, cfg.n_states)?;
    let basis = fit_basis(&dict, cfg.t)?;
    let dict_c = dict.compressed(&basis)?;

    let needs_surrogate = cfg.methods.contains(&Method::Nlei);
    let surrogate = if needs_surrogate {
        log::info!(
            "training Bloch surrogate (hidden {}, {} epochs)",
            cfg.surrogate_hidden,
            cfg.surrogate_epochs
        );
        let (sur, fit) = train_surrogate(
            &dict_c,
            &SurrogateConfig {
                hidden: cfg.surrogate_hidden,
                epochs: cfg.surrogate_epochs,
                lr: cfg.surrogate_lr,
                seed: crate::util::mix_seed(cfg.seed, "surrogate", 0),
            },
        )?;
        log::info!("surrogate grid fit relative RMS: {fit:.4}");
        Some(sur)
    } else {
        None
    };
    Ok(ExperimentContext {
        schedule,
        dict_c,
        basis,
        surrogate,
        domain: grid,
    })
}

fn build_pattern(
    cfg: &ExperimentConfig,
    ctx: &ExperimentContext,
    pattern: MaskPattern,
) -> Result<PatternContext> {
    let mask = make_mask(pattern, cfg.size, cfg.size, cfg.m, cfg.t_frames)?;
    let op = Arc::new(AcquisitionOperator::new(mask, ctx.basis.clone())?);
    let ds_cfg = DatasetConfig {
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        h: cfg.size,
        w: cfg.size,
        pattern,
        m: cfg.m,
        seed: cfg.seed,
        smooth_phantom: cfg.smooth_phantom,
        n_states: cfg.n_states,
        keep_train_ground_truth: cfg.methods.contains(&Method::Supervised),
    };
    log::info!("simulating {pattern} dataset ({} train / {} test)", cfg.n_train, cfg.n_test);
    let ds = build_dataset(&ds_cfg, &ctx.schedule, &ctx.basis, &op)?;
    Ok(PatternContext { pattern, op, ds })
}

fn train_config_for(
    cfg: &ExperimentConfig,
    method: Method,
    pattern: MaskPattern,
    run_dir: Option<PathBuf>,
) -> TrainConfig {
    let mode = match method {
        Method::Nlei => TrainMode::Nlei,
        Method::Ei => TrainMode::Ei,
        Method::Supervised => TrainMode::Supervised,
        Method::SvdMrf => unreachable!("svd-mrf is not trained"),
    };
    TrainConfig {
        mode,
        alpha: cfg.alpha.get(method, pattern),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        lr_drop_epoch: cfg.lr_drop_epoch,
        lr_drop_factor: cfg.lr_drop_factor,
        weight_decay: cfg.weight_decay,
        n_transforms_per_iter: cfg.n_transforms_per_iter,
        seed: crate::util::mix_seed(cfg.seed, "train", (method as u64) << 8 | pattern as u64),
        stop_gradient_transform: false,
        unet_depth: cfg.unet_depth,
        unet_base: cfg.unet_base,
        run_dir,
        checkpoint_every: 0,
    }
}

/// Run one method on one pattern; returns per-slice estimates and the loss
/// history for trained methods.
pub fn run_method(
    cfg: &ExperimentConfig,
    ctx: &ExperimentContext,
    pc: &PatternContext,
    method: Method,
    run_dir: Option<PathBuf>,
) -> Result<(Vec<SliceEstimate>, Option<Vec<EpochLoss>>)> {
    match method {
        Method::SvdMrf => {
            let mut out = Vec::with_capacity(pc.ds.test.len());
            for slice in &pc.ds.test {
                let res = svd_mrf_reconstruct(&slice.kspace, &pc.op, &ctx.dict_c, &slice.head_mask)?;
                out.push(SliceEstimate {
                    t1_s: res.t1_s,
                    t2_s: res.t2_s,
                    pd_mag: res
                        .pd_re
                        .iter()
                        .zip(&res.pd_im)
                        .map(|(&r, &i)| (r * r + i * i).sqrt())
                        .collect(),
                });
            }
            Ok((out, None))
        }
        Method::Supervised | Method::Nlei => {
            let tc = train_config_for(cfg, method, pc.pattern, run_dir);
            let trained = train(&pc.ds, &tc, ctx.surrogate.as_ref(), &pc.op)?;
            let mut out = Vec::with_capacity(pc.ds.test.len());
            for slice in &pc.ds.test {
                let est = reconstruct_qmaps(
                    &trained.net,
                    trained.norm_const,
                    &slice.kspace,
                    &pc.op,
                    &ctx.domain,
                )?;
                out.push(SliceEstimate {
                    pd_mag: est.pd_magnitude(),
                    t1_s: est.t1_s,
                    t2_s: est.t2_s,
                });
            }
            Ok((out, Some(trained.history)))
        }
        Method::Ei => {
            let tc = train_config_for(cfg, method, pc.pattern, run_dir);
            let trained = train(&pc.ds, &tc, None, &pc.op)?;
            let mut out = Vec::with_capacity(pc.ds.test.len());
            for slice in &pc.ds.test {
                let res = ei_to_qmaps(
                    &trained.net,
                    trained.norm_const,
                    &slice.kspace,
                    &pc.op,
                    &ctx.dict_c,
                    &slice.head_mask,
                )?;
                out.push(SliceEstimate {
                    t1_s: res.t1_s,
                    t2_s: res.t2_s,
                    pd_mag: res
                        .pd_re
                        .iter()
                        .zip(&res.pd_im)
                        .map(|(&r, &i)| (r * r + i * i).sqrt())
                        .collect(),
                });
            }
            Ok((out, Some(trained.history)))
        }
    }
}

fn write_estimate_images(
    dir: &Path,
    est: &SliceEstimate,
    h: usize,
    w: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_pgm16(&dir.join("t1.pgm"), &est.t1_s, h, w, RANGE_T1)?;
    crate::io::write_pgm16(&dir.join("t2.pgm"), &est.t2_s, h, w, RANGE_T2)?;
    crate::io::write_pgm16(&dir.join("pd.pgm"), &est.pd_mag, h, w, RANGE_PD)?;
    crate::io::write_f64s(&dir.join("t1.bin"), &est.t1_s)?;
    crate::io::write_f64s(&dir.join("t2.bin"), &est.t2_s)?;
    crate::io::write_f64s(&dir.join("pd.bin"), &est.pd_mag)?;
    Ok(())
}

fn results_csv(methods: &[MethodReport]) -> String {
    let mut s = String::from(
        "method,t1_mae,t1_mape,t1_psnr,t1_ssim,t2_mae,t2_mape,t2_psnr,t2_ssim,pd_mae,pd_mape,pd_psnr,pd_ssim\n",
    );
    for m in methods {
        let r = &m.mean;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            m.method,
            r.t1.mae, r.t1.mape, r.t1.psnr, r.t1.ssim,
            r.t2.mae, r.t2.mape, r.t2.psnr, r.t2.ssim,
            r.pd.mae, r.pd.mape, r.pd.psnr, r.pd.ssim,
        ));
    }
    s
}

fn results_text(pattern: MaskPattern, methods: &[MethodReport]) -> String {
    let mut s = format!("pattern: {pattern}\n");
    s.push_str(&format!(
        "{:<12} {:>9} {:>9} {:>8} {:>7}   {:>9} {:>9} {:>8} {:>7}   {:>9} {:>9} {:>8} {:>7}\n",
        "method", "T1 MAE", "T1 MAPE%", "T1 PSNR", "T1 SSIM", "T2 MAE", "T2 MAPE%", "T2 PSNR",
        "T2 SSIM", "PD MAE", "PD MAPE%", "PD PSNR", "PD SSIM"
    ));
    for m in methods {
        let r = &m.mean;
        s.push_str(&format!(
            "{:<12} {:>9.4} {:>9.2} {:>8.2} {:>7.4}   {:>9.4} {:>9.2} {:>8.2} {:>7.4}   {:>9.4} {:>9.2} {:>8.2} {:>7.4}\n",
            m.method.to_string(),
            r.t1.mae, r.t1.mape, r.t1.psnr, r.t1.ssim,
            r.t2.mae, r.t2.mape, r.t2.psnr, r.t2.ssim,
            r.pd.mae, r.pd.mape, r.pd.psnr, r.pd.ssim,
        ));
    }
    s.push_str("MAPE excludes voxels with zero ground truth (none inside head masks by construction).\n");
    s
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.deterministic {
        crate::util::set_deterministic(true);
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        crate::io::write_json(&dir.join("config.json"), cfg)?;
    }
    let ctx = build_context(cfg)?;
    let (h, w) = (cfg.size, cfg.size);

    let mut patterns = Vec::new();
    for &pattern in &cfg.patterns {
        let pc = build_pattern(cfg, &ctx, pattern)?;
        let mut methods = Vec::new();
        for &method in &cfg.methods {
            log::info!("running {method} on {pattern}");
            let run_dir = cfg
                .out_dir
                .as_ref()
                .map(|d| d.join(pattern.to_string()).join(method.to_string()));
            let (estimates, losses) = run_method(cfg, &ctx, &pc, method, run_dir.clone())?;
            let per_slice = evaluate_slices(&pc.ds, &estimates, h, w)?;
            let mean = mean_metrics(&per_slice);
            if let Some(dir) = &run_dir {
                write_estimate_images(&dir.join("slice000"), &estimates[0], h, w)?;
            }
            methods.push(MethodReport {
                method,
                per_slice,
                mean,
                loss_history: losses,
            });
        }
        if let Some(dir) = &cfg.out_dir {
            let pdir = dir.join(pattern.to_string());
            std::fs::create_dir_all(&pdir)?;
            std::fs::write(pdir.join("results.csv"), results_csv(&methods))?;
            std::fs::write(pdir.join("results.txt"), results_text(pattern, &methods))?;
            // Ground truth images of the first test slice for reference.
            let truth = pc.ds.test[0].truth.as_ref().expect("test ground truth");
            write_estimate_images(
                &pdir.join("truth").join("slice000"),
                &SliceEstimate {
                    t1_s: truth.t1_s.clone(),
                    t2_s: truth.t2_s.clone(),
                    pd_mag: truth.pd_magnitude(),
                },
                h,
                w,
            )?;
        }
        patterns.push(PatternReport {
            pattern,
            compression_ratio: pc.op.compression_ratio(),
            methods,
        });
    }
    Ok(ExperimentReport {
        config_hash: cfg.content_hash(),
        patterns,
    })
}

// ---- alpha sweep ----

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Each metric averaged over the three maps (T1, T2, PD).
    pub mape: f64,
    pub mae: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Metric-vote selection: each metric votes for its best alpha (lower MAPE/
/// MAE, higher PSNR/SSIM); the alpha with the most votes wins, ties broken
/// by metric priority MAPE > MAE > PSNR > SSIM.
pub fn select_optimal_alpha(rows: &[AlphaRow]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Config("alpha sweep needs at least one row".into()));
    }
    let best_idx = |better: &dyn Fn(&AlphaRow, &AlphaRow) -> bool| {
        let mut best = 0usize;
        for i in 1..rows.len() {
            if better(&rows[i], &rows[best]) {
                best = i;
            }
        }
        best
    };
    // Priority order: MAPE, MAE, PSNR, SSIM.
    let picks = [
        best_idx(&|a, b| a.mape < b.mape),
        best_idx(&|a, b| a.mae < b.mae),
        best_idx(&|a, b| a.psnr > b.psnr),
        best_idx(&|a, b| a.ssim > b.ssim),
    ];
    let mut votes = vec![0usize; rows.len()];
    for &p in &picks {
        votes[p] += 1;
    }
    let top = *votes.iter().max().expect("nonempty");
    for &p in &picks {
        if votes[p] == top {
            return Ok(rows[p].alpha);
        }
    }
    unreachable!("some pick always carries the top vote count");
}

#[derive(Serialize)]
pub struct SweepReport {
    pub method: Method,
    pub pattern: MaskPattern,
    pub rows: Vec<AlphaRow>,
    pub optimal_alpha: f64,
}

/// Train one model per alpha on a shared dataset and seed; report the
/// averaged-QMaps metrics per alpha and the selected optimum.
pub fn alpha_sweep(
    cfg: &ExperimentConfig,
    method: Method,
    pattern: MaskPattern,
    alphas: &[f64],
) -> Result<SweepReport> {
    if alphas.is_empty() {
        return Err(Error::Config("alpha list must not be empty".into()));
    }
    if !matches!(method, Method::Nlei | Method::Ei) {
        return Err(Error::Config("alpha sweep applies to nlei or ei".into()));
    }
    cfg.validate()?;
    if cfg.deterministic {
        crate::util::set_deterministic(true);
    }
    let ctx = {
        let mut c = cfg.clone();
        c.methods = vec![method];
        if method == Method::Nlei {
            build_context(&c)?
        } else {
            build_context(&c)?
        }
    };
    let pc = build_pattern(cfg, &ctx, pattern)?;
    let (h, w) = (cfg.size, cfg.size);

    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        log::info!("alpha sweep: {method} {pattern} alpha={alpha:e}");
        let mut sub = cfg.clone();
        match (method, pattern) {
            (Method::Nlei, MaskPattern::Spiral) => sub.alpha.nlei_spiral = alpha,
            (Method::Nlei, MaskPattern::Epi) => sub.alpha.nlei_epi = alpha,
            (Method::Ei, MaskPattern::Spiral) => sub.alpha.ei_spiral = alpha,
            (Method::Ei, MaskPattern::Epi) => sub.alpha.ei_epi = alpha,
            _ => unreachable!(),
        }
        let (estimates, _) = run_method(&sub, &ctx, &pc, method, None)?;
        let per_slice = evaluate_slices(&pc.ds, &estimates, h, w)?;
        let mean = mean_metrics(&per_slice);
        rows.push(AlphaRow {
            alpha,
            mape: (mean.t1.mape + mean.t2.mape + mean.pd.mape) / 3.0,
            mae: (mean.t1.mae + mean.t2.mae + mean.pd.mae) / 3.0,
            psnr: (mean.t1.psnr + mean.t2.psnr + mean.pd.psnr) / 3.0,
            ssim: (mean.t1.ssim + mean.t2.ssim + mean.pd.ssim) / 3.0,
        });
    }
    let optimal = select_optimal_alpha(&rows)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        let mut csv = String::from("alpha,mape,mae,psnr,ssim\n");
        for r in &rows {
            csv.push_str(&format!("{},{},{},{},{}\n", r.alpha, r.mape, r.mae, r.psnr, r.ssim));
        }
        std::fs::write(dir.join(format!("alpha_sweep_{method}_{pattern}.csv")), csv)?;
    }
    Ok(SweepReport {
        method,
        pattern,
        rows,
        optimal_alpha: optimal,
    })
}

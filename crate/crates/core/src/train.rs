//! Reconstruction training: measurement consistency plus the transform
//! equivariance loss, in three flavors:
//!
//! - nlei: network maps backprojections to QMaps; the frozen Bloch surrogate
//!   and the acquisition operator re-predict k-space for both losses.
//! - ei: network maps backprojections to TSMIs; the surrogate drops out and
//!   the equivariance loss acts on transformed TSMIs directly.
//! - supervised: masked MSE against ground-truth QMaps (baseline).

use crate::acquisition::{
    as_adjoint_linear_op, as_linear_op, channels_to_tsmi, kspace_to_channels, tsmi_to_channels,
    AcquisitionOperator,
};
use crate::autodiff::{Graph, LinearOperator, TensorId};
use crate::dataset::{KSpaceData, MrfDataset, Tsmi};
use crate::dictionary::{Dictionary, GridSpec};
use crate::error::{Error, Result};
use crate::matching::{dictionary_match, MatchResult};
use crate::opt::{Adam, AdamConfig};
use crate::surrogate::BlochSurrogate;
use crate::transforms::{dihedral_transforms, sample_transforms, SpatialTransform};
use crate::unet::{OutputKind, ReconNetwork, UnetConfig};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Nlei,
    Ei,
    Supervised,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the equivariance term; 0 reduces training to measurement
    /// consistency only (the equivariance branch is skipped entirely).
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub weight_decay: f64,
    pub n_transforms_per_iter: usize,
    pub seed: u64,
    /// Detach the transformed maps in the equivariance loss (ablation); by
    /// default gradients flow through both network applications.
    pub stop_gradient_transform: bool,
    pub unet_depth: usize,
    pub unet_base: usize,
    /// When set, write config, per-epoch loss CSV, periodic checkpoints and
    /// a final manifest there.
    pub run_dir: Option<PathBuf>,
    /// Checkpoint cadence in epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Full-scale defaults: 1000 epochs, batch 2, Adam at 5e-4 dropping by
    /// 10x at epoch 300, weight decay 1e-8, 3 transforms per iteration.
    pub fn full_scale(mode: TrainMode, alpha: f64, seed: u64) -> Self {
        TrainConfig {
            mode,
            alpha,
            epochs: 1000,
            batch_size: 2,
            lr: 5e-4,
            lr_drop_epoch: 300,
            lr_drop_factor: 10.0,
            weight_decay: 1e-8,
            n_transforms_per_iter: 3,
            seed,
            stop_gradient_transform: false,
            unet_depth: 2,
            unet_base: 16,
            run_dir: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_mc: f64,
    pub l_ei: f64,
    pub total: f64,
}

pub struct TrainOutput {
    pub net: ReconNetwork,
    pub history: Vec<EpochLoss>,
    /// Dataset-level input normalization constant (median in-mask leading-
    /// channel backprojection magnitude over the train split).
    pub norm_const: f64,
}

/// Backprojected measurements as stacked real channels [2t, H, W].
pub fn backprojection_channels(
    y: &KSpaceData,
    op: &AcquisitionOperator<f64>,
) -> Result<Vec<f64>> {
    let x = op.backproject(&y.samples)?;
    Ok(tsmi_to_channels(&x, op.n(), op.t()))
}

fn compute_norm_const(bp: &[Vec<f64>], masks: &[&[bool]], n: usize, t: usize) -> f64 {
    let mut mags = Vec::new();
    for (ch, mask) in bp.iter().zip(masks) {
        for v in 0..n {
            if mask[v] {
                let re = ch[v];
                let im = ch[t * n + v];
                mags.push((re * re + im * im).sqrt());
            }
        }
    }
    if mags.is_empty() {
        return 1.0;
    }
    let med = crate::util::median(&mut mags);
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

struct StepLoss {
    mc: f64,
    ei: f64,
    total: f64,
}

#[allow(clippy::too_many_arguments)]
fn training_step(
    cfg: &TrainConfig,
    net: &mut ReconNetwork,
    surrogate: Option<&BlochSurrogate>,
    a_op: &Arc<LinearOperator<f64>>,
    ah_op: &Arc<LinearOperator<f64>>,
    transforms: &[SpatialTransform],
    transform_rng: &mut rand_chacha::ChaCha12Rng,
    adam: &mut Adam<f64>,
    x_in_vals: Vec<f64>,
    y_vals: Vec<f64>,
    gt_masked: Option<Vec<f64>>,
    mask4: Option<Vec<f64>>,
    b: usize,
    dims: (usize, usize, usize, usize, usize), // (t, h, w, m, t_frames)
    norm: f64,
) -> Result<StepLoss> {
    let (t, h, w, m, tf) = dims;
    let mut g = Graph::new();
    let x_in = g.constant(vec![b, 2 * t, h, w], x_in_vals);
    let ids = net.params.bind(&mut g, false);

    let out = net.forward(&mut g, &ids, x_in)?;

    let (l_mc, l_ei, total) = match cfg.mode {
        TrainMode::Supervised => {
            // Both sides are multiplied by the head mask, so the loss sees
            // in-mask voxels only and is exactly invariant to out-of-mask
            // ground-truth values.
            let gt = g.constant(
                vec![b, 4, h, w],
                gt_masked.expect("supervised step needs ground truth"),
            );
            let m4 = g.constant(
                vec![b, 4, h, w],
                mask4.expect("supervised step needs mask channels"),
            );
            let out_masked = g.mul_elementwise(out, m4)?;
            let loss = g.mse_loss(out_masked, gt)?;
            (loss, None, loss)
        }
        TrainMode::Nlei => {
            let sur = surrogate.expect("nlei step needs a surrogate");
            let sur_ids = sur.bind(&mut g);
            let x_mc = sur.apply(&mut g, &sur_ids, out)?;
            let y_mc = g.apply_linear(a_op.clone(), x_mc)?;
            let y_obs = g.constant(vec![b, 2, m, tf], y_vals);
            let l_mc = g.mse_loss(y_mc, y_obs)?;
            if cfg.alpha > 0.0 {
                let picks = sample_transforms(transforms, cfg.n_transforms_per_iter, transform_rng);
                let mut acc: Option<TensorId> = None;
                for tk in &picks {
                    let mut q_t = g.permute_pixels(out, tk.perm.clone())?;
                    if cfg.stop_gradient_transform {
                        q_t = g.detach(q_t);
                    }
                    let x_t = sur.apply(&mut g, &sur_ids, q_t)?;
                    let y_t = g.apply_linear(a_op.clone(), x_t)?;
                    let xb = g.apply_linear(ah_op.clone(), y_t)?;
                    let x_in_t = g.scale(xb, 1.0 / norm);
                    let q_ei = net.forward(&mut g, &ids, x_in_t)?;
                    let term = g.mse_loss(q_ei, q_t)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term)?,
                    });
                }
                let l_ei = g.scale(acc.expect("at least one transform"), 1.0 / picks.len() as f64);
                let scaled = g.scale(l_ei, cfg.alpha);
                let total = g.add(l_mc, scaled)?;
                (l_mc, Some(l_ei), total)
            } else {
                (l_mc, None, l_mc)
            }
        }
        TrainMode::Ei => {
            let x_hat = g.scale(out, norm);
            let y_mc = g.apply_linear(a_op.clone(), x_hat)?;
            let y_obs = g.constant(vec![b, 2, m, tf], y_vals);
            let l_mc = g.mse_loss(y_mc, y_obs)?;
            if cfg.alpha > 0.0 {
                let picks = sample_transforms(transforms, cfg.n_transforms_per_iter, transform_rng);
                let mut acc: Option<TensorId> = None;
                for tk in &picks {
                    let mut x_t = g.permute_pixels(x_hat, tk.perm.clone())?;
                    if cfg.stop_gradient_transform {
                        x_t = g.detach(x_t);
                    }
                    let y_t = g.apply_linear(a_op.clone(), x_t)?;
                    let xb = g.apply_linear(ah_op.clone(), y_t)?;
                    let x_in_t = g.scale(xb, 1.0 / norm);
                    let x_ei_n = net.forward(&mut g, &ids, x_in_t)?;
                    let x_ei = g.scale(x_ei_n, norm);
                    let term = g.mse_loss(x_ei, x_t)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => g.add(a, term)?,
                    });
                }
                let l_ei = g.scale(acc.expect("at least one transform"), 1.0 / picks.len() as f64);
                let scaled = g.scale(l_ei, cfg.alpha);
                let total = g.add(l_mc, scaled)?;
                (l_mc, Some(l_ei), total)
            } else {
                (l_mc, None, l_mc)
            }
        }
    };

    let mc_val = g.scalar_value(l_mc);
    let ei_val = l_ei.map(|id| g.scalar_value(id)).unwrap_or(0.0);
    let total_val = g.scalar_value(total);
    if !total_val.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss".into(),
        });
    }
    g.backward(total)?;
    let grads = net.params.collect_grads(&g, &ids);
    adam.step(&mut net.params, &grads)?;
    Ok(StepLoss {
        mc: mc_val,
        ei: ei_val,
        total: total_val,
    })
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config: &'a TrainConfig,
    mask_id: String,
    basis_hash: String,
    surrogate_hash: Option<String>,
    dataset_schedule_hash: String,
    norm_const: f64,
    final_checkpoint: String,
}

pub fn train(
    ds: &MrfDataset,
    cfg: &TrainConfig,
    surrogate: Option<&BlochSurrogate>,
    op: &Arc<AcquisitionOperator<f64>>,
) -> Result<TrainOutput> {
    let (h, w) = (op.h, op.w);
    let (n, t, m, tf) = (op.n(), op.t(), op.m(), op.t_frames());
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    match cfg.mode {
        TrainMode::Nlei => {
            let sur = surrogate
                .ok_or_else(|| Error::Config("nlei training needs a Bloch surrogate".into()))?;
            if !sur.frozen {
                return Err(Error::Config("surrogate must be frozen before nlei training".into()));
            }
            if sur.t != t {
                return Err(Error::shape(
                    "train",
                    format!("surrogate t {} vs operator t {t}", sur.t),
                ));
            }
            if sur.basis_hash != op.basis.content_hash {
                return Err(Error::HashMismatch {
                    kind: "basis",
                    expected: sur.basis_hash.clone(),
                    got: op.basis.content_hash.clone(),
                });
            }
        }
        TrainMode::Supervised => {
            if ds.train.iter().any(|s| s.truth.is_none()) {
                return Err(Error::Config(
                    "supervised training needs ground truth in the train split".into(),
                ));
            }
        }
        TrainMode::Ei => {}
    }

    // Fixed per-slice tensors; backprojection is the expensive part and the
    // measurements never change, so hoist all of it out of the loop.
    let n_train = ds.train.len();
    let mut bp = Vec::with_capacity(n_train);
    let mut ych = Vec::with_capacity(n_train);
    for s in &ds.train {
        bp.push(backprojection_channels(&s.kspace, op)?);
        ych.push(kspace_to_channels(&s.kspace.samples));
    }
    let masks: Vec<&[bool]> = ds.train.iter().map(|s| s.head_mask.as_slice()).collect();
    let norm = compute_norm_const(&bp, &masks, n, t);

    let gt_masked: Option<Vec<Vec<f64>>> = match cfg.mode {
        TrainMode::Supervised => Some(
            ds.train
                .iter()
                .map(|s| {
                    let q = s.truth.as_ref().expect("checked above");
                    let mut ch = q.to_channels();
                    for c in 0..4 {
                        for v in 0..n {
                            if !q.head_mask[v] {
                                ch[c * n + v] = 0.0;
                            }
                        }
                    }
                    ch
                })
                .collect(),
        ),
        _ => None,
    };
    // Head mask replicated over the 4 output channels, for masking the
    // supervised predictions inside the graph.
    let mask4_ch: Option<Vec<Vec<f64>>> = match cfg.mode {
        TrainMode::Supervised => Some(
            ds.train
                .iter()
                .map(|s| {
                    let one: Vec<f64> =
                        s.head_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
                    let mut ch = Vec::with_capacity(4 * one.len());
                    for _ in 0..4 {
                        ch.extend_from_slice(&one);
                    }
                    ch
                })
                .collect(),
        ),
        _ => None,
    };

    let out_ch = match cfg.mode {
        TrainMode::Nlei | TrainMode::Supervised => 4,
        TrainMode::Ei => 2 * t,
    };
    let kind = if out_ch == 4 { OutputKind::QMaps } else { OutputKind::Tsmi };
    let net_cfg = UnetConfig {
        in_ch: 2 * t,
        out_ch,
        depth: cfg.unet_depth,
        base: cfg.unet_base,
        final_zero_init: false,
        seed: crate::util::mix_seed(cfg.seed, "init", 0),
    };
    let mut net = ReconNetwork::new(net_cfg, kind);

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &net.params,
    );
    let transforms = dihedral_transforms(h, w)?;
    let a_op = Arc::new(as_linear_op(op.clone()));
    let ah_op = Arc::new(as_adjoint_linear_op(op.clone()));
    let mut shuffle_rng = crate::util::rng_for(cfg.seed, "shuffle", 0);
    let mut transform_rng = crate::util::rng_for(cfg.seed, "transforms", 0);

    if let Some(dir) = &cfg.run_dir {
        std::fs::create_dir_all(dir)?;
        crate::io::write_json(&dir.join("config.json"), cfg)?;
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = if epoch >= cfg.lr_drop_epoch {
            cfg.lr / cfg.lr_drop_factor
        } else {
            cfg.lr
        };
        adam.set_lr(lr);

        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut shuffle_rng);

        let (mut mc_acc, mut ei_acc, mut tot_acc, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut x_in = Vec::with_capacity(b * 2 * t * n);
            let mut yv = Vec::with_capacity(b * 2 * m * tf);
            for &i in batch {
                x_in.extend(bp[i].iter().map(|&v| v / norm));
                yv.extend_from_slice(&ych[i]);
            }
            let gather = |per_slice: &Vec<Vec<f64>>| {
                let mut out = Vec::with_capacity(b * per_slice[batch[0]].len());
                for &i in batch {
                    out.extend_from_slice(&per_slice[i]);
                }
                out
            };
            let gt = gt_masked.as_ref().map(&gather);
            let m4 = mask4_ch.as_ref().map(&gather);
            let losses = training_step(
                cfg,
                &mut net,
                surrogate,
                &a_op,
                &ah_op,
                &transforms,
                &mut transform_rng,
                &mut adam,
                x_in,
                yv,
                gt,
                m4,
                b,
                (t, h, w, m, tf),
                norm,
            )?;
            mc_acc += losses.mc;
            ei_acc += losses.ei;
            tot_acc += losses.total;
            steps += 1;
        }
        let e = EpochLoss {
            epoch,
            l_mc: mc_acc / steps as f64,
            l_ei: ei_acc / steps as f64,
            total: tot_acc / steps as f64,
        };
        history.push(e);

        if let Some(dir) = &cfg.run_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                net.params.save(&dir.join(format!("ck_epoch{:05}", epoch + 1)))?;
            }
        }
    }

    if let Some(dir) = &cfg.run_dir {
        let mut csv = String::from("epoch,l_mc,l_ei,total\n");
        for e in &history {
            csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.l_mc, e.l_ei, e.total));
        }
        std::fs::write(dir.join("loss.csv"), csv)?;
        net.params.save(&dir.join("final"))?;
        crate::io::write_json(
            &dir.join("manifest.json"),
            &RunManifest {
                config: cfg,
                mask_id: ds.mask.id(),
                basis_hash: ds.basis_hash.clone(),
                surrogate_hash: surrogate.map(|s| s.param_hash()),
                dataset_schedule_hash: ds.schedule_hash.clone(),
                norm_const: norm,
                final_checkpoint: "final".into(),
            },
        )?;
    }

    Ok(TrainOutput {
        net,
        history,
        norm_const: norm,
    })
}

/// Network QMaps estimate for one slice (no masking; evaluation applies
/// head masks).
#[derive(Clone, Debug)]
pub struct QmapsEstimate {
    pub h: usize,
    pub w: usize,
    pub t1_s: Vec<f64>,
    pub t2_s: Vec<f64>,
    pub pd_re: Vec<f64>,
    pub pd_im: Vec<f64>,
}

impl QmapsEstimate {
    pub fn pd_magnitude(&self) -> Vec<f64> {
        self.pd_re
            .iter()
            .zip(&self.pd_im)
            .map(|(&r, &i)| (r * r + i * i).sqrt())
            .collect()
    }
}

/// QMaps-mode inference: backproject, normalize, run the network, clamp
/// T1/T2 into the dictionary domain (inference only; never in the loss
/// path).
pub fn reconstruct_qmaps(
    net: &ReconNetwork,
    norm: f64,
    y: &KSpaceData,
    op: &AcquisitionOperator<f64>,
    domain: &GridSpec,
) -> Result<QmapsEstimate> {
    if net.mode != OutputKind::QMaps {
        return Err(Error::Config("network does not output quantitative maps".into()));
    }
    let (h, w, n) = (op.h, op.w, op.n());
    let mut ch = backprojection_channels(y, op)?;
    for v in ch.iter_mut() {
        *v /= norm;
    }
    let out = net.infer(&ch, 1, h, w)?;
    let mut t1 = out[0..n].to_vec();
    let mut t2 = out[n..2 * n].to_vec();
    for v in t1.iter_mut() {
        *v = v.clamp(domain.t1_range.0, domain.t1_range.1);
    }
    for v in t2.iter_mut() {
        *v = v.clamp(domain.t2_range.0, domain.t2_range.1);
    }
    Ok(QmapsEstimate {
        h,
        w,
        t1_s: t1,
        t2_s: t2,
        pd_re: out[2 * n..3 * n].to_vec(),
        pd_im: out[3 * n..4 * n].to_vec(),
    })
}

/// TSMI-mode inference in physical units.
pub fn reconstruct_tsmi(
    net: &ReconNetwork,
    norm: f64,
    y: &KSpaceData,
    op: &AcquisitionOperator<f64>,
) -> Result<Tsmi> {
    if net.mode != OutputKind::Tsmi {
        return Err(Error::Config("network does not output TSMIs".into()));
    }
    let (h, w, n, t) = (op.h, op.w, op.n(), op.t());
    let mut ch = backprojection_channels(y, op)?;
    for v in ch.iter_mut() {
        *v /= norm;
    }
    let mut out = net.infer(&ch, 1, h, w)?;
    for v in out.iter_mut() {
        *v *= norm;
    }
    Ok(Tsmi {
        n,
        t,
        data: channels_to_tsmi(&out, n, t),
    })
}

/// TSMI-mode reconstruction followed by dictionary matching.
pub fn ei_to_qmaps(
    net: &ReconNetwork,
    norm: f64,
    y: &KSpaceData,
    op: &AcquisitionOperator<f64>,
    dict: &Dictionary<f64>,
    head_mask: &[bool],
) -> Result<MatchResult> {
    let x = reconstruct_tsmi(net, norm, y, op)?;
    dictionary_match(&x, dict, head_mask, op.h, op.w)
}

/// Equivariance diagnostic: mean over slices and all seven transforms of
/// MSE(T(f(y)), f(A B T f(y))). Small after successful training.
pub fn equivariance_gap(
    net: &ReconNetwork,
    norm: f64,
    surrogate: &BlochSurrogate,
    op: &Arc<AcquisitionOperator<f64>>,
    slices: &[KSpaceData],
) -> Result<f64> {
    let (h, w, t) = (op.h, op.w, op.t());
    let transforms = dihedral_transforms(h, w)?;
    let a_op = Arc::new(as_linear_op(op.clone()));
    let ah_op = Arc::new(as_adjoint_linear_op(op.clone()));
    let mut acc = 0.0;
    let mut count = 0usize;
    for y in slices {
        let mut ch = backprojection_channels(y, op)?;
        for v in ch.iter_mut() {
            *v /= norm;
        }
        let mut g = Graph::new();
        let ids = net.params.bind(&mut g, true);
        let sur_ids = surrogate.bind(&mut g);
        let x_in = g.constant(vec![1, 2 * t, h, w], ch);
        let q = net.forward(&mut g, &ids, x_in)?;
        for tk in &transforms {
            let q_t = g.permute_pixels(q, tk.perm.clone())?;
            let x_t = surrogate.apply(&mut g, &sur_ids, q_t)?;
            let y_t = g.apply_linear(a_op.clone(), x_t)?;
            let xb = g.apply_linear(ah_op.clone(), y_t)?;
            let x_in_t = g.scale(xb, 1.0 / norm);
            let q_ei = net.forward(&mut g, &ids, x_in_t)?;
            let term = g.mse_loss(q_ei, q_t)?;
            acc += g.scalar_value(term);
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_defaults_match_protocol() {
        let cfg = TrainConfig::full_scale(TrainMode::Nlei, 1e-8, 0);
        assert_eq!(cfg.epochs, 1000);
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.lr, 5e-4);
        assert_eq!(cfg.lr_drop_epoch, 300);
        assert_eq!(cfg.lr_drop_factor, 10.0);
        assert_eq!(cfg.weight_decay, 1e-8);
        assert_eq!(cfg.n_transforms_per_iter, 3);
    }
}

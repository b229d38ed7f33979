//! Masked image quality metrics: MAE, MAPE (percent), PSNR against fixed
//! per-map data ranges, and SSIM with a 7x7 Gaussian window. All metrics
//! zero out-of-mask pixels before computing anything, so they are exactly
//! invariant to out-of-mask values.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fixed data ranges: T1 6 s, T2 4 s, PD (normalized magnitude) 1.
pub const RANGE_T1: f64 = 6.0;
pub const RANGE_T2: f64 = 4.0;
pub const RANGE_PD: f64 = 1.0;

/// PSNR reported for exact matches (infinite PSNR is unrepresentable in the
/// CSV outputs).
pub const PSNR_CAP_DB: f64 = 300.0;

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MapMetrics {
    pub mae: f64,
    pub mape: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check_inputs(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<usize> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "metrics",
            format!("pred {} truth {} mask {}", pred.len(), truth.len(), mask.len()),
        ));
    }
    let count = mask.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::Config("empty mask in metric computation".into()));
    }
    Ok(count)
}

pub fn mae(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64> {
    let count = check_inputs(pred, truth, mask)?;
    let s: f64 = mask
        .iter()
        .zip(pred.iter().zip(truth))
        .filter(|(&m, _)| m)
        .map(|(_, (&p, &t))| (p - t).abs())
        .sum();
    Ok(s / count as f64)
}

/// Mean absolute percentage error over in-mask voxels, in percent. Voxels
/// with zero truth are excluded (inside a head mask T1/T2 never vanish by
/// construction; this is a safety rail).
pub fn mape(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64> {
    check_inputs(pred, truth, mask)?;
    let mut s = 0.0;
    let mut count = 0usize;
    for ((&m, &p), &t) in mask.iter().zip(pred).zip(truth) {
        if m && t != 0.0 {
            s += ((p - t) / t).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("mape: no in-mask voxels with nonzero truth".into()));
    }
    Ok(100.0 * s / count as f64)
}

pub fn psnr(pred: &[f64], truth: &[f64], mask: &[bool], data_range: f64) -> Result<f64> {
    let count = check_inputs(pred, truth, mask)?;
    let mse: f64 = mask
        .iter()
        .zip(pred.iter().zip(truth))
        .filter(|(&m, _)| m)
        .map(|(_, (&p, &t))| (p - t) * (p - t))
        .sum::<f64>()
        / count as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window_7x7() -> [f64; 49] {
    let sigma = 1.5f64;
    let mut w = [0.0; 49];
    let mut sum = 0.0;
    for (i, item) in w.iter_mut().enumerate() {
        let dy = (i / 7) as f64 - 3.0;
        let dx = (i % 7) as f64 - 3.0;
        let v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        *item = v;
        sum += v;
    }
    for item in w.iter_mut() {
        *item /= sum;
    }
    w
}

/// SSIM with a 7x7 Gaussian window (sigma 1.5) and the standard stabilizers
/// C1 = (0.01 R)^2, C2 = (0.03 R)^2. Windows must lie fully inside the
/// image; the score averages over in-mask window centers. Out-of-mask
/// pixels are zeroed first.
pub fn ssim(
    pred: &[f64],
    truth: &[f64],
    mask: &[bool],
    data_range: f64,
    h: usize,
    w: usize,
) -> Result<f64> {
    check_inputs(pred, truth, mask)?;
    if pred.len() != h * w {
        return Err(Error::shape("ssim", format!("{} values for {h}x{w}", pred.len())));
    }
    if h < 7 || w < 7 {
        return Err(Error::Config("ssim needs at least a 7x7 image".into()));
    }
    let win = gaussian_window_7x7();
    let c1 = (0.01 * data_range) * (0.01 * data_range);
    let c2 = (0.03 * data_range) * (0.03 * data_range);

    let p: Vec<f64> = pred
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let t: Vec<f64> = truth
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();

    let mut acc = 0.0;
    let mut count = 0usize;
    for cy in 3..h - 3 {
        for cx in 3..w - 3 {
            if !mask[cy * w + cx] {
                continue;
            }
            let (mut mu_p, mut mu_t) = (0.0, 0.0);
            let (mut pp, mut tt, mut pt) = (0.0, 0.0, 0.0);
            for wy in 0..7 {
                for wx in 0..7 {
                    let idx = (cy + wy - 3) * w + (cx + wx - 3);
                    let wgt = win[wy * 7 + wx];
                    let (a, b) = (p[idx], t[idx]);
                    mu_p += wgt * a;
                    mu_t += wgt * b;
                    pp += wgt * a * a;
                    tt += wgt * b * b;
                    pt += wgt * a * b;
                }
            }
            let var_p = pp - mu_p * mu_p;
            let var_t = tt - mu_t * mu_t;
            let cov = pt - mu_p * mu_t;
            let s = ((2.0 * mu_p * mu_t + c1) * (2.0 * cov + c2))
                / ((mu_p * mu_p + mu_t * mu_t + c1) * (var_p + var_t + c2));
            acc += s;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("ssim: no in-mask window centers".into()));
    }
    Ok(acc / count as f64)
}

pub fn map_metrics(
    pred: &[f64],
    truth: &[f64],
    mask: &[bool],
    data_range: f64,
    h: usize,
    w: usize,
) -> Result<MapMetrics> {
    Ok(MapMetrics {
        mae: mae(pred, truth, mask)?,
        mape: mape(pred, truth, mask)?,
        psnr: psnr(pred, truth, mask, data_range)?,
        ssim: ssim(pred, truth, mask, data_range, h, w)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn perfect_prediction() {
        let t: Vec<f64> = (0..64).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        let mask = full_mask(64);
        assert_eq!(mae(&t, &t, &mask).unwrap(), 0.0);
        assert_eq!(mape(&t, &t, &mask).unwrap(), 0.0);
        assert_eq!(psnr(&t, &t, &mask, 6.0).unwrap(), PSNR_CAP_DB);
        let s = ssim(&t, &t, &mask, 6.0, 8, 8).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_prediction_is_100_percent_mape() {
        let t = vec![0.5; 16];
        let p: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!((mape(&p, &t, &full_mask(16)).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_psnr_closed_form() {
        // offset 0.06 on range 6: 10 log10(6^2 / 0.06^2) = 40 dB exactly.
        let t = vec![1.0; 100];
        let p: Vec<f64> = t.iter().map(|v| v + 0.06).collect();
        let got = psnr(&p, &t, &full_mask(100), 6.0).unwrap();
        assert!((got - 40.0).abs() < 1e-10, "{got}");
    }

    #[test]
    fn masking_invariance_is_exact() {
        let h = 10;
        let w = 10;
        let mut mask = vec![false; h * w];
        for y in 2..8 {
            for x in 2..8 {
                mask[y * w + x] = true;
            }
        }
        let truth: Vec<f64> = (0..h * w).map(|i| 0.5 + 0.01 * (i as f64)).collect();
        let pred: Vec<f64> = truth.iter().map(|v| v * 1.1).collect();
        let base = map_metrics(&pred, &truth, &mask, 6.0, h, w).unwrap();
        // Arbitrarily perturb out-of-mask truth and prediction.
        let mut truth2 = truth.clone();
        let mut pred2 = pred.clone();
        for i in 0..h * w {
            if !mask[i] {
                truth2[i] = 1e9;
                pred2[i] = -77.0;
            }
        }
        let alt = map_metrics(&pred2, &truth2, &mask, 6.0, h, w).unwrap();
        assert_eq!(base.mae.to_bits(), alt.mae.to_bits());
        assert_eq!(base.mape.to_bits(), alt.mape.to_bits());
        assert_eq!(base.psnr.to_bits(), alt.psnr.to_bits());
        assert_eq!(base.ssim.to_bits(), alt.ssim.to_bits());
    }

    #[test]
    fn empty_mask_is_an_error() {
        let v = vec![1.0; 4];
        assert!(mae(&v, &v, &[false; 4]).is_err());
    }
}

//! Small U-Net: encoder/decoder with skip connections by channel
//! concatenation and no residual connection between the initial and final
//! layers. Input is the 2t-channel backprojection; output is either the
//! 4-channel quantitative maps or a 2t-channel TSMI, fixed at construction.

use crate::autodiff::{Graph, TensorId};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    /// 4 channels: T1, T2, PD_re, PD_im.
    QMaps,
    /// 2t channels: stacked real/imaginary TSMI.
    Tsmi,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct UnetConfig {
    pub in_ch: usize,
    pub out_ch: usize,
    pub depth: usize,
    pub base: usize,
    pub final_zero_init: bool,
    pub seed: u64,
}

impl UnetConfig {
    pub fn new(in_ch: usize, out_ch: usize, seed: u64) -> Self {
        UnetConfig {
            in_ch,
            out_ch,
            depth: 2,
            base: 16,
            final_zero_init: false,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconNetwork {
    pub params: ParamSet<f64>,
    pub cfg: UnetConfig,
    pub mode: OutputKind,
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

impl ReconNetwork {
    pub fn new(cfg: UnetConfig, mode: OutputKind) -> Self {
        let mut rng = crate::util::rng_for(cfg.seed, "unet-init", 0);
        let mut params = ParamSet::new();
        let mut add_conv = |params: &mut ParamSet<f64>, name: &str, cin: usize, cout: usize, k: usize, zero: bool| {
            let fan_in = cin * k * k;
            let w = if zero {
                vec![0.0; cout * fan_in]
            } else {
                he_normal(&mut rng, fan_in, cout * fan_in)
            };
            params.add(format!("{name}.w"), vec![cout, cin, k, k], w);
            params.add(format!("{name}.b"), vec![cout], vec![0.0; cout]);
        };

        let d = cfg.depth;
        let ch = |level: usize| cfg.base << level;
        // Encoder blocks (two 3x3 convs each), level 0..d at full..
        let mut cin = cfg.in_ch;
        for level in 0..=d {
            let cout = ch(level);
            add_conv(&mut params, &format!("enc{level}.c1"), cin, cout, 3, false);
            add_conv(&mut params, &format!("enc{level}.c2"), cout, cout, 3, false);
            cin = cout;
        }
        // Decoder blocks: input = upsampled deeper features + skip.
        for level in (0..d).rev() {
            let cout = ch(level);
            let cat = ch(level + 1) + cout;
            add_conv(&mut params, &format!("dec{level}.c1"), cat, cout, 3, false);
            add_conv(&mut params, &format!("dec{level}.c2"), cout, cout, 3, false);
        }
        add_conv(&mut params, "head", cfg.base, cfg.out_ch, 1, cfg.final_zero_init);

        ReconNetwork { params, cfg, mode }
    }

    pub fn bind(&self, g: &mut Graph<f64>) -> Vec<TensorId> {
        self.params.bind(g, false)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_scalars()
    }

    fn block(
        g: &mut Graph<f64>,
        ids: &[TensorId],
        at: &mut usize,
        x: TensorId,
    ) -> Result<TensorId> {
        let (w1, b1, w2, b2) = (ids[*at], ids[*at + 1], ids[*at + 2], ids[*at + 3]);
        *at += 4;
        let y = g.conv2d(x, w1, b1)?;
        let y = g.relu(y);
        let y = g.conv2d(y, w2, b2)?;
        Ok(g.relu(y))
    }

    /// Spatial dims must be divisible by 2^depth; output keeps the input's
    /// spatial size.
    pub fn forward(&self, g: &mut Graph<f64>, ids: &[TensorId], x: TensorId) -> Result<TensorId> {
        let shape = g.shape(x).to_vec();
        let [_, c, h, w] = shape.as_slice() else {
            return Err(Error::shape("unet", format!("expected 4-d input, got {shape:?}")));
        };
        if *c != self.cfg.in_ch {
            return Err(Error::shape(
                "unet",
                format!("{c} input channels, network expects {}", self.cfg.in_ch),
            ));
        }
        let div = 1usize << self.cfg.depth;
        if h % div != 0 || w % div != 0 {
            return Err(Error::shape(
                "unet",
                format!("spatial dims {h}x{w} not divisible by {div}"),
            ));
        }

        let mut at = 0usize;
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut cur = x;
        for _level in 0..self.cfg.depth {
            let f = Self::block(g, ids, &mut at, cur)?;
            skips.push(f);
            cur = g.avgpool2(f)?;
        }
        cur = Self::block(g, ids, &mut at, cur)?; // bottleneck
        for level in (0..self.cfg.depth).rev() {
            let up = g.upsample2_nearest(cur)?;
            let cat = g.concat_channels(&[up, skips[level]])?;
            cur = Self::block(g, ids, &mut at, cat)?;
        }
        let (wh, bh) = (ids[at], ids[at + 1]);
        g.conv2d(cur, wh, bh)
    }

    /// Plain inference without keeping gradient state.
    pub fn infer(&self, input: &[f64], n: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(vec![n, self.cfg.in_ch, h, w], input.to_vec());
        let ids = self.params.bind(&mut g, true);
        let y = self.forward(&mut g, &ids, x)?;
        Ok(g.values(y).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_spatial_dims_match_input() {
        for hw in [32usize, 64] {
            let cfg = UnetConfig {
                base: 4,
                ..UnetConfig::new(6, 4, 0)
            };
            let net = ReconNetwork::new(cfg, OutputKind::QMaps);
            let x = vec![0.3; 6 * hw * hw];
            let y = net.infer(&x, 1, hw, hw).unwrap();
            assert_eq!(y.len(), 4 * hw * hw);
        }
    }

    #[test]
    fn zero_init_head_gives_zero_output() {
        let cfg = UnetConfig {
            base: 4,
            final_zero_init: true,
            ..UnetConfig::new(6, 4, 1)
        };
        let net = ReconNetwork::new(cfg, OutputKind::QMaps);
        let x: Vec<f64> = (0..6 * 16 * 16).map(|i| (i as f64).sin()).collect();
        let y = net.infer(&x, 1, 16, 16).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_indivisible_spatial_dims() {
        let cfg = UnetConfig {
            base: 4,
            ..UnetConfig::new(2, 2, 2)
        };
        let net = ReconNetwork::new(cfg, OutputKind::Tsmi);
        let x = vec![0.0; 2 * 18 * 18];
        assert!(net.infer(&x, 1, 18, 18).is_err());
    }

    #[test]
    fn twenty_input_channels_at_t10() {
        let cfg = UnetConfig::new(20, 4, 3);
        assert_eq!(cfg.in_ch, 20);
        let net = ReconNetwork::new(UnetConfig { base: 2, ..cfg }, OutputKind::QMaps);
        let x = vec![0.1; 20 * 8 * 8];
        let y = net.infer(&x, 1, 8, 8).unwrap();
        assert_eq!(y.len(), 4 * 8 * 8);
    }
}

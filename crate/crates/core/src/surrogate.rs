//! Differentiable per-voxel surrogate of the Bloch response: a small MLP
//! (realized as 1x1 convolutions) from normalized (T1, T2) to the compressed
//! complex fingerprint. Proton density is factored outside the network, so
//! linearity in PD holds by construction. Trained offline on the compressed
//! dictionary, then frozen inside self-supervised training.

use crate::autodiff::{Graph, TensorId};
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::opt::{Adam, AdamConfig};
use crate::params::ParamSet;
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

type C64 = Complex<f64>;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            hidden: 300,
            epochs: 2000,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Frozen-able voxel-wise network with two ReLU hidden layers and a linear
/// 2t-channel output (real and imaginary halves of the fingerprint).
#[derive(Clone, Debug)]
pub struct BlochSurrogate {
    pub params: ParamSet<f64>,
    pub hidden: usize,
    pub t: usize,
    pub t1_range: (f64, f64),
    pub t2_range: (f64, f64),
    pub frozen: bool,
    pub basis_hash: String,
}

#[derive(Serialize, Deserialize)]
struct SurrogateMeta {
    hidden: usize,
    t: usize,
    t1_range: (f64, f64),
    t2_range: (f64, f64),
    basis_hash: String,
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

impl BlochSurrogate {
    pub fn new(
        hidden: usize,
        t: usize,
        t1_range: (f64, f64),
        t2_range: (f64, f64),
        basis_hash: String,
        seed: u64,
    ) -> Self {
        let mut rng = crate::util::rng_for(seed, "surrogate-init", 0);
        let mut params = ParamSet::new();
        let w1 = he_normal(&mut rng, 2, hidden * 2);
        params.add("w1", vec![hidden, 2, 1, 1], w1);
        params.add("b1", vec![hidden], vec![0.0; hidden]);
        let w2 = he_normal(&mut rng, hidden, hidden * hidden);
        params.add("w2", vec![hidden, hidden, 1, 1], w2);
        params.add("b2", vec![hidden], vec![0.0; hidden]);
        let w3 = he_normal(&mut rng, hidden, 2 * t * hidden);
        params.add("w3", vec![2 * t, hidden, 1, 1], w3);
        params.add("b3", vec![2 * t], vec![0.0; 2 * t]);
        BlochSurrogate {
            params,
            hidden,
            t,
            t1_range,
            t2_range,
            frozen: false,
            basis_hash,
        }
    }

    /// 2*300 + 300 + 300*300 + 300 + 300*2t + 2t for the default width.
    pub fn parameter_count(&self) -> usize {
        self.params.total_scalars()
    }

    pub fn param_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Insert the parameters into a graph; frozen surrogates bind as
    /// constants so no training step can touch them (gradients still flow
    /// through the ops to upstream inputs).
    pub fn bind(&self, g: &mut Graph<f64>) -> Vec<TensorId> {
        self.params.bind(g, self.frozen)
    }

    /// log-affine input normalization onto [-1, 1] over the grid ranges.
    /// Inputs are clamped to the grid hull first: the log scaling is only
    /// defined there, and the loss path may produce arbitrary values.
    fn normalize(&self, g: &mut Graph<f64>, t1t2: TensorId) -> Result<TensorId> {
        let mut chans = Vec::with_capacity(2);
        for (c, (lo, hi)) in [(0, self.t1_range), (1, self.t2_range)].into_iter() {
            let ch = g.slice_channels(t1t2, c, c + 1)?;
            let clamped = g.clamp(ch, lo, hi);
            let logged = g.ln(clamped);
            let (llo, lhi) = (lo.ln(), hi.ln());
            let scale = 2.0 / (lhi - llo);
            let shift = -(lhi + llo) / (lhi - llo);
            chans.push(g.affine(logged, scale, shift));
        }
        g.concat_channels(&chans)
    }

    /// Unit-PD fingerprint channels [b, 2t, H, W] from (T1, T2) channels
    /// [b, 2, H, W].
    pub fn forward_unit(
        &self,
        g: &mut Graph<f64>,
        ids: &[TensorId],
        t1t2: TensorId,
    ) -> Result<TensorId> {
        let z = self.normalize(g, t1t2)?;
        let h1 = g.conv2d(z, ids[0], ids[1])?;
        let h1 = g.relu(h1);
        let h2 = g.conv2d(h1, ids[2], ids[3])?;
        let h2 = g.relu(h2);
        g.conv2d(h2, ids[4], ids[5])
    }

    /// Full voxel-wise response: complex PD times the unit fingerprint.
    /// `q` is [b, 4, H, W] with channels (T1, T2, PD_re, PD_im).
    pub fn apply(
        &self,
        g: &mut Graph<f64>,
        ids: &[TensorId],
        q: TensorId,
    ) -> Result<TensorId> {
        let t1t2 = g.slice_channels(q, 0, 2)?;
        let pd = g.slice_channels(q, 2, 4)?;
        let u = self.forward_unit(g, ids, t1t2)?;
        g.complex_mul_channels(u, pd)
    }

    /// Inference helper: compressed unit-PD fingerprints for a list of
    /// (T1, T2) pairs.
    pub fn predict_pairs(&self, pairs: &[(f64, f64)]) -> Result<Vec<C64>> {
        let p = pairs.len();
        let mut vals = vec![0.0; 2 * p];
        for (i, &(t1, t2)) in pairs.iter().enumerate() {
            vals[i] = t1;
            vals[p + i] = t2;
        }
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 1, p], vals);
        let ids = self.params.bind(&mut g, true);
        let out = self.forward_unit(&mut g, &ids, x)?;
        let ov = g.values(out);
        let mut fps = vec![C64::new(0.0, 0.0); p * self.t];
        for i in 0..p {
            for j in 0..self.t {
                fps[i * self.t + j] = C64::new(ov[j * p + i], ov[(self.t + j) * p + i]);
            }
        }
        Ok(fps)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        self.params.save(base)?;
        crate::io::write_json(
            &base.with_extension("meta.json"),
            &SurrogateMeta {
                hidden: self.hidden,
                t: self.t,
                t1_range: self.t1_range,
                t2_range: self.t2_range,
                basis_hash: self.basis_hash.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Self> {
        let meta: SurrogateMeta = crate::io::read_json(&base.with_extension("meta.json"))?;
        let params = ParamSet::load(base)?;
        Ok(BlochSurrogate {
            params,
            hidden: meta.hidden,
            t: meta.t,
            t1_range: meta.t1_range,
            t2_range: meta.t2_range,
            frozen: true,
            basis_hash: meta.basis_hash,
        })
    }
}

/// Fit the surrogate to the compressed dictionary (unit-PD fingerprints) by
/// full-batch Adam on the MSE. Returns the trained network and its final
/// relative RMS fit error on the training grid.
pub fn train_surrogate(
    dict: &Dictionary<f64>,
    cfg: &SurrogateConfig,
) -> Result<(BlochSurrogate, f64)> {
    let basis_hash = dict
        .basis_hash
        .clone()
        .ok_or_else(|| Error::Config("surrogate trains on a compressed dictionary".into()))?;
    let n = dict.n_atoms();
    if n == 0 {
        return Err(Error::Config("empty dictionary".into()));
    }
    let t = dict.entry_len;
    let spec = dict.grid_spec;
    let mut net = BlochSurrogate::new(
        cfg.hidden,
        t,
        spec.t1_range,
        spec.t2_range,
        basis_hash,
        cfg.seed,
    );

    // One "image" of n voxels: inputs [1, 2, 1, n], targets [1, 2t, 1, n].
    let mut inputs = vec![0.0; 2 * n];
    for (i, &(t1, t2)) in dict.grid.iter().enumerate() {
        inputs[i] = t1;
        inputs[n + i] = t2;
    }
    let mut targets = vec![0.0; 2 * t * n];
    for i in 0..n {
        for j in 0..t {
            let z = dict.atom(i)[j];
            targets[j * n + i] = z.re;
            targets[(t + j) * n + i] = z.im;
        }
    }
    let target_energy: f64 = targets.iter().map(|v| v * v).sum();

    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &net.params,
    );
    let mut last_mse = f64::INFINITY;
    for epoch in 0..cfg.epochs {
        let mut g = Graph::new();
        let x = g.constant(vec![1, 2, 1, n], inputs.clone());
        let y = g.constant(vec![1, 2 * t, 1, n], targets.clone());
        let ids = net.params.bind(&mut g, false);
        let pred = net.forward_unit(&mut g, &ids, x)?;
        let loss = g.mse_loss(pred, y)?;
        last_mse = g.scalar_value(loss);
        if !last_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "surrogate training diverged at epoch {epoch} (loss {last_mse})"
            )));
        }
        g.backward(loss)?;
        let grads = net.params.collect_grads(&g, &ids);
        adam.step(&mut net.params, &grads)?;
    }
    // Relative RMS over the grid: sqrt(sum |err|^2 / sum |atom|^2).
    let rel_rms = (last_mse * (2 * t * n) as f64 / target_energy).sqrt();
    net.freeze();
    Ok((net, rel_rms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_dictionary, GridSpec};
    use crate::epg::default_flip_schedule;
    use crate::subspace::fit_basis;

    #[test]
    fn parameter_count_matches_architecture() {
        let net = BlochSurrogate::new(300, 10, (0.01, 6.0), (0.004, 4.0), "x".into(), 0);
        let t = 10;
        assert_eq!(
            net.parameter_count(),
            2 * 300 + 300 + 300 * 300 + 300 + 300 * 2 * t + 2 * t
        );
    }

    #[test]
    fn memorizes_a_single_atom() {
        let mut sched = default_flip_schedule();
        sched.flip_angles_deg.truncate(24);
        let dict = build_dictionary::<f64>(
            &sched,
            &GridSpec {
                n_t1: 2,
                n_t2: 2,
                t1_range: (0.5, 1.5),
                t2_range: (0.05, 0.2),
                ..Default::default()
            },
            8,
        )
        .unwrap();
        let basis = fit_basis(&dict, 4).unwrap();
        let one = {
            let mut d = dict.compressed(&basis).unwrap();
            d.atoms.truncate(d.entry_len);
            d.unit_atoms.truncate(d.entry_len);
            d.grid.truncate(1);
            d.norms.truncate(1);
            d
        };
        let cfg = SurrogateConfig {
            hidden: 32,
            epochs: 800,
            lr: 3e-3,
            seed: 1,
        };
        let (net, _) = train_surrogate(&one, &cfg).unwrap();
        let pred = net.predict_pairs(&[one.grid[0]]).unwrap();
        let mse: f64 = pred
            .iter()
            .zip(one.atom(0))
            .map(|(p, a)| (p - a).norm_sqr())
            .sum::<f64>()
            / (2.0 * one.entry_len as f64);
        assert!(mse <= 1e-8, "single-atom fit mse {mse}");
    }

    #[test]
    fn pd_linearity_is_structural() {
        let net = BlochSurrogate::new(16, 3, (0.01, 6.0), (0.004, 4.0), "x".into(), 2);
        let (h, w) = (2, 2);
        let q_base = vec![
            0.8, 1.2, 0.9, 1.1, // t1
            0.07, 0.1, 0.08, 0.09, // t2
            0.5, -0.3, 0.2, 0.9, // pd_re
            0.1, 0.4, -0.6, 0.2, // pd_im
        ];
        let run = |q: Vec<f64>| -> Vec<f64> {
            let mut g = Graph::new();
            let qt = g.constant(vec![1, 4, h, w], q);
            let ids = net.bind(&mut g);
            let out = net.apply(&mut g, &ids, qt).unwrap();
            g.values(out).to_vec()
        };
        let base = run(q_base.clone());
        // Scale PD by 2 (a power of two): output must double bit-exactly.
        let mut q2 = q_base.clone();
        for v in q2[8..16].iter_mut() {
            *v *= 2.0;
        }
        let doubled = run(q2);
        for (a, b) in base.iter().zip(&doubled) {
            assert_eq!(a * 2.0, *b);
        }
        // Multiplying complex PD by i rotates the channel pairs exactly:
        // (re, im) -> (-im, re).
        let mut qi = q_base.clone();
        for v in 0..4 {
            let re = q_base[8 + v];
            let im = q_base[12 + v];
            qi[8 + v] = -im;
            qi[12 + v] = re;
        }
        let rotated = run(qi);
        let t = net.t;
        let hw = h * w;
        for j in 0..t {
            for v in 0..hw {
                let re = base[j * hw + v];
                let im = base[(t + j) * hw + v];
                assert_eq!(rotated[j * hw + v], -im);
                assert_eq!(rotated[(t + j) * hw + v], re);
            }
        }
        // PD = 0 kills the output no matter what T1/T2 are.
        let mut q0 = q_base;
        for v in q0[8..16].iter_mut() {
            *v = 0.0;
        }
        assert!(run(q0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn voxel_locality_under_permutation() {
        let net = BlochSurrogate::new(8, 2, (0.01, 6.0), (0.004, 4.0), "x".into(), 3);
        let (h, w) = (2, 2);
        let q: Vec<f64> = (0..16).map(|i| 0.1 + 0.05 * i as f64).collect();
        let run = |q: Vec<f64>| -> Vec<f64> {
            let mut g = Graph::new();
            let qt = g.constant(vec![1, 4, h, w], q);
            let ids = net.bind(&mut g);
            let out = net.apply(&mut g, &ids, qt).unwrap();
            g.values(out).to_vec()
        };
        let base = run(q.clone());
        // Swap voxels 0 and 3 in every channel.
        let mut qp = q;
        for c in 0..4 {
            qp.swap(c * 4, c * 4 + 3);
        }
        let swapped = run(qp);
        let t2 = 2 * net.t;
        for c in 0..t2 {
            assert_eq!(swapped[c * 4], base[c * 4 + 3]);
            assert_eq!(swapped[c * 4 + 3], base[c * 4]);
            assert_eq!(swapped[c * 4 + 1], base[c * 4 + 1]);
        }
    }

    #[test]
    fn frozen_bind_gives_constants() {
        let mut net = BlochSurrogate::new(8, 2, (0.01, 6.0), (0.004, 4.0), "x".into(), 4);
        net.freeze();
        let mut g = Graph::new();
        let ids = net.bind(&mut g);
        let q = g.param(vec![1, 4, 2, 2], vec![0.5; 16]);
        let out = net.apply(&mut g, &ids, q).unwrap();
        let tgt = g.constant(vec![1, 2 * net.t, 2, 2], vec![0.0; 2 * net.t * 4]);
        let loss = g.mse_loss(out, tgt).unwrap();
        g.backward(loss).unwrap();
        // Gradients flow to the input, not to the frozen weights.
        assert!(g.grad(q).is_some());
        for id in ids {
            assert!(g.grad(id).is_none());
        }
    }
}

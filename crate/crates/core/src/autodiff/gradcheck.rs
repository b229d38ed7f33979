//! Central finite-difference checks for every differentiable op.
//!
//! The checker only uses forward evaluations, so it stays independent of the
//! backward implementations it validates. Inputs are drawn away from kinks
//! (relu zero crossings, clamp bounds) so the difference quotient is valid.

use super::{Graph, LinearOperator, TensorId};
use crate::error::Result;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compare autodiff gradients of a scalar loss against central differences
/// for every element of every leaf.
///
/// `build` must construct the same graph for the same leaf values.
pub fn finite_difference_check<B>(
    name: &str,
    leaves: &[(Vec<usize>, Vec<f64>)],
    build: B,
    tol: f64,
) -> Result<CheckResult>
where
    B: Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    let eval = |vals: &[Vec<f64>]| -> Result<(Graph<f64>, Vec<TensorId>, TensorId)> {
        let mut g = Graph::new();
        let ids: Vec<TensorId> = leaves
            .iter()
            .zip(vals)
            .map(|((shape, _), v)| g.param(shape.clone(), v.clone()))
            .collect();
        let loss = build(&mut g, &ids)?;
        Ok((g, ids, loss))
    };

    let base: Vec<Vec<f64>> = leaves.iter().map(|(_, v)| v.clone()).collect();
    let (mut g, ids, loss) = eval(&base)?;
    g.backward(loss)?;
    let auto: Vec<Vec<f64>> = ids
        .iter()
        .zip(leaves)
        .map(|(&id, (_, v))| g.grad(id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; v.len()]))
        .collect();

    let mut max_rel = 0.0f64;
    for (li, (_, v)) in leaves.iter().enumerate() {
        for ei in 0..v.len() {
            let mut plus = base.clone();
            plus[li][ei] += FD_STEP;
            let mut minus = base.clone();
            minus[li][ei] -= FD_STEP;
            let (gp, _, lp) = eval(&plus)?;
            let (gm, _, lm) = eval(&minus)?;
            let fd = (gp.scalar_value(lp) - gm.scalar_value(lm)) / (2.0 * FD_STEP);
            let rel = (auto[li][ei] - fd).abs() / (fd.abs() + 1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_err: max_rel,
        tol,
    })
}

fn uniform(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero so relu stays locally linear under the
/// finite-difference step.
fn away_from_zero(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.05..1.0)
        })
        .collect()
}

/// Finite-difference checks over every graph op, `instances` random cases
/// each. Returns one result line per case.
pub fn standard_suite(seed: u64, instances: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for inst in 0..instances as u64 {
        let mut rng = crate::util::rng_for(seed, "gradcheck", inst);
        let r = &mut rng;

        // relu
        {
            let x = away_from_zero(r, 12);
            let tgt = uniform(r, 12, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("relu[{inst}]"),
                &[(vec![12], x)],
                move |g, ids| {
                    let y = g.relu(ids[0]);
                    let t = g.constant(vec![12], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // ln
        {
            let x = uniform(r, 10, 0.4, 3.0);
            let tgt = uniform(r, 10, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("ln[{inst}]"),
                &[(vec![10], x)],
                move |g, ids| {
                    let y = g.ln(ids[0]);
                    let t = g.constant(vec![10], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // clamp: mixture of interior points and points clamped from above,
        // all at least 100 steps away from the bounds.
        {
            let x: Vec<f64> = (0..10)
                .map(|i| {
                    if i % 3 == 0 {
                        r.gen_range(1.2..2.0)
                    } else {
                        r.gen_range(0.1..0.9)
                    }
                })
                .collect();
            let tgt = uniform(r, 10, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("clamp[{inst}]"),
                &[(vec![10], x)],
                move |g, ids| {
                    let y = g.clamp(ids[0], 0.0, 1.0);
                    let t = g.constant(vec![10], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // affine / scale
        {
            let x = uniform(r, 9, -1.0, 1.0);
            let tgt = uniform(r, 9, -1.0, 1.0);
            let (m, a) = (r.gen_range(0.5..2.0), r.gen_range(-0.5..0.5));
            out.push(finite_difference_check(
                &format!("affine[{inst}]"),
                &[(vec![9], x)],
                move |g, ids| {
                    let y = g.affine(ids[0], m, a);
                    let t = g.constant(vec![9], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // add / sub / mul with both arguments differentiable
        {
            let a = uniform(r, 8, -1.0, 1.0);
            let b = uniform(r, 8, -1.0, 1.0);
            let tgt = uniform(r, 8, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("add_sub_mul[{inst}]"),
                &[(vec![8], a), (vec![8], b)],
                move |g, ids| {
                    let s = g.add(ids[0], ids[1])?;
                    let d = g.sub(ids[0], ids[1])?;
                    let p = g.mul_elementwise(s, d)?;
                    let t = g.constant(vec![8], tgt.clone());
                    g.mse_loss(p, t)
                },
                FD_TOL,
            )?);
        }
        // reshape + concat + slice
        {
            let a = uniform(r, 2 * 2 * 3 * 3, -1.0, 1.0);
            let b = uniform(r, 2 * 1 * 3 * 3, -1.0, 1.0);
            let tgt = uniform(r, 2 * 2 * 3 * 3, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("reshape_concat_slice[{inst}]"),
                &[(vec![2, 2, 3, 3], a), (vec![2, 1, 3, 3], b)],
                move |g, ids| {
                    let cat = g.concat_channels(&[ids[0], ids[1]])?;
                    let sl = g.slice_channels(cat, 1, 3)?;
                    let rs = g.reshape(sl, vec![2 * 2 * 3 * 3])?;
                    let t = g.constant(vec![2 * 2 * 3 * 3], tgt.clone());
                    g.mse_loss(rs, t)
                },
                FD_TOL,
            )?);
        }
        // avgpool2 + upsample2
        {
            let x = uniform(r, 1 * 2 * 4 * 4, -1.0, 1.0);
            let tgt = uniform(r, 1 * 2 * 4 * 4, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("pool_upsample[{inst}]"),
                &[(vec![1, 2, 4, 4], x)],
                move |g, ids| {
                    let p = g.avgpool2(ids[0])?;
                    let u = g.upsample2_nearest(p)?;
                    let t = g.constant(vec![1, 2, 4, 4], tgt.clone());
                    g.mse_loss(u, t)
                },
                FD_TOL,
            )?);
        }
        // conv2d: gradients w.r.t. input, kernel, and bias
        {
            let x = uniform(r, 2 * 3 * 5 * 5, -1.0, 1.0);
            let w = uniform(r, 4 * 3 * 3 * 3, -1.0, 1.0);
            let b = uniform(r, 4, -0.5, 0.5);
            let tgt = uniform(r, 2 * 4 * 5 * 5, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("conv2d[{inst}]"),
                &[
                    (vec![2, 3, 5, 5], x),
                    (vec![4, 3, 3, 3], w),
                    (vec![4], b),
                ],
                move |g, ids| {
                    let y = g.conv2d(ids[0], ids[1], ids[2])?;
                    let t = g.constant(vec![2, 4, 5, 5], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // permute_pixels (a fixed shuffle)
        {
            let hw = 16;
            let mut perm: Vec<u32> = (0..hw as u32).collect();
            for i in (1..hw).rev() {
                let j = r.gen_range(0..=i);
                perm.swap(i, j);
            }
            let perm = Arc::new(perm);
            let x = uniform(r, 2 * 4 * 4, -1.0, 1.0);
            let tgt = uniform(r, 2 * 4 * 4, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("permute_pixels[{inst}]"),
                &[(vec![1, 2, 4, 4], x)],
                move |g, ids| {
                    let y = g.permute_pixels(ids[0], perm.clone())?;
                    let t = g.constant(vec![1, 2, 4, 4], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // complex_mul_channels
        {
            let u = uniform(r, 1 * 6 * 3 * 3, -1.0, 1.0);
            let pd = uniform(r, 1 * 2 * 3 * 3, -1.0, 1.0);
            let tgt = uniform(r, 1 * 6 * 3 * 3, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("complex_mul_channels[{inst}]"),
                &[(vec![1, 6, 3, 3], u), (vec![1, 2, 3, 3], pd)],
                move |g, ids| {
                    let y = g.complex_mul_channels(ids[0], ids[1])?;
                    let t = g.constant(vec![1, 6, 3, 3], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // mse_loss gradients w.r.t. both arguments
        {
            let a = uniform(r, 7, -1.0, 1.0);
            let b = uniform(r, 7, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("mse_loss[{inst}]"),
                &[(vec![7], a), (vec![7], b)],
                move |g, ids| g.mse_loss(ids[0], ids[1]),
                FD_TOL,
            )?);
        }
        // apply_linear with a random dense matrix and its transpose
        {
            let (n_out, n_in) = (6, 5);
            let mat: Vec<f64> = uniform(r, n_out * n_in, -1.0, 1.0);
            let mt = mat.clone();
            let op = Arc::new(LinearOperator::new(
                vec![n_in],
                vec![n_out],
                move |x: &[f64]| {
                    (0..n_out)
                        .map(|i| (0..n_in).map(|j| mat[i * n_in + j] * x[j]).sum())
                        .collect()
                },
                move |y: &[f64]| {
                    (0..n_in)
                        .map(|j| (0..n_out).map(|i| mt[i * n_in + j] * y[i]).sum())
                        .collect()
                },
            ));
            let x = uniform(r, n_in, -1.0, 1.0);
            let tgt = uniform(r, n_out, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("apply_linear[{inst}]"),
                &[(vec![n_in], x)],
                move |g, ids| {
                    let y = g.apply_linear(op.clone(), ids[0])?;
                    let t = g.constant(vec![n_out], tgt.clone());
                    g.mse_loss(y, t)
                },
                FD_TOL,
            )?);
        }
        // diamond fan-out: one node feeds two consumers
        {
            let x = away_from_zero(r, 6);
            let tgt = uniform(r, 6, -1.0, 1.0);
            out.push(finite_difference_check(
                &format!("diamond[{inst}]"),
                &[(vec![6], x)],
                move |g, ids| {
                    let a = g.relu(ids[0]);
                    let b = g.mul_elementwise(ids[0], ids[0])?;
                    let s = g.add(a, b)?;
                    let t = g.constant(vec![6], tgt.clone());
                    g.mse_loss(s, t)
                },
                FD_TOL,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_smoke_single_instance() {
        let results = standard_suite(99, 1).unwrap();
        for r in &results {
            assert!(r.passed(), "{} rel err {}", r.name, r.max_rel_err);
        }
    }
}

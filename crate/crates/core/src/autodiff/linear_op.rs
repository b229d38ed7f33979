//! Fixed matrix-free linear operators with user-supplied adjoints.
//!
//! Inside the graph these behave like any other differentiable op: because
//! the operator is fixed and linear, the backward pass of `forward` is
//! exactly the adjoint applied to the upstream gradient.

use crate::scalar::Real;
use rand::Rng;

type MapFn<F> = Box<dyn Fn(&[F]) -> Vec<F> + Send + Sync>;

pub struct LinearOperator<F: Real> {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    forward_map: MapFn<F>,
    adjoint_map: MapFn<F>,
}

impl<F: Real> LinearOperator<F> {
    pub fn new(
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        forward_map: impl Fn(&[F]) -> Vec<F> + Send + Sync + 'static,
        adjoint_map: impl Fn(&[F]) -> Vec<F> + Send + Sync + 'static,
    ) -> Self {
        LinearOperator {
            in_shape,
            out_shape,
            forward_map: Box::new(forward_map),
            adjoint_map: Box::new(adjoint_map),
        }
    }

    pub fn identity(shape: Vec<usize>) -> Self {
        LinearOperator::new(shape.clone(), shape, |x| x.to_vec(), |y| y.to_vec())
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.in_len());
        let y = (self.forward_map)(x);
        debug_assert_eq!(y.len(), self.out_len());
        y
    }

    pub fn adjoint(&self, y: &[F]) -> Vec<F> {
        debug_assert_eq!(y.len(), self.out_len());
        let x = (self.adjoint_map)(y);
        debug_assert_eq!(x.len(), self.in_len());
        x
    }

    /// Largest normalized adjoint defect
    /// |<Ax, y> - <x, A^H y>| / (||Ax|| ||y|| + ||x|| ||A^H y||)
    /// over `pairs` random pairs. Zero-denominator pairs count as zero defect.
    pub fn adjoint_defect(&self, pairs: usize, seed: u64) -> f64 {
        let mut rng = crate::util::rng_for(seed, "adjoint-defect", 0);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let x: Vec<F> = (0..self.in_len())
                .map(|_| F::of_f64(rng.gen_range(-1.0..1.0)))
                .collect();
            let y: Vec<F> = (0..self.out_len())
                .map(|_| F::of_f64(rng.gen_range(-1.0..1.0)))
                .collect();
            let ax = self.forward(&x);
            let aty = self.adjoint(&y);
            let dot = |a: &[F], b: &[F]| -> f64 {
                a.iter().zip(b).map(|(&p, &q)| (p * q).as_f64()).sum()
            };
            let nrm = |a: &[F]| dot(a, a).sqrt();
            let lhs = dot(&ax, &y);
            let rhs = dot(&x, &aty);
            let denom = nrm(&ax) * nrm(&y) + nrm(&x) * nrm(&aty);
            if denom > 0.0 {
                worst = worst.max((lhs - rhs).abs() / denom);
            }
        }
        worst
    }
}

impl<F: Real> std::fmt::Debug for LinearOperator<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearOperator")
            .field("in_shape", &self.in_shape)
            .field("out_shape", &self.out_shape)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_zero_defect() {
        let op = LinearOperator::<f64>::identity(vec![4, 4]);
        assert!(op.adjoint_defect(20, 0) < 1e-15);
    }

    #[test]
    fn lying_adjoint_is_caught() {
        // forward doubles, adjoint pretends to be identity
        let op = LinearOperator::<f64>::new(
            vec![8],
            vec![8],
            |x| x.iter().map(|v| 2.0 * v).collect(),
            |y| y.to_vec(),
        );
        assert!(op.adjoint_defect(20, 0) > 1e-2);
    }
}

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Draw `sequences × width` keep/drop decisions, scaled by `1/(1−p)`.
pub fn sample_shared_mask<T: Scalar, R: Rng>(rng: &mut R, sequences: usize, width: usize, p: f64) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - p));
    (0..sequences * width)
        .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
        .collect()
}

impl<T: Scalar> Graph<'_, T> {
    /// Dropout with one mask per sequence, shared by all of its time steps.
    ///
    /// `seq` is `T×D` (one sequence) or time-major `T×N×D`. Eval mode and
    /// `p = 0` return `seq` unchanged.
    pub fn dropout_shared_mask(&self, seq: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} must lie in [0, 1)"
            )));
        }
        if !self.is_train() || p == 0.0 {
            return Ok(seq);
        }
        let shape = self.shape(seq);
        let (steps, n, d) = match shape.as_slice() {
            [t, d] => (*t, 1, *d),
            [t, n, d] => (*t, *n, *d),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "dropout expects T×D or T×N×D, got {shape:?}"
                )))
            }
        };
        let mask: Vec<T> = self.with_rng(|rng| sample_shared_mask(rng, n, d, p));
        let full: Vec<T> = (0..steps).flat_map(|_| mask.iter().copied()).collect();
        self.mul_const(seq, Tensor::from_parts(shape, full))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_features_identical_at_every_step() {
        let g = Graph::<f32>::new(Mode::Train, ChaCha8Rng::seed_from_u64(11));
        let x = g.constant(Tensor::full([29, 3, 64], 1.0));
        let y = g.dropout_shared_mask(x, 0.30).unwrap();
        let y = g.value(y);
        let first = &y.data()[..3 * 64];
        assert!(first.iter().any(|&v| v == 0.0));
        for t in 1..29 {
            assert_eq!(&y.data()[t * 192..(t + 1) * 192], first);
        }
    }

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let g = Graph::<f32>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(1));
        let x = g.constant(Tensor::full([4, 5], 2.0));
        assert_eq!(g.dropout_shared_mask(x, 0.5).unwrap(), x);
        let g = Graph::<f32>::new(Mode::Train, ChaCha8Rng::seed_from_u64(1));
        let x = g.constant(Tensor::full([4, 5], 2.0));
        assert_eq!(g.dropout_shared_mask(x, 0.0).unwrap(), x);
    }

    #[test]
    fn rate_one_is_error() {
        let g = Graph::<f32>::new(Mode::Train, ChaCha8Rng::seed_from_u64(1));
        let x = g.constant(Tensor::full([4, 5], 2.0));
        assert!(g.dropout_shared_mask(x, 1.0).is_err());
    }

    #[test]
    fn empirical_drop_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let d = 8;
        let mut dropped = vec![0usize; d];
        for _ in 0..draws {
            let m: Vec<f64> = sample_shared_mask(&mut rng, 1, d, 0.30);
            for (c, v) in dropped.iter_mut().zip(&m) {
                *c += (*v == 0.0) as usize;
            }
        }
        for c in dropped {
            let rate = c as f64 / draws as f64;
            assert!((0.295..=0.305).contains(&rate), "rate {rate}");
        }
    }
}

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: T = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

impl<T: Scalar> Graph<'_, T> {
    /// Mean negative log posterior of `labels` under softmax(`logits`).
    ///
    /// Returns the scalar loss node and the `N×K` posteriors.
    pub fn softmax_cross_entropy(&self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let vl = self.value(logits);
        if vl.ndim() != 2 {
            return Err(Error::InvalidShape(format!(
                "logits must be N×K, got {:?}",
                vl.shape()
            )));
        }
        let (n, k) = (vl.shape()[0], vl.shape()[1]);
        if labels.len() != n {
            return Err(Error::shape("labels", n, labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let post = softmax_rows(vl.data(), k);
        let mut loss = 0.0f64;
        for (r, &l) in labels.iter().enumerate() {
            let row = &vl.data()[r * k..(r + 1) * k];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max).as_f64();
            let lse = m + row.iter().map(|&v| (v.as_f64() - m).exp()).sum::<f64>().ln();
            loss += lse - row[l].as_f64();
        }
        loss /= n as f64;
        let posteriors = Tensor::from_parts(vec![n, k], post.clone());
        let labels = labels.to_vec();
        let node = self.push(
            "softmax_ce",
            Tensor::scalar(T::of(loss)),
            &[logits],
            Box::new(move |c| {
                let scale = c.grad[0] / T::of(n as f64);
                let mut g: Vec<T> = post.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    g[r * k + l] = g[r * k + l] - scale;
                }
                vec![Some(g)]
            }),
        )?;
        Ok((node, posteriors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph() -> Graph<'static, f64> {
        Graph::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let g = graph();
        let x = g.constant(Tensor::zeros([1, 500]));
        let (loss, post) = g.softmax_cross_entropy(x, &[17]).unwrap();
        assert!((g.value(loss).data()[0] - 500f64.ln()).abs() < 1e-12);
        assert!((post.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_gives_zero_loss() {
        let g = graph();
        let mut t = Tensor::zeros([1, 4]);
        t.data_mut()[2] = 1000.0;
        let x = g.constant(t);
        let (loss, _) = g.softmax_cross_entropy(x, &[2]).unwrap();
        assert!(g.value(loss).data()[0].abs() < 1e-12);
    }

    #[test]
    fn two_class_direct_evaluation() {
        let g = graph();
        let x = g.constant(Tensor::from_f64([1, 2], &[1.0, 2.0]).unwrap());
        let (loss, _) = g.softmax_cross_entropy(x, &[0]).unwrap();
        let e = std::f64::consts::E;
        let expect = -(e / (e + e * e)).ln();
        assert!((g.value(loss).data()[0] - expect).abs() < 1e-12);
        assert!((expect - (1.0 + e).ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let g = graph();
        let x = g.constant(Tensor::zeros([1, 3]));
        assert!(g.softmax_cross_entropy(x, &[3]).is_err());
    }

    #[test]
    fn rows_sum_to_one_for_wide_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let logits: Vec<f64> = (0..7 * 11).map(|_| rng.random_range(-50.0..50.0)).collect();
            let p = softmax_rows(&logits, 11);
            for row in p.chunks(11) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}

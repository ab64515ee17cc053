use crate::autograd::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Running statistics and hyper-parameters consumed by [`Graph::batch_norm`].
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> Graph<'_, T> {
    /// Batch normalisation over every axis except `axis`.
    ///
    /// In train mode the batch statistics normalise the input and the
    /// returned stats are the momentum-updated running estimates (unbiased
    /// variance). In eval mode only the running stats are used and `None` is
    /// returned.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        stats: &BnStats<T>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        let vx = self.value(x);
        if axis >= vx.ndim() {
            return Err(Error::InvalidArgument(format!(
                "batch norm axis {axis} out of {} dims",
                vx.ndim()
            )));
        }
        let c = vx.shape()[axis];
        let (vg, vb) = (self.value(gamma), self.value(beta));
        for (name, len) in [
            ("gamma", vg.len()),
            ("beta", vb.len()),
            ("running mean", stats.running_mean.len()),
            ("running var", stats.running_var.len()),
        ] {
            if len != c {
                return Err(Error::shape(format!("batch norm {name} features"), c, len));
            }
        }
        let outer: usize = vx.shape()[..axis].iter().product();
        let inner: usize = vx.shape()[axis + 1..].iter().product();
        let count = outer * inner;
        let eps = T::of(stats.epsilon);
        let data = vx.data();
        let at = move |o: usize, ch: usize, i: usize| (o * c + ch) * inner + i;

        let train = self.mode() == Mode::Train;
        let (mean, var): (Vec<T>, Vec<T>) = if train {
            let n = T::of(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for o in 0..outer {
                    s = s + data[at(o, ch, 0)..at(o, ch, 0) + inner].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut v = T::zero();
                for o in 0..outer {
                    for &x in &data[at(o, ch, 0)..at(o, ch, 0) + inner] {
                        v = v + (x - m) * (x - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / n;
            }
            (mean, var)
        } else {
            (stats.running_mean.clone(), stats.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = vec![T::zero(); vx.len()];
        for o in 0..outer {
            for ch in 0..c {
                let (m, s, gm, bt) = (mean[ch], inv_std[ch], vg.data()[ch], vb.data()[ch]);
                let base = at(o, ch, 0);
                for i in 0..inner {
                    y[base + i] = (data[base + i] - m) * s * gm + bt;
                }
            }
        }
        let updated = train.then(|| {
            let mom = T::of(stats.momentum);
            let unbias = if count > 1 {
                T::of(count as f64 / (count as f64 - 1.0))
            } else {
                T::one()
            };
            BnStats {
                running_mean: stats
                    .running_mean
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &m)| (T::one() - mom) * r + mom * m)
                    .collect(),
                running_var: stats
                    .running_var
                    .iter()
                    .zip(&var)
                    .map(|(&r, &v)| (T::one() - mom) * r + mom * v * unbias)
                    .collect(),
                momentum: stats.momentum,
                epsilon: stats.epsilon,
            }
        });
        let out = self.push(
            "batch_norm",
            Tensor::from_parts(vx.shape().to_vec(), y),
            &[x, gamma, beta],
            Box::new(move |cx| {
                let xd = cx.inputs[0].data();
                let gm = cx.inputs[1].data();
                let g = cx.grad;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut gx = cx.needs[0].then(|| vec![T::zero(); xd.len()]);
                let n = T::of(count as f64);
                for ch in 0..c {
                    let (m, s) = (mean[ch], inv_std[ch]);
                    let (mut sg, mut sgx) = (T::zero(), T::zero());
                    for o in 0..outer {
                        let base = at(o, ch, 0);
                        for i in 0..inner {
                            let xhat = (xd[base + i] - m) * s;
                            sg = sg + g[base + i];
                            sgx = sgx + g[base + i] * xhat;
                        }
                    }
                    dgamma[ch] = sgx;
                    dbeta[ch] = sg;
                    if let Some(gx) = &mut gx {
                        let k = gm[ch] * s;
                        for o in 0..outer {
                            let base = at(o, ch, 0);
                            for i in 0..inner {
                                gx[base + i] = if train {
                                    let xhat = (xd[base + i] - m) * s;
                                    k * (g[base + i] - sg / n - xhat * sgx / n)
                                } else {
                                    k * g[base + i]
                                };
                            }
                        }
                    }
                }
                vec![gx, cx.needs[1].then_some(dgamma), cx.needs[2].then_some(dbeta)]
            }),
        )?;
        Ok((out, updated))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats(c: usize) -> BnStats<f64> {
        BnStats {
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    #[test]
    fn train_mode_standardises_each_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Graph::<f64>::new(Mode::Train, rng.clone());
        let x = g.constant(Tensor::from_fn([4, 3, 2, 5], |_| rng.random_range(-3.0..5.0)));
        let gamma = g.constant(Tensor::full([3], 1.0));
        let beta = g.constant(Tensor::zeros([3]));
        let (y, upd) = g.batch_norm(x, gamma, beta, 1, &stats(3)).unwrap();
        assert!(upd.is_some());
        let y = g.value(y);
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| (0..10).map(move |i| (n, i)))
                .map(|(n, i)| y.data()[(n * 3 + ch) * 10 + i])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "var {v}");
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let x = g.constant(Tensor::from_f64([2, 2], &[0.5, -1.0, 3.0, 2.0]).unwrap());
        let gamma = g.constant(Tensor::full([2], 1.0));
        let beta = g.constant(Tensor::zeros([2]));
        let (y, upd) = g.batch_norm(x, gamma, beta, 1, &stats(2)).unwrap();
        assert!(upd.is_none());
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
    }

    #[test]
    fn two_value_batch_closed_form() {
        // one feature, batch {1, 3}: mean 2, variance 1
        let g = Graph::<f64>::new(Mode::Train, ChaCha8Rng::seed_from_u64(0));
        let x = g.constant(Tensor::from_f64([2, 1], &[1.0, 3.0]).unwrap());
        let gamma = g.constant(Tensor::full([1], 1.0));
        let beta = g.constant(Tensor::zeros([1]));
        let (y, _) = g.batch_norm(x, gamma, beta, 1, &stats(1)).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        let y = g.value(y);
        assert!((y.data()[0] + s).abs() < 1e-12);
        assert!((y.data()[1] - s).abs() < 1e-12);
    }

    #[test]
    fn feature_mismatch_is_error() {
        let g = Graph::<f64>::new(Mode::Train, ChaCha8Rng::seed_from_u64(0));
        let x = g.constant(Tensor::zeros([2, 3]));
        let gamma = g.constant(Tensor::full([2], 1.0));
        let beta = g.constant(Tensor::zeros([2]));
        assert!(g.batch_norm(x, gamma, beta, 1, &stats(2)).is_err());
    }
}

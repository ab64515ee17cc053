use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::conv::window_output;
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Graph<'_, T> {
    /// Max pooling over `N×C×T×H×W`. Padded cells never win; gradient goes
    /// to the first maximal cell in scan order.
    pub fn maxpool3d(
        &self,
        x: Var,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 5 {
            return Err(Error::InvalidShape(format!(
                "maxpool3d expects N×C×T×H×W input, got {:?}",
                vx.shape()
            )));
        }
        if kernel.iter().chain(&stride).any(|&v| v == 0) {
            return Err(Error::InvalidArgument("pool kernel and stride must be ≥ 1".into()));
        }
        let planes = vx.shape()[0] * vx.shape()[1];
        let inp = [vx.shape()[2], vx.shape()[3], vx.shape()[4]];
        for i in 0..3 {
            if padding[i] >= kernel[i] && padding[i] > 0 {
                return Err(Error::InvalidArgument("pool padding must be below kernel".into()));
            }
        }
        let out = window_output(inp, kernel, stride, padding)?;
        let in_plane: usize = inp.iter().product();
        let out_plane: usize = out.iter().product();
        let mut y = Vec::with_capacity(planes * out_plane);
        let mut arg = Vec::with_capacity(planes * out_plane);
        for pl in 0..planes {
            let src = &vx.data()[pl * in_plane..(pl + 1) * in_plane];
            for to in 0..out[0] {
                for ho in 0..out[1] {
                    for wo in 0..out[2] {
                        let mut best: Option<(usize, T)> = None;
                        for dt in 0..kernel[0] {
                            let ti = (to * stride[0] + dt) as isize - padding[0] as isize;
                            if ti < 0 || ti >= inp[0] as isize {
                                continue;
                            }
                            for dh in 0..kernel[1] {
                                let hi = (ho * stride[1] + dh) as isize - padding[1] as isize;
                                if hi < 0 || hi >= inp[1] as isize {
                                    continue;
                                }
                                for dw in 0..kernel[2] {
                                    let wi = (wo * stride[2] + dw) as isize - padding[2] as isize;
                                    if wi < 0 || wi >= inp[2] as isize {
                                        continue;
                                    }
                                    let idx = (ti as usize * inp[1] + hi as usize) * inp[2] + wi as usize;
                                    let v = src[idx];
                                    match best {
                                        Some((_, b)) if !(v > b) => {}
                                        _ => best = Some((idx, v)),
                                    }
                                }
                            }
                        }
                        let (idx, v) = best.expect("window overlaps input");
                        y.push(v);
                        arg.push(pl * in_plane + idx);
                    }
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape[2..].copy_from_slice(&out);
        let total = vx.len();
        self.push(
            "maxpool3d",
            Tensor::from_parts(shape, y),
            &[x],
            Box::new(move |c| {
                let mut g = vec![T::zero(); total];
                for (&i, &gv) in arg.iter().zip(c.grad) {
                    g[i] = g[i] + gv;
                }
                vec![Some(g)]
            }),
        )
    }

    /// Mean over the spatial axes of `N×C×T×H×W`, giving `N×C×T×1×1`.
    pub fn spatial_avgpool(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.ndim() != 5 {
            return Err(Error::InvalidShape("spatial_avgpool expects 5D input".into()));
        }
        let hw = vx.shape()[3] * vx.shape()[4];
        let inv = T::one() / T::of(hw as f64);
        let y: Vec<T> = vx
            .data()
            .chunks(hw)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let mut shape = vx.shape().to_vec();
        shape[3] = 1;
        shape[4] = 1;
        self.push(
            "spatial_avgpool",
            Tensor::from_parts(shape, y),
            &[x],
            Box::new(move |c| {
                vec![Some(
                    c.grad
                        .iter()
                        .flat_map(|&g| std::iter::repeat_n(g * inv, hw))
                        .collect(),
                )]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::autograd::{Graph, Mode};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph() -> Graph<'static, f64> {
        Graph::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn enumerated_windows() {
        let g = graph();
        let x = g.constant(Tensor::from_fn([1, 1, 1, 4, 4], |i| (i + 1) as f64));
        let y = g.maxpool3d(x, [1, 2, 2], [1, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn constant_input_constant_output() {
        let g = graph();
        let x = g.constant(Tensor::full([1, 2, 3, 6, 6], 0.7));
        let y = g.maxpool3d(x, [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(g.shape(y), vec![1, 2, 3, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn stem_pool_geometry() {
        let g = Graph::<f32>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let x = g.constant(Tensor::zeros([1, 2, 3, 56, 56]));
        let y = g.maxpool3d(x, [1, 3, 3], [1, 2, 2], [0, 1, 1]).unwrap();
        assert_eq!(g.shape(y), vec![1, 2, 3, 28, 28]);
    }

    #[test]
    fn oversized_kernel_is_error() {
        let g = graph();
        let x = g.constant(Tensor::zeros([1, 1, 1, 2, 2]));
        assert!(g.maxpool3d(x, [1, 3, 3], [1, 1, 1], [0, 0, 0]).is_err());
    }

    #[test]
    fn tie_routes_gradient_to_first_cell() {
        let g = graph();
        let x = g.input(Tensor::full([1, 1, 1, 2, 2], 1.0));
        let y = g.maxpool3d(x, [1, 2, 2], [1, 2, 2], [0, 0, 0]).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.of(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }
}

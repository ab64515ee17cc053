//! Spatiotemporal convolution via im2col + GEMM.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

const AXES: [&str; 3] = ["time", "height", "width"];

/// Geometry of a 3D convolution. 2D convolutions use a temporal extent of 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub bias: bool,
}

impl ConvSpec {
    pub fn new(out_channels: usize, in_channels: usize, kernel: [usize; 3]) -> Self {
        ConvSpec {
            out_channels,
            in_channels,
            kernel,
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            bias: false,
        }
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument("conv channels must be ≥ 1".into()));
        }
        for i in 0..3 {
            if self.kernel[i] == 0 || self.stride[i] == 0 {
                return Err(Error::InvalidArgument(format!(
                    "conv {} kernel and stride must be ≥ 1",
                    AXES[i]
                )));
            }
            if self.padding[i] >= self.kernel[i] {
                return Err(Error::InvalidArgument(format!(
                    "conv {} padding {} must be smaller than kernel {}",
                    AXES[i], self.padding[i], self.kernel[i]
                )));
            }
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kt, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kt, kh, kw]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// Output extents `floor((L + 2p − k)/s) + 1` per axis.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        window_output(input, self.kernel, self.stride, self.padding)
    }
}

pub(crate) fn window_output(
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    padding: [usize; 3],
) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for i in 0..3 {
        let padded = input[i] + 2 * padding[i];
        if kernel[i] > padded {
            return Err(Error::InvalidArgument(format!(
                "{} kernel {} exceeds padded input extent {}",
                AXES[i], kernel[i], padded
            )));
        }
        out[i] = (padded - kernel[i]) / stride[i] + 1;
    }
    Ok(out)
}

struct Geometry {
    c: usize,
    inp: [usize; 3],
    out: [usize; 3],
    spec: ConvSpec,
}

impl Geometry {
    fn k(&self) -> usize {
        self.spec.fan_in()
    }

    fn p(&self) -> usize {
        self.out.iter().product()
    }

    fn sample_len(&self) -> usize {
        self.c * self.inp.iter().product::<usize>()
    }

    /// Unfold one sample (C×T×H×W) into a K×P column matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let [t_in, h_in, w_in] = self.inp;
        let [t_out, h_out, w_out] = self.out;
        let [kt, kh, kw] = self.spec.kernel;
        let [st, sh, sw] = self.spec.stride;
        let [pt, ph, pw] = self.spec.padding;
        let p = self.p();
        let mut row = 0;
        for c in 0..self.c {
            let xc = &x[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let dst = &mut cols[row * p..(row + 1) * p];
                        let mut o = 0;
                        for to in 0..t_out {
                            let ti = (to * st + dt) as isize - pt as isize;
                            for ho in 0..h_out {
                                let hi = (ho * sh + dh) as isize - ph as isize;
                                let line = &mut dst[o..o + w_out];
                                o += w_out;
                                if ti < 0 || ti >= t_in as isize || hi < 0 || hi >= h_in as isize {
                                    line.fill(T::zero());
                                    continue;
                                }
                                let src = &xc[(ti as usize * h_in + hi as usize) * w_in..][..w_in];
                                for (wo, v) in line.iter_mut().enumerate() {
                                    let wi = (wo * sw + dw) as isize - pw as isize;
                                    *v = if wi >= 0 && wi < w_in as isize {
                                        src[wi as usize]
                                    } else {
                                        T::zero()
                                    };
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Fold a K×P column gradient back into one sample, accumulating.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let [t_in, h_in, w_in] = self.inp;
        let [t_out, h_out, w_out] = self.out;
        let [kt, kh, kw] = self.spec.kernel;
        let [st, sh, sw] = self.spec.stride;
        let [pt, ph, pw] = self.spec.padding;
        let p = self.p();
        let mut row = 0;
        for c in 0..self.c {
            let xc = &mut dx[c * t_in * h_in * w_in..(c + 1) * t_in * h_in * w_in];
            for dt in 0..kt {
                for dh in 0..kh {
                    for dw in 0..kw {
                        let src = &cols[row * p..(row + 1) * p];
                        let mut o = 0;
                        for to in 0..t_out {
                            let ti = (to * st + dt) as isize - pt as isize;
                            for ho in 0..h_out {
                                let hi = (ho * sh + dh) as isize - ph as isize;
                                let line = &src[o..o + w_out];
                                o += w_out;
                                if ti < 0 || ti >= t_in as isize || hi < 0 || hi >= h_in as isize {
                                    continue;
                                }
                                let dst = &mut xc[(ti as usize * h_in + hi as usize) * w_in..][..w_in];
                                for (wo, &v) in line.iter().enumerate() {
                                    let wi = (wo * sw + dw) as isize - pw as isize;
                                    if wi >= 0 && wi < w_in as isize {
                                        dst[wi as usize] = dst[wi as usize] + v;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<'_, T> {
    /// 3D cross-correlation of `N×C×T×H×W` input with `O×C×kt×kh×kw` weights.
    pub fn conv3d(&self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.ndim() != 5 {
            return Err(Error::InvalidShape(format!(
                "conv3d expects N×C×T×H×W input, got {:?}",
                vx.shape()
            )));
        }
        if vx.shape()[1] != spec.in_channels {
            return Err(Error::shape("conv3d input channels", spec.in_channels, vx.shape()[1]));
        }
        let ws = spec.weight_shape();
        for (i, (&want, &got)) in ws.iter().zip(vw.shape()).enumerate() {
            if want != got {
                let axis = ["out channels", "in channels", "kernel time", "kernel height", "kernel width"][i];
                return Err(Error::shape(format!("conv3d weight {axis}"), want, got));
            }
        }
        if vw.ndim() != 5 {
            return Err(Error::InvalidShape("conv3d weights must be 5D".into()));
        }
        vx.check_finite("conv3d input")?;
        let n = vx.shape()[0];
        let inp = [vx.shape()[2], vx.shape()[3], vx.shape()[4]];
        let out = spec.output_extent(inp)?;
        let geo = Geometry {
            c: spec.in_channels,
            inp,
            out,
            spec,
        };
        let (k, p, o) = (geo.k(), geo.p(), spec.out_channels);
        let bias = match b {
            Some(b) => {
                let vb = self.value(b);
                if vb.len() != o {
                    return Err(Error::shape("conv3d bias", o, vb.len()));
                }
                Some(vb)
            }
            None => None,
        };
        let mut y = vec![T::zero(); n * o * p];
        let mut cols = vec![T::zero(); k * p];
        let slen = geo.sample_len();
        for s in 0..n {
            geo.im2col(&vx.data()[s * slen..(s + 1) * slen], &mut cols);
            let ys = &mut y[s * o * p..(s + 1) * o * p];
            let beta = if let Some(bv) = &bias {
                for (ch, chunk) in ys.chunks_mut(p).enumerate() {
                    chunk.fill(bv.data()[ch]);
                }
                T::one()
            } else {
                T::zero()
            };
            gemm(o, k, p, T::one(), vw.data(), false, &cols, false, beta, ys);
        }
        let shape = vec![n, o, out[0], out[1], out[2]];
        let parents: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(
            "conv3d",
            Tensor::from_parts(shape, y),
            &parents,
            Box::new(move |c| {
                let (xv, wv) = (c.inputs[0].data(), c.inputs[1].data());
                let mut gx = c.needs[0].then(|| vec![T::zero(); n * slen]);
                let mut gw = c.needs[1].then(|| vec![T::zero(); o * k]);
                let mut cols = vec![T::zero(); k * p];
                let mut dcols = vec![T::zero(); if gx.is_some() { k * p } else { 0 }];
                for s in 0..n {
                    let gs = &c.grad[s * o * p..(s + 1) * o * p];
                    if let Some(gw) = &mut gw {
                        geo.im2col(&xv[s * slen..(s + 1) * slen], &mut cols);
                        gemm(o, p, k, T::one(), gs, false, &cols, true, T::one(), gw);
                    }
                    if let Some(gx) = &mut gx {
                        gemm(k, o, p, T::one(), wv, true, gs, false, T::zero(), &mut dcols);
                        geo.col2im(&dcols, &mut gx[s * slen..(s + 1) * slen]);
                    }
                }
                let mut grads = vec![gx, gw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| {
                        let mut gb = vec![T::zero(); o];
                        for s in 0..n {
                            for (ch, chunk) in c.grad[s * o * p..(s + 1) * o * p].chunks(p).enumerate() {
                                gb[ch] = gb[ch] + chunk.iter().copied().sum::<T>();
                            }
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stem_geometry_keeps_time() {
        let spec = ConvSpec::new(64, 1, [5, 7, 7])
            .stride([1, 2, 2])
            .padding([2, 3, 3]);
        assert_eq!(spec.output_extent([29, 112, 112]).unwrap(), [29, 56, 56]);
    }

    #[test]
    fn padding_must_be_below_kernel() {
        let spec = ConvSpec::new(1, 1, [1, 3, 3]).padding([1, 1, 1]);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::<f64>::new(Mode::Eval, rng.clone());
        let spec = ConvSpec::new(4, 2, [3, 3, 3]).padding([1, 1, 1]).with_bias(true);
        let x = g.constant(Tensor::from_fn([1, 2, 4, 5, 5], |_| rng.random_range(-1.0..1.0)));
        let w = g.constant(Tensor::zeros(spec.weight_shape()));
        let b = g.constant(Tensor::zeros([4]));
        let y = g.conv3d(x, w, Some(b), spec).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.shape(y), vec![1, 4, 4, 5, 5]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let g = Graph::<f32>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let spec = ConvSpec::new(4, 2, [1, 3, 3]);
        let x = g.constant(Tensor::zeros([1, 3, 2, 5, 5]));
        let w = g.constant(Tensor::zeros(spec.weight_shape()));
        let err = g.conv3d(x, w, None, spec).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");
    }

    #[test]
    fn non_finite_input_rejected() {
        let g = Graph::<f32>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let spec = ConvSpec::new(1, 1, [1, 1, 1]);
        let mut t = Tensor::zeros([1, 1, 1, 2, 2]);
        t.data_mut()[1] = f32::NAN;
        let x = g.constant(t);
        let w = g.constant(Tensor::zeros(spec.weight_shape()));
        assert!(matches!(g.conv3d(x, w, None, spec), Err(Error::NonFinite(_))));
    }
}

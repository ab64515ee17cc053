use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Move axes so that output axis `i` is input axis `axes[i]`.
pub fn permute_data<T: Copy>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    if nd == 0 {
        return (data.to_vec(), out_shape);
    }
    // Iterate output in row-major order, innermost axis unrolled.
    let inner = out_shape[nd - 1];
    let inner_stride = src_strides[nd - 1];
    let mut idx = vec![0usize; nd - 1];
    let outer: usize = out_shape[..nd - 1].iter().product();
    for _ in 0..outer {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        for j in 0..inner {
            out.push(data[base + j * inner_stride]);
        }
        for ax in (0..nd - 1).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    (out, out_shape)
}

impl<T: Scalar> Graph<'_, T> {
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let t = (*va).clone().reshape(shape.to_vec())?;
        self.push(
            "reshape",
            t,
            &[a],
            Box::new(|c| vec![Some(c.grad.to_vec())]),
        )
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Result<Var> {
        let va = self.value(a);
        let nd = va.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::InvalidArgument(format!(
                "permute: {axes:?} is not a permutation of {nd} axes"
            )));
        }
        let (data, shape) = permute_data(va.data(), va.shape(), axes);
        let mut inverse = vec![0; nd];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        let out_shape = shape.clone();
        self.push(
            "permute",
            Tensor::from_parts(shape, data),
            &[a],
            Box::new(move |c| vec![Some(permute_data(c.grad, &out_shape, &inverse).0)]),
        )
    }

    /// Concatenate along the trailing axis; leading extents must agree.
    pub fn concat_last(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let lead = &vals[0].shape()[..vals[0].ndim() - 1];
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = vals.iter().map(|v| *v.shape().last().unwrap()).collect();
        for (i, v) in vals.iter().enumerate() {
            if &v.shape()[..v.ndim() - 1] != lead {
                return Err(Error::InvalidShape(format!(
                    "concat: part {i} has leading shape {:?}, expected {lead:?}",
                    &v.shape()[..v.ndim() - 1]
                )));
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, &w) in vals.iter().zip(&widths) {
                out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push(
            "concat",
            Tensor::from_parts(shape, out),
            parts,
            Box::new(move |c| {
                let mut grads: Vec<Option<Vec<T>>> = widths
                    .iter()
                    .zip(c.needs)
                    .map(|(&w, &n)| n.then(|| Vec::with_capacity(rows * w)))
                    .collect();
                for r in 0..rows {
                    let mut off = r * total;
                    for (g, &w) in grads.iter_mut().zip(&widths) {
                        if let Some(g) = g {
                            g.extend_from_slice(&c.grad[off..off + w]);
                        }
                        off += w;
                    }
                }
                grads
            }),
        )
    }

    /// Concatenate along axis 0; trailing extents must agree.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let tail = vals[0].shape()[1..].to_vec();
        for (i, v) in vals.iter().enumerate() {
            if v.shape()[1..] != tail[..] {
                return Err(Error::InvalidShape(format!(
                    "concat_rows: part {i} has trailing shape {:?}, expected {tail:?}",
                    &v.shape()[1..]
                )));
            }
        }
        let sizes: Vec<usize> = vals.iter().map(|v| v.len()).collect();
        let mut out = Vec::with_capacity(sizes.iter().sum());
        for v in &vals {
            out.extend_from_slice(v.data());
        }
        let mut shape = vec![vals.iter().map(|v| v.shape()[0]).sum()];
        shape.extend_from_slice(&tail);
        self.push(
            "concat_rows",
            Tensor::from_parts(shape, out),
            parts,
            Box::new(move |c| {
                let mut off = 0;
                sizes
                    .iter()
                    .zip(c.needs)
                    .map(|(&n, &need)| {
                        let g = need.then(|| c.grad[off..off + n].to_vec());
                        off += n;
                        g
                    })
                    .collect()
            }),
        )
    }

    /// Columns `start..end` of the trailing axis.
    pub fn slice_last(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        let d = *va.shape().last().unwrap();
        if start >= end || end > d {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of trailing extent {d}"
            )));
        }
        let w = end - start;
        let rows = va.len() / d;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&va.data()[r * d + start..r * d + end]);
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        self.push(
            "slice",
            Tensor::from_parts(shape, out),
            &[a],
            Box::new(move |c| {
                let mut g = vec![T::zero(); rows * d];
                for r in 0..rows {
                    g[r * d + start..r * d + end].copy_from_slice(&c.grad[r * w..(r + 1) * w]);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Select rows along axis 0; `None` produces a zero row.
    pub fn gather_rows(&self, a: Var, index: &[Option<usize>]) -> Result<Var> {
        let va = self.value(a);
        let rows = va.shape()[0];
        let w = va.len() / rows;
        if index.is_empty() {
            return Err(Error::InvalidArgument("gather of zero rows".into()));
        }
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather row {bad} out of {rows}"
            )));
        }
        let mut out = vec![T::zero(); index.len() * w];
        for (dst, src) in index.iter().enumerate() {
            if let Some(s) = src {
                out[dst * w..(dst + 1) * w].copy_from_slice(&va.data()[s * w..(s + 1) * w]);
            }
        }
        let mut shape = va.shape().to_vec();
        shape[0] = index.len();
        let index = index.to_vec();
        self.push(
            "gather_rows",
            Tensor::from_parts(shape, out),
            &[a],
            Box::new(move |c| {
                let mut g = vec![T::zero(); rows * w];
                for (dst, src) in index.iter().enumerate() {
                    if let Some(s) = *src {
                        let row = &c.grad[dst * w..(dst + 1) * w];
                        g[s * w..(s + 1) * w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(a, &b)| *a = *a + b);
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Mean over the first `lengths[n]` steps of a time-major `T×N×D` tensor.
    pub fn masked_time_mean(&self, a: Var, lengths: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if va.ndim() != 3 {
            return Err(Error::InvalidShape(format!(
                "time mean expects T×N×D, got {:?}",
                va.shape()
            )));
        }
        let (t, n, d) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        if lengths.len() != n {
            return Err(Error::shape("batch", n, lengths.len()));
        }
        if lengths.iter().any(|&l| l == 0 || l > t) {
            return Err(Error::InvalidArgument(format!(
                "sequence lengths {lengths:?} must lie in 1..={t}"
            )));
        }
        let mut out = vec![T::zero(); n * d];
        for (b, &len) in lengths.iter().enumerate() {
            let inv = T::one() / T::of(len as f64);
            let acc = &mut out[b * d..(b + 1) * d];
            for step in 0..len {
                let row = &va.data()[(step * n + b) * d..(step * n + b + 1) * d];
                acc.iter_mut().zip(row).for_each(|(a, &x)| *a = *a + x);
            }
            acc.iter_mut().for_each(|a| *a = *a * inv);
        }
        let lengths = lengths.to_vec();
        self.push(
            "time_mean",
            Tensor::from_parts(vec![n, d], out),
            &[a],
            Box::new(move |c| {
                let mut g = vec![T::zero(); t * n * d];
                for (b, &len) in lengths.iter().enumerate() {
                    let inv = T::one() / T::of(len as f64);
                    let src = &c.grad[b * d..(b + 1) * d];
                    for step in 0..len {
                        let dst = &mut g[(step * n + b) * d..(step * n + b + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(a, &x)| *a = x * inv);
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

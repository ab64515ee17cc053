use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Scalar, Tensor};

impl<T: Scalar> Graph<'_, T> {
    /// `a (M×K) · b (K×N)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 {
            return Err(Error::InvalidShape("matmul expects 2D operands".into()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        if vb.shape()[0] != k {
            return Err(Error::shape("matmul inner axis", k, vb.shape()[0]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), va.data(), false, vb.data(), false, T::zero(), &mut out);
        self.push(
            "matmul",
            Tensor::from_parts(vec![m, n], out),
            &[a, b],
            Box::new(move |c| {
                let (x, y) = (c.inputs[0].data(), c.inputs[1].data());
                let ga = c.needs[0].then(|| {
                    let mut g = vec![T::zero(); m * k];
                    gemm(m, n, k, T::one(), c.grad, false, y, true, T::zero(), &mut g);
                    g
                });
                let gb = c.needs[1].then(|| {
                    let mut g = vec![T::zero(); k * n];
                    gemm(k, m, n, T::one(), x, true, c.grad, false, T::zero(), &mut g);
                    g
                });
                vec![ga, gb]
            }),
        )
    }

    /// Affine map on the trailing axis: `x (…×D) · wᵀ (D×D') + b`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vw.ndim() != 2 {
            return Err(Error::InvalidShape("linear weights must be 2D".into()));
        }
        let (dout, din) = (vw.shape()[0], vw.shape()[1]);
        let d = *vx.shape().last().unwrap();
        if d != din {
            return Err(Error::shape("linear input features", din, d));
        }
        let rows = vx.len() / din;
        let mut out = vec![T::zero(); rows * dout];
        if let Some(b) = b {
            let vb = self.value(b);
            if vb.len() != dout {
                return Err(Error::shape("linear bias", dout, vb.len()));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(vb.data());
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        gemm(rows, din, dout, T::one(), vx.data(), false, vw.data(), true, beta, &mut out);
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let parents: Vec<Var> = std::iter::once(x).chain(Some(w)).chain(b).collect();
        self.push(
            "linear",
            Tensor::from_parts(shape, out),
            &parents,
            Box::new(move |c| {
                let (xv, wv) = (c.inputs[0].data(), c.inputs[1].data());
                let gx = c.needs[0].then(|| {
                    let mut g = vec![T::zero(); rows * din];
                    gemm(rows, dout, din, T::one(), c.grad, false, wv, false, T::zero(), &mut g);
                    g
                });
                let gw = c.needs[1].then(|| {
                    let mut g = vec![T::zero(); dout * din];
                    gemm(dout, rows, din, T::one(), c.grad, true, xv, false, T::zero(), &mut g);
                    g
                });
                let mut grads = vec![gx, gw];
                if c.inputs.len() == 3 {
                    grads.push(c.needs[2].then(|| {
                        let mut g = vec![T::zero(); dout];
                        for row in c.grad.chunks(dout) {
                            g.iter_mut().zip(row).for_each(|(a, &v)| *a = *a + v);
                        }
                        g
                    }));
                }
                grads
            }),
        )
    }
}

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::elementwise::sigmoid;
use crate::tensor::{Scalar, Tensor};

impl<T: Scalar> Graph<'_, T> {
    /// Fused LSTM cell nonlinearity.
    ///
    /// `pre` holds the `N×4H` gate pre-activations in (input, forget, cell,
    /// output) order; `c_prev` is `N×H`. Returns `N×2H` holding `[h' | c']`.
    pub fn lstm_cell(&self, pre: Var, c_prev: Var) -> Result<Var> {
        let (vp, vc) = (self.value(pre), self.value(c_prev));
        if vp.ndim() != 2 || vc.ndim() != 2 {
            return Err(Error::InvalidShape("lstm_cell expects 2D operands".into()));
        }
        let (n, h) = (vc.shape()[0], vc.shape()[1]);
        if vp.shape() != [n, 4 * h] {
            return Err(Error::shape("lstm gate width", 4 * h, vp.shape()[1]));
        }
        let mut out = vec![T::zero(); n * 2 * h];
        for r in 0..n {
            let p = &vp.data()[r * 4 * h..(r + 1) * 4 * h];
            let cp = &vc.data()[r * h..(r + 1) * h];
            let o = &mut out[r * 2 * h..(r + 1) * 2 * h];
            for j in 0..h {
                let i = sigmoid(p[j]);
                let f = sigmoid(p[h + j]);
                let g = p[2 * h + j].tanh();
                let og = sigmoid(p[3 * h + j]);
                let c = f * cp[j] + i * g;
                o[j] = og * c.tanh();
                o[h + j] = c;
            }
        }
        self.push(
            "lstm_cell",
            Tensor::from_parts(vec![n, 2 * h], out),
            &[pre, c_prev],
            Box::new(move |cx| {
                let pd = cx.inputs[0].data();
                let cd = cx.inputs[1].data();
                let od = cx.output.data();
                let mut gp = vec![T::zero(); n * 4 * h];
                let mut gc = vec![T::zero(); n * h];
                for r in 0..n {
                    let p = &pd[r * 4 * h..(r + 1) * 4 * h];
                    let cp = &cd[r * h..(r + 1) * h];
                    let gout = &cx.grad[r * 2 * h..(r + 1) * 2 * h];
                    for j in 0..h {
                        let i = sigmoid(p[j]);
                        let f = sigmoid(p[h + j]);
                        let g = p[2 * h + j].tanh();
                        let og = sigmoid(p[3 * h + j]);
                        let c = od[r * 2 * h + h + j];
                        let tc = c.tanh();
                        let dh = gout[j];
                        let dc = gout[h + j] + dh * og * (T::one() - tc * tc);
                        let q = &mut gp[r * 4 * h..(r + 1) * 4 * h];
                        q[j] = dc * g * i * (T::one() - i);
                        q[h + j] = dc * cp[j] * f * (T::one() - f);
                        q[2 * h + j] = dc * i * (T::one() - g * g);
                        q[3 * h + j] = dh * tc * og * (T::one() - og);
                        gc[r * h + j] = dc * f;
                    }
                }
                vec![cx.needs[0].then_some(gp), cx.needs[1].then_some(gc)]
            }),
        )
    }
}

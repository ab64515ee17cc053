use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidShape(format!(
            "{op}: operand shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<'_, T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("add", &va, &vb)?;
        let out: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        self.push(
            "add",
            Tensor::from_parts(va.shape().to_vec(), out),
            &[a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.to_vec()),
                    c.needs[1].then(|| c.grad.to_vec()),
                ]
            }),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("sub", &va, &vb)?;
        let out: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x - y).collect();
        self.push(
            "sub",
            Tensor::from_parts(va.shape().to_vec(), out),
            &[a, b],
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.to_vec()),
                    c.needs[1].then(|| c.grad.iter().map(|&g| -g).collect()),
                ]
            }),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape("mul", &va, &vb)?;
        let out: Vec<T> = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        self.push(
            "mul",
            Tensor::from_parts(va.shape().to_vec(), out),
            &[a, b],
            Box::new(|c| {
                let (x, y) = (c.inputs[0].data(), c.inputs[1].data());
                vec![
                    c.needs[0].then(|| c.grad.iter().zip(y).map(|(&g, &v)| g * v).collect()),
                    c.needs[1].then(|| c.grad.iter().zip(x).map(|(&g, &v)| g * v).collect()),
                ]
            }),
        )
    }

    /// Elementwise product with a non-differentiable tensor of the same shape.
    pub fn mul_const(&self, a: Var, mask: Tensor<T>) -> Result<Var> {
        let va = self.value(a);
        same_shape("mul_const", &va, &mask)?;
        let out: Vec<T> = va
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&x, &m)| x * m)
            .collect();
        self.push(
            "mul_const",
            Tensor::from_parts(va.shape().to_vec(), out),
            &[a],
            Box::new(move |c| {
                vec![Some(
                    c.grad.iter().zip(mask.data()).map(|(&g, &m)| g * m).collect(),
                )]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let va = self.value(a);
        self.push(
            "scale",
            va.map(|x| x * s),
            &[a],
            Box::new(move |c| vec![Some(c.grad.iter().map(|&g| g * s).collect())]),
        )
    }

    /// Add a vector along the trailing axis.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let d = *va.shape().last().unwrap();
        if vb.len() != d {
            return Err(Error::shape("bias", d, vb.len()));
        }
        let out: Vec<T> = va
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &b)| x + b))
            .collect();
        self.push(
            "add_bias",
            Tensor::from_parts(va.shape().to_vec(), out),
            &[a, bias],
            Box::new(move |c| {
                let gb = c.needs[1].then(|| {
                    let mut gb = vec![T::zero(); d];
                    for row in c.grad.chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                    }
                    gb
                });
                vec![c.needs[0].then(|| c.grad.to_vec()), gb]
            }),
        )
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        self.push(
            "relu",
            va.map(|x| if x > T::zero() { x } else { T::zero() }),
            &[a],
            Box::new(|c| {
                vec![Some(
                    c.grad
                        .iter()
                        .zip(c.output.data())
                        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        self.push(
            "sigmoid",
            va.map(sigmoid),
            &[a],
            Box::new(|c| {
                vec![Some(
                    c.grad
                        .iter()
                        .zip(c.output.data())
                        .map(|(&g, &y)| g * y * (T::one() - y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        self.push(
            "tanh",
            va.map(|x| x.tanh()),
            &[a],
            Box::new(|c| {
                vec![Some(
                    c.grad
                        .iter()
                        .zip(c.output.data())
                        .map(|(&g, &y)| g * (T::one() - y * y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let n = va.len();
        self.push(
            "sum",
            Tensor::scalar(va.sum()),
            &[a],
            Box::new(move |c| vec![Some(vec![c.grad[0]; n])]),
        )
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

//! Reverse-mode automatic differentiation over a single-writer tape.
//!
//! A [`Graph`] records every operation of one forward pass. Values are held
//! behind `Rc` so parameters and inputs enter the tape without copies.
//! [`Graph::backward`] walks the tape once in reverse creation order, which
//! fixes the gradient reduction order and makes results bitwise
//! reproducible.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// Inputs handed to a backward closure.
pub(crate) struct BackCtx<'a, T> {
    pub grad: &'a [T],
    pub inputs: &'a [Rc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackCtx<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    label: &'static str,
}

/// Computation tape for one forward/backward pass.
pub struct Graph<'s, T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    store: Option<&'s ParamStore<T>>,
    bound: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    rng: RefCell<ChaCha8Rng>,
    mode: Mode,
    check_finite: bool,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(mode: Mode, rng: ChaCha8Rng) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            store: None,
            bound: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            rng: RefCell::new(rng),
            mode,
            check_finite: true,
        }
    }

    pub fn with_store(store: &'s ParamStore<T>, mode: Mode, rng: ChaCha8Rng) -> Self {
        let mut g = Graph::new(mode, rng);
        g.store = Some(store);
        g
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode.is_train()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draw from the graph's seeded stream.
    pub fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    pub fn uniform(&self) -> f64 {
        self.rng.borrow_mut().random::<f64>()
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.leaf(Rc::new(t), false)
    }

    /// Leaf that receives gradients (used by gradient checks).
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.leaf(Rc::new(t), true)
    }

    fn leaf(&self, t: Rc<Tensor<T>>, needs_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: t,
            parents: Vec::new(),
            backward: None,
            needs_grad,
            label: "leaf",
        });
        Var(nodes.len() - 1)
    }

    /// Bind a stored parameter to this tape; repeated calls reuse the same node.
    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow().get(&id) {
            return *v;
        }
        let store = self.store.expect("graph has no parameter store");
        let entry = store.entry(id);
        let v = self.leaf(entry.value_rc(), entry.trainable());
        self.bound.borrow_mut().insert(id, v);
        v
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store.expect("graph has no parameter store")
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Queue a non-trainable buffer write (batch-norm running statistics).
    pub(crate) fn push_buffer_update(&self, id: ParamId, t: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, t));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    pub(crate) fn push(
        &self,
        label: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: BackwardFn<T>,
    ) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite(format!("forward output of {label}")));
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.0).collect(),
            backward: if needs_grad { Some(backward) } else { None },
            needs_grad,
            label,
        });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a scalar. Returns per-node gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        // Leaves have no backward closure, so their gradients stay in place;
        // interior gradients are dropped once propagated.
        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            let Some(back) = &node.backward else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<Rc<Tensor<T>>> =
                node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].needs_grad).collect();
            let ctx = BackCtx {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            };
            let parent_grads = back(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.len(), nodes[p].value.len(), "grad size from {}", node.label);
                if self.check_finite && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient from {}", node.label)));
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let param_map = self.bound.borrow().clone();
        Ok(Gradients { grads, param_map })
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_map: HashMap<ParamId, Var>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient per bound parameter, ordered by parameter id.
    pub fn params(&self) -> Vec<(ParamId, &[T])> {
        let mut out: Vec<(ParamId, &[T])> = self
            .param_map
            .iter()
            .filter_map(|(&id, &v)| self.of(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gradient_accumulates_over_fanout() {
        let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let x = g.input(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let s = g.sum(z).unwrap();
        let grads = g.backward(s).unwrap();
        // d/dx (x^2 + x) = 2x + 1
        assert_eq!(grads.of(x).unwrap(), &[3.0, 5.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let c = g.constant(Tensor::from_f64([1], &[2.0]).unwrap());
        let x = g.input(Tensor::from_f64([1], &[3.0]).unwrap());
        let s = g.sum(g.mul(c, x).unwrap()).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.of(c).is_none());
        assert_eq!(grads.of(x).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let g = Graph::<f64>::new(Mode::Eval, ChaCha8Rng::seed_from_u64(0));
        let x = g.input(Tensor::zeros([3]));
        assert!(g.backward(x).is_err());
    }
}

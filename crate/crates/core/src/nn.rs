//! Parameterised layers: thin bindings between [`ParamStore`] entries and
//! graph operations.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::ops::{BnStats, ConvSpec};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(&format!("{name}.weight"), &[out_dim, in_dim], in_dim, rng)?;
        let bias = if bias {
            Some(store.add_uniform(&format!("{name}.bias"), &[out_dim], in_dim, rng)?)
        } else {
            None
        };
        Ok(Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        g.linear(x, g.param(self.weight), self.bias.map(|b| g.param(b)))
    }
}

#[derive(Clone, Debug)]
pub struct Conv3d {
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv3d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ConvSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.fan_in();
        let weight = store.add_uniform(&format!("{name}.weight"), &spec.weight_shape(), fan_in, rng)?;
        let bias = if spec.bias {
            Some(store.add_uniform(&format!("{name}.bias"), &[spec.out_channels], fan_in, rng)?)
        } else {
            None
        };
        Ok(Conv3d { spec, weight, bias })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        g.conv3d(x, g.param(self.weight), self.bias.map(|b| g.param(b)), self.spec)
    }
}

/// Batch normalisation layer: learned affine plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub feature_count: usize,
    /// Axis holding the features.
    pub axis: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        feature_count: usize,
        axis: usize,
    ) -> Result<Self> {
        Ok(BatchNorm {
            feature_count,
            axis,
            gamma: store.add(&format!("{name}.gamma"), Tensor::full([feature_count], T::one()))?,
            beta: store.add(&format!("{name}.beta"), Tensor::zeros([feature_count]))?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros([feature_count]))?,
            running_var: store
                .add_buffer(&format!("{name}.running_var"), Tensor::full([feature_count], T::one()))?,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        self.forward_axis(g, x, self.axis)
    }

    pub fn forward_axis<T: Scalar>(&self, g: &Graph<'_, T>, x: Var, axis: usize) -> Result<Var> {
        let store = g.store();
        let stats = BnStats {
            running_mean: store.get(self.running_mean).data().to_vec(),
            running_var: store.get(self.running_var).data().to_vec(),
            momentum: self.momentum,
            epsilon: self.epsilon,
        };
        let (y, updated) = g.batch_norm(x, g.param(self.gamma), g.param(self.beta), axis, &stats)?;
        if let Some(s) = updated {
            let c = self.feature_count;
            g.push_buffer_update(self.running_mean, Tensor::from_parts(vec![c], s.running_mean));
            g.push_buffer_update(self.running_var, Tensor::from_parts(vec![c], s.running_var));
        }
        Ok(y)
    }
}

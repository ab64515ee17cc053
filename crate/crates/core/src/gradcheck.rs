//! Central-difference gradient oracle.
//!
//! Compares reverse-mode gradients against `(f(x+h) − f(x−h)) / 2h`
//! elementwise and reports the maximum relative error, using
//! `max(|analytic|, |numeric|, 1e-8)` as the denominator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Graph, Mode, Var};
use crate::backend::{BackendConfig, BiLstmBackend};
use crate::error::{Error, Result};
use crate::ops::{BnStats, ConvSpec};
use crate::params::ParamStore;
use crate::recurrent::{LstmCell, LstmState, Seq};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub mode: Mode,
    /// Seed of the graph stream; fixed so dropout masks repeat across evaluations.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            mode: Mode::Train,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Which input (or parameter name) holds the worst element.
    pub worst: String,
}

impl GradCheckReport {
    fn observe(&mut self, analytic: f64, numeric: f64, what: impl FnOnce() -> String) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        self.checked += 1;
        if rel > self.max_relative_error || self.worst.is_empty() {
            self.max_relative_error = self.max_relative_error.max(rel);
            self.worst = what();
        }
    }
}

fn scalar_of(g: &Graph<'_, f64>, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs a scalar objective, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// Check an objective built from leaf inputs.
pub fn finite_diff_check<F>(f: F, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new(opts.mode, ChaCha8Rng::seed_from_u64(opts.seed));
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, &vars)?;
        scalar_of(&g, out)
    };

    let g = Graph::new(opts.mode, ChaCha8Rng::seed_from_u64(opts.seed));
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&g, &vars)?;
    let base = scalar_of(&g, out)?;
    if eval(inputs)?.to_bits() != base.to_bits() {
        return Err(Error::Numerical(
            "objective is not deterministic under a fixed seed".into(),
        ));
    }
    let grads = g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.of(*v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + opts.step;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = x0 - opts.step;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * opts.step);
            report.observe(analytic[j], numeric, || format!("input {i}[{j}]"));
        }
    }
    Ok(report)
}

/// Check an objective against every trainable parameter of `store`.
pub fn finite_diff_check_params<F>(
    store: &mut ParamStore<f64>,
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph<'_, f64>) -> Result<Var>,
{
    fn eval<F>(store: &ParamStore<f64>, f: &F, opts: GradCheckOptions) -> Result<f64>
    where
        F: Fn(&Graph<'_, f64>) -> Result<Var>,
    {
        let g = Graph::with_store(store, opts.mode, ChaCha8Rng::seed_from_u64(opts.seed));
        let out = f(&g)?;
        scalar_of(&g, out)
    }

    let (base, analytic) = {
        let g = Graph::with_store(store, opts.mode, ChaCha8Rng::seed_from_u64(opts.seed));
        let out = f(&g)?;
        let base = scalar_of(&g, out)?;
        let grads = g.backward(out)?;
        let analytic: Vec<_> = grads.params().into_iter().map(|(id, g)| (id, g.to_vec())).collect();
        (base, analytic)
    };
    if eval(store, &f, opts)?.to_bits() != base.to_bits() {
        return Err(Error::Numerical(
            "objective is not deterministic under a fixed seed".into(),
        ));
    }
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable()).collect();
    for id in ids {
        let grad = analytic
            .iter()
            .find(|(pid, _)| *pid == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; store.get(id).len()]);
        let name = store.entry(id).name().to_string();
        for j in 0..grad.len() {
            let x0 = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = x0 + opts.step;
            let fp = eval(store, &f, opts)?;
            store.get_mut(id).data_mut()[j] = x0 - opts.step;
            let fm = eval(store, &f, opts)?;
            store.get_mut(id).data_mut()[j] = x0;
            let numeric = (fp - fm) / (2.0 * opts.step);
            report.observe(grad[j], numeric, || format!("{name}[{j}]"));
        }
    }
    Ok(report)
}

/// Worst relative error of one operation over a run of seeds.
#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub name: &'static str,
    pub seeds: usize,
    pub max_relative_error: f64,
    pub worst_seed: u64,
}

pub const ORACLE_OPS: [&str; 7] = [
    "conv3d",
    "maxpool3d",
    "batchnorm",
    "linear",
    "softmax_ce",
    "lstm_step",
    "bilstm_backend",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Distinct values spaced 0.1 apart, so max has no ties within the step.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Tensor::from_fn(shape.to_vec(), |i| (order[i] as f64 - n as f64 / 2.0 + 0.5) * 0.1)
}

fn projected<F>(f: F, inputs: &[Tensor<f64>], seed: u64) -> Result<f64>
where
    F: Fn(&Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    let r = finite_diff_check(
        |g, xs| {
            let out = f(g, xs)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let w = uniform(&mut rng, &g.shape(out));
            let y = g.mul_const(out, w)?;
            g.sum(y)
        },
        inputs,
        GradCheckOptions { seed, ..Default::default() },
    )?;
    Ok(r.max_relative_error)
}

fn oracle_case(name: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match name {
        "conv3d" => {
            let kt = rng.random_range(1..=3);
            let spec = ConvSpec::new(2, 2, [kt, 3, 3])
                .stride([1, rng.random_range(1..=2), 1])
                .padding([kt / 2, 1, 1])
                .with_bias(true);
            let x = uniform(&mut rng, &[1, 2, 3, 4, 4]);
            let w = uniform(&mut rng, &spec.weight_shape());
            let b = uniform(&mut rng, &[2]);
            projected(move |g, v| g.conv3d(v[0], v[1], Some(v[2]), spec), &[x, w, b], seed)
        }
        "maxpool3d" => {
            let x = spaced(&mut rng, &[2, 2, 3, 5, 5]);
            projected(|g, v| g.maxpool3d(v[0], [3, 3, 3], [2, 2, 2], [1, 1, 1]), &[x], seed)
        }
        "batchnorm" => {
            let x = uniform(&mut rng, &[3, 4, 2]);
            let gamma = uniform(&mut rng, &[4]);
            let beta = uniform(&mut rng, &[4]);
            let stats = BnStats {
                running_mean: vec![0.0; 4],
                running_var: vec![1.0; 4],
                momentum: 0.1,
                epsilon: 1e-5,
            };
            projected(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1, &stats)?.0), &[x, gamma, beta], seed)
        }
        "linear" => {
            let x = uniform(&mut rng, &[2, 3, 4]);
            let w = uniform(&mut rng, &[5, 4]);
            let b = uniform(&mut rng, &[5]);
            projected(|g, v| g.linear(v[0], v[1], Some(v[2])), &[x, w, b], seed)
        }
        "softmax_ce" => {
            let logits = uniform(&mut rng, &[3, 5]);
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
            let r = finite_diff_check(
                |g, x| Ok(g.softmax_cross_entropy(x[0], &labels)?.0),
                &[logits],
                GradCheckOptions { seed, ..Default::default() },
            )?;
            Ok(r.max_relative_error)
        }
        "lstm_step" => {
            let mut store = ParamStore::<f64>::new();
            let cell = LstmCell::new(&mut store, "cell", 3, 4, &mut rng)?;
            let x = uniform(&mut rng, &[2, 3]);
            let h = uniform(&mut rng, &[2, 4]);
            let c = uniform(&mut rng, &[2, 4]);
            let r = finite_diff_check_params(
                &mut store,
                |g| {
                    let state = LstmState {
                        h: g.constant(h.clone()),
                        c: g.constant(c.clone()),
                    };
                    let next = cell.step(g, &state, g.constant(x.clone()))?;
                    let both = g.concat_last(&[next.h, next.c])?;
                    let mut wr = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                    let y = g.mul_const(both, uniform(&mut wr, &[2, 8]))?;
                    g.sum(y)
                },
                GradCheckOptions { seed, ..Default::default() },
            )?;
            Ok(r.max_relative_error)
        }
        "bilstm_backend" => {
            let mut store = ParamStore::<f64>::new();
            let cfg = BackendConfig {
                layers: 2,
                hidden: 3,
                ..Default::default()
            };
            let backend = BiLstmBackend::new(&mut store, 3, 4, &cfg, &mut rng)?;
            let x = uniform(&mut rng, &[5, 3, 3]);
            let lengths = vec![5, 4, 3];
            let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
            let r = finite_diff_check_params(
                &mut store,
                |g| {
                    let s = Seq::new(g, g.constant(x.clone()), lengths.clone())?;
                    let logits = backend.forward(g, &s, &s)?;
                    Ok(g.softmax_cross_entropy(logits, &labels)?.0)
                },
                GradCheckOptions { seed, ..Default::default() },
            )?;
            Ok(r.max_relative_error)
        }
        other => Err(Error::InvalidArgument(format!("no gradient oracle for {other}"))),
    }
}

/// Run every oracle in [`ORACLE_OPS`] over `seeds`, in 64-bit precision.
pub fn oracle_suite(seeds: std::ops::Range<u64>) -> Result<Vec<OracleResult>> {
    ORACLE_OPS
        .iter()
        .map(|&name| {
            let mut out = OracleResult {
                name,
                seeds: 0,
                max_relative_error: 0.0,
                worst_seed: seeds.start,
            };
            for seed in seeds.clone() {
                let e = oracle_case(name, seed)?;
                if e > out.max_relative_error || e.is_nan() {
                    out.max_relative_error = e;
                    out.worst_seed = seed;
                }
                out.seeds += 1;
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nondeterministic_objective_is_rejected() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let res = finite_diff_check(
            |g, xs| {
                calls.set(calls.get() + 1.0);
                let s = g.sum(xs[0])?;
                g.scale(s, calls.get())
            },
            &[Tensor::full([2], 1.0)],
            GradCheckOptions::default(),
        );
        assert!(matches!(res, Err(Error::Numerical(_))));
    }

    #[test]
    fn quadratic_is_exact() {
        let r = finite_diff_check(
            |g, xs| {
                let sq = g.mul(xs[0], xs[0])?;
                g.sum(sq)
            },
            &[Tensor::from_f64([3], &[0.3, -1.2, 2.0]).unwrap()],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 3);
    }
}

//! LSTM cells and directional sequence runners.
//!
//! Sequences are time-major `T×N×D` batches with per-sample lengths. Rows at
//! or beyond a sample's length are zero. A bidirectional network is two
//! independent [`DirectionalStack`]s whose outputs meet only in
//! [`bidirectional_concat`].

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::BatchNorm;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// A batch of variable-length sequences.
#[derive(Clone, Debug)]
pub struct Seq {
    /// `T×N×D`, zero beyond each length.
    pub data: Var,
    pub lengths: Vec<usize>,
}

impl Seq {
    pub fn new<T: Scalar>(g: &Graph<'_, T>, data: Var, lengths: Vec<usize>) -> Result<Seq> {
        let s = g.shape(data);
        if s.len() != 3 {
            return Err(Error::InvalidShape(format!("sequence must be T×N×D, got {s:?}")));
        }
        if lengths.len() != s[1] {
            return Err(Error::shape("batch", s[1], lengths.len()));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l == 0 || l > s[0]) {
            return Err(Error::InvalidArgument(format!(
                "sequence length {l} outside 1..={}",
                s[0]
            )));
        }
        Ok(Seq { data, lengths })
    }

    /// Full-length batch of one sequence from a `T×D` tensor.
    pub fn single<T: Scalar>(g: &Graph<'_, T>, x: Var) -> Result<Seq> {
        let s = g.shape(x);
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("expected T×D, got {s:?}")));
        }
        let data = g.reshape(x, &[s[0], 1, s[1]])?;
        Seq::new(g, data, vec![s[0]])
    }

    pub fn dims<T: Scalar>(&self, g: &Graph<'_, T>) -> (usize, usize, usize) {
        let s = g.shape(self.data);
        (s[0], s[1], s[2])
    }

    fn with_data(&self, data: Var) -> Seq {
        Seq {
            data,
            lengths: self.lengths.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Frame-rate reduction applied to a layer's output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subsample {
    #[default]
    None,
    /// Row t becomes `[row 2t | row 2t+1]`.
    PairConcat,
    /// Row t becomes row 2t.
    KeepEven,
}

impl Subsample {
    pub fn width_factor(self) -> usize {
        match self {
            Subsample::PairConcat => 2,
            _ => 1,
        }
    }

    pub fn reduces(self) -> bool {
        self != Subsample::None
    }
}

/// LSTM without peepholes; gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H×D`
    pub w: ParamId,
    /// `4H×H`
    pub u: ParamId,
    /// `4H`
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros<T: Scalar>(g: &Graph<'_, T>, batch: usize, hidden: usize) -> LstmState {
        LstmState {
            h: g.constant(Tensor::zeros([batch, hidden])),
            c: g.constant(Tensor::zeros([batch, hidden])),
        }
    }
}

impl LstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_size == 0 || hidden_size == 0 {
            return Err(Error::Config(format!(
                "{name}: LSTM sizes must be positive (input {input_size}, hidden {hidden_size})"
            )));
        }
        let h = hidden_size;
        let w = store.add_uniform(&format!("{name}.w"), &[4 * h, input_size], h, rng)?;
        let u = store.add_uniform(&format!("{name}.u"), &[4 * h, h], h, rng)?;
        let b = store.add(
            &format!("{name}.b"),
            Tensor::from_fn([4 * h], |i| if (h..2 * h).contains(&i) { T::one() } else { T::zero() }),
        )?;
        Ok(LstmCell {
            input_size,
            hidden_size,
            w,
            u,
            b,
        })
    }

    /// One step on an `N×D` input.
    pub fn step<T: Scalar>(&self, g: &Graph<'_, T>, state: &LstmState, x: Var) -> Result<LstmState> {
        let xs = g.shape(x);
        if xs.len() != 2 || xs[1] != self.input_size {
            return Err(Error::shape("lstm input", self.input_size, *xs.last().unwrap_or(&0)));
        }
        let pre = g.linear(x, g.param(self.w), Some(g.param(self.b)))?;
        self.advance(g, state, pre)
    }

    fn advance<T: Scalar>(&self, g: &Graph<'_, T>, state: &LstmState, pre: Var) -> Result<LstmState> {
        let rec = g.linear(state.h, g.param(self.u), None)?;
        let pre = g.add(pre, rec)?;
        let hc = g.lstm_cell(pre, state.c)?;
        let h = self.hidden_size;
        Ok(LstmState {
            h: g.slice_last(hc, 0, h)?,
            c: g.slice_last(hc, h, 2 * h)?,
        })
    }

    /// Run over a `T×N×D` batch from zero state; returns `T×N×H`.
    pub fn run<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if s.len() != 3 {
            return Err(Error::InvalidShape(format!("lstm expects T×N×D, got {s:?}")));
        }
        if s[2] != self.input_size {
            return Err(Error::shape("lstm input", self.input_size, s[2]));
        }
        let (t, n, h) = (s[0], s[1], self.hidden_size);
        let proj = g.linear(x, g.param(self.w), Some(g.param(self.b)))?;
        let proj = g.reshape(proj, &[t * n, 4 * h])?;
        let zero = g.constant(Tensor::zeros([n, h]));
        let mut state = LstmState { h: zero, c: zero };
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let rows: Vec<Option<usize>> = (step * n..(step + 1) * n).map(Some).collect();
            let pre = g.gather_rows(proj, &rows)?;
            state = if step == 0 {
                let hc = g.lstm_cell(pre, state.c)?;
                LstmState {
                    h: g.slice_last(hc, 0, h)?,
                    c: g.slice_last(hc, h, 2 * h)?,
                }
            } else {
                self.advance(g, &state, pre)?
            };
            outs.push(state.h);
        }
        let all = g.concat_rows(&outs)?;
        g.reshape(all, &[t, n, h])
    }
}

/// Zero every row at or beyond its sequence length.
pub fn mask_padding<T: Scalar>(g: &Graph<'_, T>, seq: &Seq) -> Result<Seq> {
    let (t, n, d) = seq.dims(g);
    if seq.lengths.iter().all(|&l| l == t) {
        return Ok(seq.clone());
    }
    let flat = g.reshape(seq.data, &[t * n, d])?;
    let idx: Vec<Option<usize>> = (0..t * n)
        .map(|r| (r / n < seq.lengths[r % n]).then_some(r))
        .collect();
    let out = g.gather_rows(flat, &idx)?;
    Ok(seq.with_data(g.reshape(out, &[t, n, d])?))
}

/// Reverse each sequence within its own length; padding stays at the end.
pub fn reverse_within_lengths<T: Scalar>(g: &Graph<'_, T>, seq: &Seq) -> Result<Seq> {
    let (t, n, d) = seq.dims(g);
    let flat = g.reshape(seq.data, &[t * n, d])?;
    let idx: Vec<Option<usize>> = (0..t * n)
        .map(|r| {
            let (step, b) = (r / n, r % n);
            let len = seq.lengths[b];
            (step < len).then(|| (len - 1 - step) * n + b)
        })
        .collect();
    let out = g.gather_rows(flat, &idx)?;
    Ok(seq.with_data(g.reshape(out, &[t, n, d])?))
}

fn subsample_rows<T: Scalar>(g: &Graph<'_, T>, seq: &Seq, offset: usize) -> Result<Var> {
    let (t, n, d) = seq.dims(g);
    let half = t / 2;
    let flat = g.reshape(seq.data, &[t * n, d])?;
    let idx: Vec<Option<usize>> = (0..half * n)
        .map(|r| {
            let (step, b) = (r / n, r % n);
            (step < seq.lengths[b] / 2).then_some((2 * step + offset) * n + b)
        })
        .collect();
    let out = g.gather_rows(flat, &idx)?;
    g.reshape(out, &[half, n, d])
}

fn halved_lengths(seq: &Seq, t: usize) -> Result<Vec<usize>> {
    if t < 2 || seq.lengths.iter().any(|&l| l < 2) {
        return Err(Error::InvalidArgument(format!(
            "subsampling needs at least 2 steps, got lengths {:?}",
            seq.lengths
        )));
    }
    Ok(seq.lengths.iter().map(|l| l / 2).collect())
}

/// Output row t is `[row 2t | row 2t+1]`; an unpaired final row is dropped.
pub fn pyramidal_pair_concat<T: Scalar>(g: &Graph<'_, T>, seq: &Seq) -> Result<Seq> {
    let (t, _, _) = seq.dims(g);
    let lengths = halved_lengths(seq, t)?;
    let even = subsample_rows(g, seq, 0)?;
    let odd = subsample_rows(g, seq, 1)?;
    Ok(Seq {
        data: g.concat_last(&[even, odd])?,
        lengths,
    })
}

/// Output row t is row 2t.
pub fn keep_even<T: Scalar>(g: &Graph<'_, T>, seq: &Seq) -> Result<Seq> {
    let (t, _, _) = seq.dims(g);
    let lengths = halved_lengths(seq, t)?;
    Ok(Seq {
        data: subsample_rows(g, seq, 0)?,
        lengths,
    })
}

/// Pair-concatenation on a plain `T×H` tensor.
pub fn pair_concat_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.ndim() != 2 || x.shape()[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "pair concat needs T×H with T ≥ 2, got {:?}",
            x.shape()
        )));
    }
    let (t, h) = (x.shape()[0], x.shape()[1]);
    let half = t / 2;
    let data = x.data()[..half * 2 * h].to_vec();
    Tensor::new([half, 2 * h], data)
}

/// `[fwd | bwd]` along features; both already in input time order.
pub fn bidirectional_concat<T: Scalar>(g: &Graph<'_, T>, fwd: &Seq, bwd: &Seq) -> Result<Seq> {
    let (a, b) = (g.shape(fwd.data), g.shape(bwd.data));
    if a != b {
        return Err(Error::InvalidShape(format!(
            "direction outputs differ: forward {a:?}, backward {b:?}"
        )));
    }
    if fwd.lengths != bwd.lengths {
        return Err(Error::Mismatch(format!(
            "direction lengths differ: {:?} vs {:?}",
            fwd.lengths, bwd.lengths
        )));
    }
    Ok(fwd.with_data(g.concat_last(&[fwd.data, bwd.data])?))
}

/// Per-layer construction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub hidden: usize,
    /// Batch normalisation of the layer input.
    pub input_bn: bool,
    /// Shared-mask dropout rate on the layer input.
    pub input_dropout: f64,
    /// Applied to the layer output.
    pub subsample: Subsample,
}

impl LayerSpec {
    pub fn plain(hidden: usize) -> Self {
        LayerSpec {
            hidden,
            input_bn: false,
            input_dropout: 0.0,
            subsample: Subsample::None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StackLayer {
    pub spec: LayerSpec,
    pub cell: LstmCell,
    pub bn: Option<BatchNorm>,
}

/// One direction of a bidirectional network.
#[derive(Clone, Debug)]
pub struct DirectionalStack {
    pub direction: Direction,
    pub input_size: usize,
    pub layers: Vec<StackLayer>,
}

impl DirectionalStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        direction: Direction,
        input_size: usize,
        specs: &[LayerSpec],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config(format!("{name}: stack needs at least one layer")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut width = input_size;
        for (i, spec) in specs.iter().enumerate() {
            if !(0.0..1.0).contains(&spec.input_dropout) {
                return Err(Error::Config(format!(
                    "{name}: dropout {} outside [0, 1)",
                    spec.input_dropout
                )));
            }
            let prefix = format!("{name}.layer{i}");
            let bn = if spec.input_bn {
                Some(BatchNorm::new(store, &format!("{prefix}.bn"), width, 1)?)
            } else {
                None
            };
            let cell = LstmCell::new(store, &format!("{prefix}.lstm"), width, spec.hidden, rng)?;
            width = spec.hidden * spec.subsample.width_factor();
            layers.push(StackLayer { spec: *spec, cell, bn });
        }
        Ok(DirectionalStack {
            direction,
            input_size,
            layers,
        })
    }

    pub fn output_size(&self) -> usize {
        let last = self.layers.last().expect("non-empty stack");
        last.spec.hidden * last.spec.subsample.width_factor()
    }

    /// Number of halvings applied to the time axis.
    pub fn reductions(&self) -> u32 {
        self.layers.iter().filter(|l| l.spec.subsample.reduces()).count() as u32
    }

    /// Output length for an input of `t` steps.
    pub fn output_len(&self, t: usize) -> Result<usize> {
        let mut len = t;
        for l in &self.layers {
            if l.spec.subsample.reduces() {
                if len < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "{t} steps cannot be halved {} times",
                        self.reductions()
                    )));
                }
                len /= 2;
            }
        }
        Ok(len)
    }
}

/// Batch-normalise the valid rows of a sequence; padding stays zero.
pub fn seq_batch_norm<T: Scalar>(g: &Graph<'_, T>, bn: &BatchNorm, seq: &Seq) -> Result<Seq> {
    let (t, n, d) = seq.dims(g);
    let flat = g.reshape(seq.data, &[t * n, d])?;
    let valid: Vec<usize> = (0..t * n).filter(|&r| r / n < seq.lengths[r % n]).collect();
    if valid.len() == t * n {
        let y = bn.forward_axis(g, flat, 1)?;
        return Ok(seq.with_data(g.reshape(y, &[t, n, d])?));
    }
    let packed = g.gather_rows(flat, &valid.iter().map(|&r| Some(r)).collect::<Vec<_>>())?;
    let y = bn.forward_axis(g, packed, 1)?;
    let mut back = vec![None; t * n];
    for (i, &r) in valid.iter().enumerate() {
        back[r] = Some(i);
    }
    let out = g.gather_rows(y, &back)?;
    Ok(seq.with_data(g.reshape(out, &[t, n, d])?))
}

/// Run one direction. A backward stack consumes each sequence reversed
/// within its length and its output is restored to input time order.
pub fn run_direction<T: Scalar>(g: &Graph<'_, T>, stack: &DirectionalStack, seq: &Seq) -> Result<Seq> {
    let (t, _, d) = seq.dims(g);
    if d != stack.input_size {
        return Err(Error::shape("stack input", stack.input_size, d));
    }
    stack.output_len(t)?;
    let mut cur = match stack.direction {
        Direction::Forward => seq.clone(),
        Direction::Backward => reverse_within_lengths(g, seq)?,
    };
    for layer in &stack.layers {
        if let Some(bn) = &layer.bn {
            cur = seq_batch_norm(g, bn, &cur)?;
        }
        let x = g.dropout_shared_mask(cur.data, layer.spec.input_dropout)?;
        let y = layer.cell.run(g, x)?;
        cur = mask_padding(g, &cur.with_data(y))?;
        cur = match layer.spec.subsample {
            Subsample::None => cur,
            Subsample::PairConcat => pyramidal_pair_concat(g, &cur)?,
            Subsample::KeepEven => keep_even(g, &cur)?,
        };
    }
    match stack.direction {
        Direction::Forward => Ok(cur),
        Direction::Backward => reverse_within_lengths(g, &cur),
    }
}

/// Forward and backward stacks with matching shapes.
#[derive(Clone, Debug)]
pub struct BiStack {
    pub forward: DirectionalStack,
    pub backward: DirectionalStack,
}

impl BiStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_size: usize,
        specs: &[LayerSpec],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(BiStack {
            forward: DirectionalStack::new(store, &format!("{name}.fwd"), Direction::Forward, input_size, specs, rng)?,
            backward: DirectionalStack::new(store, &format!("{name}.bwd"), Direction::Backward, input_size, specs, rng)?,
        })
    }

    /// Run each direction on its own input.
    pub fn run_pair<T: Scalar>(&self, g: &Graph<'_, T>, fwd: &Seq, bwd: &Seq) -> Result<(Seq, Seq)> {
        Ok((run_direction(g, &self.forward, fwd)?, run_direction(g, &self.backward, bwd)?))
    }

    pub fn run_concat<T: Scalar>(&self, g: &Graph<'_, T>, seq: &Seq) -> Result<Seq> {
        let (f, b) = self.run_pair(g, seq, seq)?;
        bidirectional_concat(g, &f, &b)
    }
}

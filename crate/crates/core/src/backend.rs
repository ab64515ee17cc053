//! Word-boundary conditioning and the two classification backends.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv3d, Linear};
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::recurrent::{bidirectional_concat, BiStack, LayerSpec, Seq};
use crate::tensor::{Scalar, Tensor};

/// Half-open frame interval `[start, end)` holding the target word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub start: usize,
    pub end: usize,
}

impl BoundarySpec {
    pub fn new(start: usize, end: usize, frames: usize) -> Result<Self> {
        let b = BoundarySpec { start, end };
        b.check(frames)?;
        Ok(b)
    }

    pub fn check(&self, frames: usize) -> Result<()> {
        if self.start >= self.end || self.end > frames {
            return Err(Error::InvalidArgument(format!(
                "boundary [{}, {}) invalid for {frames} frames",
                self.start, self.end
            )));
        }
        Ok(())
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn indicator<T: Scalar>(&self, frames: usize) -> Vec<T> {
        (0..frames)
            .map(|t| if self.contains(t) { T::one() } else { T::zero() })
            .collect()
    }

    /// Rows kept under `mode`, in time order.
    pub fn kept_rows(&self, frames: usize, mode: BoundaryMode) -> Vec<usize> {
        match mode {
            BoundaryMode::RemoveOutside => (self.start..self.end.min(frames)).collect(),
            BoundaryMode::RemoveInside => (0..frames).filter(|&t| !self.contains(t)).collect(),
            BoundaryMode::Indicator | BoundaryMode::Unused => (0..frames).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Indicator,
    RemoveOutside,
    RemoveInside,
    Unused,
}

impl BoundaryMode {
    pub const ALL: [BoundaryMode; 4] = [
        BoundaryMode::Indicator,
        BoundaryMode::RemoveOutside,
        BoundaryMode::RemoveInside,
        BoundaryMode::Unused,
    ];

    /// Extra feature columns this mode adds.
    pub fn extra_width(self) -> usize {
        (self == BoundaryMode::Indicator) as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryMode::Indicator => "indicator",
            BoundaryMode::RemoveOutside => "remove_outside",
            BoundaryMode::RemoveInside => "remove_inside",
            BoundaryMode::Unused => "unused",
        }
    }
}

impl fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BoundaryMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown boundary mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = words.iter().find(|w| !seen.insert(w.as_str())) {
            return Err(Error::Config(format!("duplicate word {dup:?} in vocabulary")));
        }
        Ok(Vocabulary { words })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Apply a boundary mode to one `T×D` feature sequence.
pub fn boundary_augment<T: Scalar>(features: &Tensor<T>, spec: BoundarySpec, mode: BoundaryMode) -> Result<Tensor<T>> {
    if features.ndim() != 2 {
        return Err(Error::InvalidShape(format!("features must be T×D, got {:?}", features.shape())));
    }
    let (t, d) = (features.shape()[0], features.shape()[1]);
    spec.check(t)?;
    match mode {
        BoundaryMode::Unused => Ok(features.clone()),
        BoundaryMode::Indicator => crate::audio::append_column(features, &spec.indicator(t)),
        _ => {
            let rows = spec.kept_rows(t, mode);
            if rows.is_empty() {
                return Err(Error::InvalidArgument(format!("{mode} leaves no frames for {spec:?}")));
            }
            let mut out = Vec::with_capacity(rows.len() * d);
            for r in &rows {
                out.extend_from_slice(&features.data()[r * d..(r + 1) * d]);
            }
            Tensor::new([rows.len(), d], out)
        }
    }
}

/// Apply a boundary mode to a batch; removal modes pack kept rows to the front.
pub fn augment_seq<T: Scalar>(
    g: &Graph<'_, T>,
    seq: &Seq,
    bounds: &[BoundarySpec],
    mode: BoundaryMode,
) -> Result<Seq> {
    let (t, n, d) = seq.dims(g);
    if bounds.len() != n {
        return Err(Error::shape("boundary batch", n, bounds.len()));
    }
    for (b, &len) in bounds.iter().zip(&seq.lengths) {
        b.check(len)?;
    }
    match mode {
        BoundaryMode::Unused => Ok(seq.clone()),
        BoundaryMode::Indicator => {
            let mut col = vec![T::zero(); t * n];
            for (i, b) in bounds.iter().enumerate() {
                for step in b.start..b.end {
                    col[step * n + i] = T::one();
                }
            }
            let col = g.constant(Tensor::from_parts(vec![t, n, 1], col));
            Ok(Seq {
                data: g.concat_last(&[seq.data, col])?,
                lengths: seq.lengths.clone(),
            })
        }
        _ => {
            let kept: Vec<Vec<usize>> = bounds
                .iter()
                .zip(&seq.lengths)
                .map(|(b, &len)| b.kept_rows(len, mode))
                .collect();
            if let Some(i) = kept.iter().position(|k| k.is_empty()) {
                return Err(Error::InvalidArgument(format!(
                    "{mode} leaves no frames for {:?}",
                    bounds[i]
                )));
            }
            let tmax = kept.iter().map(Vec::len).max().unwrap();
            let mut idx = vec![None; tmax * n];
            for (i, rows) in kept.iter().enumerate() {
                for (step, &r) in rows.iter().enumerate() {
                    idx[step * n + i] = Some(r * n + i);
                }
            }
            let flat = g.reshape(seq.data, &[t * n, d])?;
            let out = g.gather_rows(flat, &idx)?;
            Ok(Seq {
                data: g.reshape(out, &[tmax, n, d])?,
                lengths: kept.iter().map(Vec::len).collect(),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    #[default]
    Average,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub layers: usize,
    pub hidden: usize,
    pub aggregate: Aggregate,
    /// Batch normalisation of the aggregated vector.
    pub bn: bool,
    pub dropout: bool,
    pub lstm_dropout: f64,
    pub head_dropout: f64,
    /// Batch normalisation of every LSTM input.
    pub input_bn: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            layers: 2,
            hidden: 256,
            aggregate: Aggregate::Average,
            bn: true,
            dropout: true,
            lstm_dropout: 0.30,
            head_dropout: 0.15,
            input_bn: false,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.layers) {
            return Err(Error::Config(format!("backend layers must be 1 or 2, got {}", self.layers)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("backend hidden size must be positive".into()));
        }
        for p in [self.lstm_dropout, self.head_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let spec = LayerSpec {
            input_bn: self.input_bn,
            input_dropout: if self.dropout { self.lstm_dropout } else { 0.0 },
            ..LayerSpec::plain(self.hidden)
        };
        vec![spec; self.layers]
    }
}

/// Concat-at-end BiLSTM backend with temporal aggregation and a linear head.
#[derive(Clone, Debug)]
pub struct BiLstmBackend {
    pub config: BackendConfig,
    pub input_dim: usize,
    pub stacks: BiStack,
    pub bn: Option<BatchNorm>,
    pub fc: Linear,
}

impl BiLstmBackend {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        classes: usize,
        config: &BackendConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let stacks = BiStack::new(store, "backend", input_dim, &config.layer_specs(), rng)?;
        let width = 2 * config.hidden;
        let bn = if config.bn {
            Some(BatchNorm::new(store, "backend.bn", width, 1)?)
        } else {
            None
        };
        let fc = Linear::new(store, "backend.fc", width, classes, true, rng)?;
        Ok(BiLstmBackend {
            config: config.clone(),
            input_dim,
            stacks,
            bn,
            fc,
        })
    }

    /// Logits `N×V` from per-direction input sequences.
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, fwd: &Seq, bwd: &Seq) -> Result<Var> {
        let (f, b) = self.stacks.run_pair(g, fwd, bwd)?;
        let both = bidirectional_concat(g, &f, &b)?;
        let (t, n, d) = both.dims(g);
        let pooled = match self.config.aggregate {
            Aggregate::Average => g.masked_time_mean(both.data, &both.lengths)?,
            Aggregate::Last => {
                let flat = g.reshape(both.data, &[t * n, d])?;
                let idx: Vec<Option<usize>> = both
                    .lengths
                    .iter()
                    .enumerate()
                    .map(|(i, &len)| Some((len - 1) * n + i))
                    .collect();
                g.gather_rows(flat, &idx)?
            }
        };
        let mut h = pooled;
        if let Some(bn) = &self.bn {
            h = bn.forward_axis(g, h, 1)?;
        }
        if self.config.dropout && self.config.head_dropout > 0.0 {
            let r = g.reshape(h, &[1, n, d])?;
            let r = g.dropout_shared_mask(r, self.config.head_dropout)?;
            h = g.reshape(r, &[n, d])?;
        }
        self.fc.forward(g, h)
    }
}

/// Temporal-convolution backend: two strided conv/pool blocks, a global
/// max-pool and a linear bottleneck.
#[derive(Clone, Debug)]
pub struct TConvBackend {
    pub channels: usize,
    pub conv1: Conv3d,
    pub bn1: BatchNorm,
    pub conv2: Conv3d,
    pub bn2: BatchNorm,
    pub bottleneck: Linear,
    pub fc: Linear,
}

/// Smallest input length the stride plan accepts.
pub const TCONV_MIN_LEN: usize = 5;

fn tconv_spec(out: usize, inp: usize) -> ConvSpec {
    ConvSpec::new(out, inp, [3, 1, 1])
        .stride([2, 1, 1])
        .padding([1, 0, 0])
        .with_bias(false)
}

/// `(time, channels)` after input, block 1 conv, block 1 pool, block 2 conv
/// and the global pool; then the bottleneck and class widths.
pub fn tconv_shape_chain(t: usize, channels: usize, classes: usize) -> Result<Vec<Vec<usize>>> {
    if t < TCONV_MIN_LEN {
        return Err(Error::InvalidArgument(format!(
            "temporal-conv backend needs at least {TCONV_MIN_LEN} frames, got {t}"
        )));
    }
    let conv = |l: usize| (l + 2 - 3) / 2 + 1;
    let pool = |l: usize| (l - 3) / 2 + 1;
    let t1 = conv(t);
    let t2 = pool(t1);
    let t3 = conv(t2);
    Ok(vec![
        vec![t, channels],
        vec![t1, 2 * channels],
        vec![t2, 2 * channels],
        vec![t3, 4 * channels],
        vec![1, 4 * channels],
        vec![channels],
        vec![classes],
    ])
}

impl TConvBackend {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        channels: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let c = channels;
        Ok(TConvBackend {
            channels,
            conv1: Conv3d::new(store, "backend.tconv1", tconv_spec(2 * c, c), rng)?,
            bn1: BatchNorm::new(store, "backend.tbn1", 2 * c, 1)?,
            conv2: Conv3d::new(store, "backend.tconv2", tconv_spec(4 * c, 2 * c), rng)?,
            bn2: BatchNorm::new(store, "backend.tbn2", 4 * c, 1)?,
            bottleneck: Linear::new(store, "backend.bottleneck", 4 * c, c, true, rng)?,
            fc: Linear::new(store, "backend.fc", c, classes, true, rng)?,
        })
    }

    /// Logits `N×V` from a full-length `T×N×C` sequence.
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, seq: &Seq) -> Result<Var> {
        let (t, n, c) = seq.dims(g);
        if c != self.channels {
            return Err(Error::shape("tconv channels", self.channels, c));
        }
        if seq.lengths.iter().any(|&l| l != t) {
            return Err(Error::InvalidArgument(
                "temporal-conv backend needs equal-length sequences".into(),
            ));
        }
        tconv_shape_chain(t, c, 0)?;
        let x = g.permute(seq.data, &[1, 2, 0])?;
        let x = g.reshape(x, &[n, c, t, 1, 1])?;
        let x = self.conv1.forward(g, x)?;
        let x = g.relu(self.bn1.forward(g, x)?)?;
        let x = g.maxpool3d(x, [3, 1, 1], [2, 1, 1], [0, 0, 0])?;
        let x = self.conv2.forward(g, x)?;
        let x = g.relu(self.bn2.forward(g, x)?)?;
        let rest = g.shape(x)[2];
        let x = g.maxpool3d(x, [rest, 1, 1], [1, 1, 1], [0, 0, 0])?;
        let x = g.reshape(x, &[n, 4 * c])?;
        let x = self.bottleneck.forward(g, x)?;
        self.fc.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_column() {
        let x = Tensor::<f64>::from_fn([29, 3], |i| i as f64);
        let b = BoundarySpec::new(10, 18, 29).unwrap();
        let y = boundary_augment(&x, b, BoundaryMode::Indicator).unwrap();
        assert_eq!(y.shape(), &[29, 4]);
        for t in 0..29 {
            assert_eq!(y.data()[t * 4..t * 4 + 3], x.data()[t * 3..t * 3 + 3]);
            assert_eq!(y.data()[t * 4 + 3], if (10..18).contains(&t) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn removal_modes() {
        let x = Tensor::<f64>::from_fn([6, 2], |i| i as f64);
        let b = BoundarySpec::new(2, 4, 6).unwrap();
        assert_eq!(boundary_augment(&x, b, BoundaryMode::Unused).unwrap(), x);
        let full = BoundarySpec::new(0, 6, 6).unwrap();
        assert_eq!(boundary_augment(&x, full, BoundaryMode::RemoveOutside).unwrap(), x);
        assert!(boundary_augment(&x, full, BoundaryMode::RemoveInside).is_err());
        let inside = boundary_augment(&x, b, BoundaryMode::RemoveOutside).unwrap();
        assert_eq!(inside.data(), &[4.0, 5.0, 6.0, 7.0]);
        assert!(BoundarySpec::new(4, 4, 6).is_err());
        assert!(BoundarySpec::new(2, 7, 6).is_err());
    }

    #[test]
    fn mode_names_roundtrip() {
        for m in BoundaryMode::ALL {
            assert_eq!(m.name().parse::<BoundaryMode>().unwrap(), m);
        }
        assert!("inside".parse::<BoundaryMode>().is_err());
    }

    #[test]
    fn tconv_chain_hits_published_sizes() {
        let c = tconv_shape_chain(29, 256, 500).unwrap();
        assert_eq!(
            c,
            vec![vec![29, 256], vec![15, 512], vec![7, 512], vec![4, 1024], vec![1, 1024], vec![256], vec![500]]
        );
        assert!(tconv_shape_chain(4, 256, 500).is_err());
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(vec!["a".into(), "b".into(), "a".into()]).is_err());
        let v = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(v.index("b"), Some(1));
    }
}

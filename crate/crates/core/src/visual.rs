//! Residual lipreading frontend: spatiotemporal stem, 2D residual stages and
//! a per-frame linear head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv3d, Linear};
use crate::ops::ConvSpec;
use crate::params::ParamStore;
use crate::recurrent::Seq;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StemMode {
    #[default]
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Flatten the final map and apply a linear layer.
    #[default]
    Fc,
    /// Spatial mean, then a linear layer on the channels.
    AvgPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResNetConfig {
    pub depth: usize,
    pub input_spatial: usize,
    pub stem_temporal_kernel: usize,
    pub stem_mode: StemMode,
    pub feature_dim: usize,
    /// Channels of the four stages; the stem emits `widths[0]`.
    pub widths: [usize; 4],
    pub head: Head,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        ResNetConfig {
            depth: 18,
            input_spatial: 112,
            stem_temporal_kernel: 5,
            stem_mode: StemMode::ThreeD,
            feature_dim: 256,
            widths: [64, 128, 256, 512],
            head: Head::Fc,
        }
    }
}

pub const MIN_SPATIAL: usize = 16;

impl ResNetConfig {
    /// Reduced configuration for CPU training.
    pub fn desk(input_spatial: usize, widths: [usize; 4], feature_dim: usize) -> Self {
        ResNetConfig {
            input_spatial,
            widths,
            feature_dim,
            ..Default::default()
        }
    }

    pub fn block_counts(&self) -> Result<[usize; 4]> {
        match self.depth {
            18 => Ok([2, 2, 2, 2]),
            34 => Ok([3, 4, 6, 3]),
            d => Err(Error::Config(format!("resnet depth must be 18 or 34, got {d}"))),
        }
    }

    pub fn temporal_kernel(&self) -> usize {
        match self.stem_mode {
            StemMode::ThreeD => self.stem_temporal_kernel,
            StemMode::TwoD => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block_counts()?;
        check_spatial(self.input_spatial)?;
        if self.stem_mode == StemMode::ThreeD && self.stem_temporal_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "stem temporal kernel must be odd to keep the frame count, got {}",
                self.stem_temporal_kernel
            )));
        }
        if self.widths.contains(&0) || self.feature_dim == 0 {
            return Err(Error::Config("resnet widths and feature_dim must be positive".into()));
        }
        Ok(())
    }
}

fn check_spatial(s: usize) -> Result<()> {
    if s < MIN_SPATIAL || s % MIN_SPATIAL != 0 {
        return Err(Error::Config(format!(
            "input spatial size {s} must be a multiple of {MIN_SPATIAL} (minimum legal size {MIN_SPATIAL})"
        )));
    }
    Ok(())
}

fn halve(s: usize) -> usize {
    (s + 1) / 2
}

/// Per-frame shapes from input to feature vector, without running data.
///
/// Entries are `[1, H, W]`, the four stage outputs `[C, H, W]`, the
/// flattened head input and the feature size.
pub fn shape_chain_report(config: &ResNetConfig, spatial: usize) -> Result<Vec<Vec<usize>>> {
    check_spatial(spatial)?;
    let mut out = vec![vec![1, spatial, spatial]];
    // stem conv and max-pool each halve
    let mut s = halve(halve(spatial));
    for (i, &c) in config.widths.iter().enumerate() {
        if i > 0 {
            s = halve(s);
        }
        out.push(vec![c, s, s]);
    }
    let last = config.widths[3];
    out.push(vec![match config.head {
        Head::Fc => last * s * s,
        Head::AvgPool => last,
    }]);
    out.push(vec![config.feature_dim]);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv3d,
    pub bn1: BatchNorm,
    pub conv2: Conv3d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv3d, BatchNorm)>,
}

impl BasicBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let conv = |o, i| {
            ConvSpec::new(o, i, [1, 3, 3])
                .padding([0, 1, 1])
                .with_bias(false)
        };
        let conv1 = Conv3d::new(store, &format!("{name}.conv1"), conv(cout, cin).stride([1, stride, stride]), rng)?;
        let bn1 = BatchNorm::new(store, &format!("{name}.bn1"), cout, 1)?;
        let conv2 = Conv3d::new(store, &format!("{name}.conv2"), conv(cout, cout), rng)?;
        let bn2 = BatchNorm::new(store, &format!("{name}.bn2"), cout, 1)?;
        let shortcut = if stride != 1 || cin != cout {
            let spec = ConvSpec::new(cout, cin, [1, 1, 1])
                .stride([1, stride, stride])
                .with_bias(false);
            Some((
                Conv3d::new(store, &format!("{name}.down.conv"), spec, rng)?,
                BatchNorm::new(store, &format!("{name}.down.bn"), cout, 1)?,
            ))
        } else {
            None
        };
        Ok(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2,
            shortcut,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward(g, x)?;
        let y = g.relu(self.bn1.forward(g, y)?)?;
        let y = self.conv2.forward(g, y)?;
        let y = self.bn2.forward(g, y)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => bn.forward(g, conv.forward(g, x)?)?,
            None => x,
        };
        g.relu(g.add(y, skip)?)
    }
}

#[derive(Clone, Debug)]
pub struct ResNet {
    pub config: ResNetConfig,
    pub stem_conv: Conv3d,
    pub stem_bn: BatchNorm,
    pub stages: Vec<Vec<BasicBlock>>,
    pub fc: Linear,
}

pub fn build_resnet<T: Scalar>(
    store: &mut ParamStore<T>,
    config: &ResNetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ResNet> {
    config.validate()?;
    let kt = config.temporal_kernel();
    let w = config.widths;
    let stem = ConvSpec::new(w[0], 1, [kt, 7, 7])
        .stride([1, 2, 2])
        .padding([kt / 2, 3, 3])
        .with_bias(false);
    let stem_conv = Conv3d::new(store, "visual.stem.conv", stem, rng)?;
    let stem_bn = BatchNorm::new(store, "visual.stem.bn", w[0], 1)?;
    let counts = config.block_counts()?;
    let mut stages = Vec::with_capacity(4);
    let mut cin = w[0];
    for (s, (&cout, &n)) in w.iter().zip(&counts).enumerate() {
        let mut blocks = Vec::with_capacity(n);
        for b in 0..n {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let name = format!("visual.stage{}.block{}", s + 1, b + 1);
            blocks.push(BasicBlock::new(store, &name, cin, cout, stride, rng)?);
            cin = cout;
        }
        stages.push(blocks);
    }
    let chain = shape_chain_report(config, config.input_spatial)?;
    let head_in = chain[chain.len() - 2][0];
    let fc = Linear::new(store, "visual.fc", head_in, config.feature_dim, true, rng)?;
    Ok(ResNet {
        config: config.clone(),
        stem_conv,
        stem_bn,
        stages,
        fc,
    })
}

impl ResNet {
    /// `N×1×T×H×W` frames to `N×T×feature_dim`.
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, frames: Var) -> Result<Var> {
        let s = g.shape(frames);
        if s.len() != 5 {
            return Err(Error::InvalidShape(format!("frames must be N×1×T×H×W, got {s:?}")));
        }
        if s[1] != 1 {
            return Err(Error::shape("frame channels", 1, s[1]));
        }
        let side = self.config.input_spatial;
        if s[3] != side || s[4] != side {
            return Err(Error::InvalidShape(format!(
                "frames are {}×{}, network expects {side}×{side}",
                s[3], s[4]
            )));
        }
        let (n, t) = (s[0], s[2]);
        let x = self.stem_conv.forward(g, frames)?;
        let x = g.relu(self.stem_bn.forward(g, x)?)?;
        let mut x = g.maxpool3d(x, [1, 3, 3], [1, 2, 2], [0, 1, 1])?;
        for block in self.stages.iter().flatten() {
            x = block.forward(g, x)?;
        }
        if self.config.head == Head::AvgPool {
            x = g.spatial_avgpool(x)?;
        }
        let m = g.shape(x);
        let x = g.permute(x, &[0, 2, 1, 3, 4])?;
        let x = g.reshape(x, &[n, t, m[1] * m[3] * m[4]])?;
        self.fc.forward(g, x)
    }

    /// Time-major features as a sequence batch.
    pub fn forward_seq<T: Scalar>(&self, g: &Graph<'_, T>, frames: Var, lengths: Vec<usize>) -> Result<Seq> {
        let y = self.forward(g, frames)?;
        let y = g.permute(y, &[1, 0, 2])?;
        Seq::new(g, y, lengths)
    }
}

/// Zero mean and unit variance over every pixel of one video.
pub fn normalize_video<T: Scalar>(pixels: &mut [T]) {
    if pixels.is_empty() {
        return;
    }
    let n = pixels.len() as f64;
    let mean = pixels.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = pixels.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for p in pixels {
        *p = T::of((p.as_f64() - mean) * inv);
    }
}

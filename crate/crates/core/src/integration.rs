//! End-to-end networks, multimodal training masks and late fusion.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{
    stft_log_spectra, utterance_scalar_normalize, AudioFrontend, AudioFrontendConfig, Waveform, BINS,
    FRAMES_PER_VIDEO_FRAME,
};
use crate::autograd::{Graph, Mode, Var};
use crate::backend::{
    augment_seq, BackendConfig, BiLstmBackend, BoundaryMode, BoundarySpec, TConvBackend,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::recurrent::Seq;
use crate::rng::stream;
use crate::tensor::{Scalar, Tensor};
use crate::visual::{build_resnet, ResNet, ResNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Visual,
    Audio,
    Audiovisual,
}

impl ModelKind {
    pub fn uses_video(self) -> bool {
        self != ModelKind::Audio
    }

    pub fn uses_audio(self) -> bool {
        self != ModelKind::Visual
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Visual => "visual",
            ModelKind::Audio => "audio",
            ModelKind::Audiovisual => "audiovisual",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::Visual, ModelKind::Audio, ModelKind::Audiovisual]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Bilstm,
    Tconv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub boundary_mode: BoundaryMode,
    pub visual: ResNetConfig,
    pub audio: AudioFrontendConfig,
    pub backend_kind: BackendKind,
    pub backend: BackendConfig,
    pub vocab_size: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::Visual,
            boundary_mode: BoundaryMode::Indicator,
            visual: ResNetConfig::default(),
            audio: AudioFrontendConfig::default(),
            backend_kind: BackendKind::Bilstm,
            backend: BackendConfig::default(),
            vocab_size: 500,
        }
    }
}

impl ModelSpec {
    /// Small widths for 32×32 frames and CPU training.
    pub fn desk(kind: ModelKind, vocab_size: usize) -> Self {
        ModelSpec {
            kind,
            visual: ResNetConfig::desk(32, [8, 16, 16, 32], 64),
            audio: AudioFrontendConfig {
                hidden: 64,
                ..Default::default()
            },
            backend: BackendConfig {
                hidden: 64,
                ..Default::default()
            },
            vocab_size,
            ..Default::default()
        }
    }

    /// Audio frontend settings as wired for this kind and mode.
    pub fn effective_audio(&self) -> AudioFrontendConfig {
        AudioFrontendConfig {
            boundary_input: self.kind == ModelKind::Audio && self.boundary_mode == BoundaryMode::Indicator,
            ..self.audio.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size must be at least 2, got {}", self.vocab_size)));
        }
        if self.kind.uses_video() {
            self.visual.validate()?;
        }
        if self.kind.uses_audio() {
            self.audio.layers()?;
            if self.audio.hidden == 0 {
                return Err(Error::Config("audio hidden size must be positive".into()));
            }
        }
        self.backend.validate()?;
        if self.backend_kind == BackendKind::Tconv {
            if self.kind != ModelKind::Visual {
                return Err(Error::Config("the temporal-conv backend is visual-only".into()));
            }
            if matches!(self.boundary_mode, BoundaryMode::RemoveInside | BoundaryMode::RemoveOutside) {
                return Err(Error::Config("the temporal-conv backend needs full-length clips".into()));
            }
        }
        Ok(())
    }

    /// Per-direction width of the backend input.
    pub fn backend_input_width(&self) -> usize {
        let extra = self.boundary_mode.extra_width();
        match self.kind {
            ModelKind::Visual => self.visual.feature_dim + extra,
            ModelKind::Audio => self.audio.hidden,
            ModelKind::Audiovisual => self.visual.feature_dim + self.audio.hidden + extra,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Backend {
    BiLstm(BiLstmBackend),
    TConv(TConvBackend),
}

/// Parameters and module layout of one assembled network.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub spec: ModelSpec,
    pub store: ParamStore<T>,
    pub visual: Option<ResNet>,
    pub audio: Option<AudioFrontend>,
    pub backend: Backend,
}

pub fn assemble_model<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut rng = stream(seed, "init", 0);
    let mut store = ParamStore::new();
    let visual = if spec.kind.uses_video() {
        Some(build_resnet(&mut store, &spec.visual, &mut rng)?)
    } else {
        None
    };
    let audio = if spec.kind.uses_audio() {
        let a = AudioFrontend::new(&mut store, "audio", &spec.effective_audio(), &mut rng)?;
        if a.stacks.forward.reductions() != 2 {
            return Err(Error::Config(format!(
                "audio frontend reduces the frame rate by 2^{}, video needs 2^2",
                a.stacks.forward.reductions()
            )));
        }
        Some(a)
    } else {
        None
    };
    let width = spec.backend_input_width();
    let backend = match spec.backend_kind {
        BackendKind::Bilstm => Backend::BiLstm(BiLstmBackend::new(
            &mut store,
            width,
            spec.vocab_size,
            &spec.backend,
            &mut rng,
        )?),
        BackendKind::Tconv => Backend::TConv(TConvBackend::new(&mut store, width, spec.vocab_size, &mut rng)?),
    };
    Ok(Model {
        spec: spec.clone(),
        store,
        visual,
        audio,
        backend,
    })
}

/// Which streams one training sample keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamMask {
    pub audio: bool,
    pub video: bool,
    pub boundaries: bool,
}

impl StreamMask {
    pub const ALL: StreamMask = StreamMask {
        audio: true,
        video: true,
        boundaries: true,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultimodalDropConfig {
    pub enabled: bool,
    pub p_drop_audio: f64,
    pub p_drop_video: f64,
    pub p_drop_boundaries: f64,
    pub coupled: bool,
}

impl Default for MultimodalDropConfig {
    fn default() -> Self {
        MultimodalDropConfig {
            enabled: true,
            p_drop_audio: 0.25,
            p_drop_video: 0.25,
            p_drop_boundaries: 0.25,
            coupled: true,
        }
    }
}

impl MultimodalDropConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [self.p_drop_audio, self.p_drop_video, self.p_drop_boundaries] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("drop probability {p} outside [0, 1]")));
            }
        }
        if self.coupled && self.p_drop_audio + self.p_drop_video > 1.0 {
            return Err(Error::Config("coupled drop probabilities sum above 1".into()));
        }
        Ok(())
    }
}

pub fn multimodal_mask_sample(cfg: &MultimodalDropConfig, mode: Mode, rng: &mut ChaCha8Rng) -> Result<StreamMask> {
    if !mode.is_train() {
        return Err(Error::InvalidArgument("stream dropping is a training-only operation".into()));
    }
    cfg.validate()?;
    let (audio, video) = if cfg.coupled {
        let u: f64 = rng.random();
        if u < cfg.p_drop_audio {
            (false, true)
        } else if u < cfg.p_drop_audio + cfg.p_drop_video {
            (true, false)
        } else {
            (true, true)
        }
    } else {
        (
            rng.random::<f64>() >= cfg.p_drop_audio,
            rng.random::<f64>() >= cfg.p_drop_video,
        )
    };
    let boundaries = rng.random::<f64>() >= cfg.p_drop_boundaries;
    Ok(StreamMask { audio, video, boundaries })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    /// Weight of the visual system.
    pub gamma: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { gamma: 0.40 }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }
}

pub const POSTERIOR_FLOOR: f64 = 1e-12;

fn check_posterior(p: &[f64], what: &str) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-6 || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("{what} posterior is not normalised (sum {s})")));
    }
    Ok(())
}

/// Geometric combination `p_v^γ · p_a^(1−γ)`, renormalised.
pub fn late_fuse(p_v: &[f64], p_a: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if p_v.len() != p_a.len() || p_v.is_empty() {
        return Err(Error::shape("posterior classes", p_v.len(), p_a.len()));
    }
    check_posterior(p_v, "visual")?;
    check_posterior(p_a, "audio")?;
    let floored = p_v.iter().chain(p_a).filter(|&&v| v < POSTERIOR_FLOOR).count();
    if floored > 0 {
        log::warn!("late fusion floored {floored} posterior cells at {POSTERIOR_FLOOR:e}");
    }
    let g = cfg.gamma;
    let logs: Vec<f64> = p_v
        .iter()
        .zip(p_a)
        .map(|(&v, &a)| {
            let lv = if g > 0.0 { g * v.max(POSTERIOR_FLOOR).ln() } else { 0.0 };
            let la = if g < 1.0 { (1.0 - g) * a.max(POSTERIOR_FLOOR).ln() } else { 0.0 };
            lv + la
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Row-wise [`late_fuse`].
pub fn late_fuse_rows(p_v: &[Vec<f64>], p_a: &[Vec<f64>], cfg: &FusionConfig) -> Result<Vec<Vec<f64>>> {
    if p_v.len() != p_a.len() {
        return Err(Error::shape("fused samples", p_v.len(), p_a.len()));
    }
    p_v.iter().zip(p_a).map(|(v, a)| late_fuse(v, a, cfg)).collect()
}

/// Normalised `T×161` spectra of one waveform.
pub fn spectra_of(wave: &Waveform) -> Result<Tensor<f32>> {
    Ok(utterance_scalar_normalize(stft_log_spectra(wave)?)?.frames)
}

/// Network inputs for a batch of samples.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    /// `N×1×T×H×W`
    pub video: Option<Tensor<T>>,
    /// `T_a×N×161`
    pub spectra: Option<Tensor<T>>,
    pub bounds: Vec<BoundarySpec>,
    pub labels: Vec<usize>,
    pub streams: Option<Vec<StreamMask>>,
}

impl<T: Scalar> Batch<T> {
    /// Inputs for `kind`; `waves` replaces the clean audio when given.
    pub fn from_samples(kind: ModelKind, samples: &[&Sample], waves: Option<&[Waveform]>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n = samples.len();
        let video = if kind.uses_video() {
            let mut data = Vec::new();
            let shape = samples[0].frame_shape();
            for s in samples {
                if s.frame_shape() != shape {
                    return Err(Error::Mismatch(format!(
                        "{}: frame shape {:?} differs from {:?}",
                        s.id,
                        s.frame_shape(),
                        shape
                    )));
                }
                data.extend_from_slice(s.video::<T>().data());
            }
            Some(Tensor::new([n, 1, shape[0], shape[2], shape[3]], data)?)
        } else {
            None
        };
        let spectra = if kind.uses_audio() {
            let per: Vec<Tensor<f32>> = match waves {
                Some(w) => {
                    if w.len() != n {
                        return Err(Error::shape("noisy waveforms", n, w.len()));
                    }
                    w.iter().map(spectra_of).collect::<Result<_>>()?
                }
                None => samples.iter().map(|s| spectra_of(&s.waveform)).collect::<Result<_>>()?,
            };
            let t = per[0].shape()[0];
            if let Some(p) = per.iter().find(|p| p.shape()[0] != t) {
                return Err(Error::shape("spectral frames", t, p.shape()[0]));
            }
            let mut data = vec![T::zero(); t * n * BINS];
            for (i, p) in per.iter().enumerate() {
                for step in 0..t {
                    let dst = (step * n + i) * BINS;
                    for (d, &v) in data[dst..dst + BINS].iter_mut().zip(&p.data()[step * BINS..(step + 1) * BINS]) {
                        *d = T::of(v as f64);
                    }
                }
            }
            Some(Tensor::new([t, n, BINS], data)?)
        } else {
            None
        };
        Ok(Batch {
            video,
            spectra,
            bounds: samples.iter().map(|s| s.boundaries).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            streams: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn sample_mask<T: Scalar>(shape: &[usize], keep: &[bool]) -> Tensor<T> {
    let (n, d) = (shape[1], shape[2]);
    Tensor::from_fn(shape.to_vec(), |i| if keep[(i / d) % n] { T::one() } else { T::zero() })
}

fn indicator<T: Scalar>(g: &Graph<'_, T>, bounds: &[BoundarySpec], t: usize, keep: &[bool]) -> Var {
    let n = bounds.len();
    let mut col = vec![T::zero(); t * n];
    for (i, b) in bounds.iter().enumerate().filter(|(i, _)| keep[*i]) {
        for step in b.start..b.end.min(t) {
            col[step * n + i] = T::one();
        }
    }
    g.constant(Tensor::from_parts(vec![t, n, 1], col))
}

fn scale_bounds(bounds: &[BoundarySpec], factor: usize) -> Vec<BoundarySpec> {
    bounds
        .iter()
        .map(|b| BoundarySpec {
            start: b.start * factor,
            end: b.end * factor,
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    pub fn param_count(&self) -> usize {
        self.store.entries().filter(|(_, e)| e.trainable()).map(|(_, e)| e.value().len()).sum()
    }

    fn visual_seq(&self, g: &Graph<'_, T>, batch: &Batch<T>) -> Result<Seq> {
        let (net, video) = match (&self.visual, &batch.video) {
            (Some(n), Some(v)) => (n, v),
            _ => return Err(Error::Mismatch("visual model needs video input".into())),
        };
        let size = video.shape()[3];
        if size != net.config.input_spatial {
            return Err(Error::Mismatch(format!(
                "frames are {size}×{size}, model expects {}",
                net.config.input_spatial
            )));
        }
        let t = video.shape()[2];
        let seq = net.forward_seq(g, g.constant(video.clone()), vec![t; batch.len()])?;
        match &batch.streams {
            Some(m) if m.iter().any(|s| !s.video) => {
                let keep: Vec<bool> = m.iter().map(|s| s.video).collect();
                let data = g.mul_const(seq.data, sample_mask(&g.shape(seq.data), &keep))?;
                Ok(Seq { data, lengths: seq.lengths })
            }
            _ => Ok(seq),
        }
    }

    fn audio_seqs(&self, g: &Graph<'_, T>, batch: &Batch<T>, mode: BoundaryMode) -> Result<(Seq, Seq)> {
        let (front, spectra) = match (&self.audio, &batch.spectra) {
            (Some(f), Some(s)) => (f, s),
            _ => return Err(Error::Mismatch("audio model needs spectral input".into())),
        };
        let t = spectra.shape()[0];
        let seq = Seq::new(g, g.constant(spectra.clone()), vec![t; batch.len()])?;
        let seq = augment_seq(g, &seq, &scale_bounds(&batch.bounds, FRAMES_PER_VIDEO_FRAME), mode)?;
        let (f, b) = front.forward(g, &seq)?;
        match &batch.streams {
            Some(m) if m.iter().any(|s| !s.audio) => {
                let keep: Vec<bool> = m.iter().map(|s| s.audio).collect();
                let mask = sample_mask::<T>(&g.shape(f.data), &keep);
                let f = Seq { data: g.mul_const(f.data, mask.clone())?, lengths: f.lengths };
                let b = Seq { data: g.mul_const(b.data, mask)?, lengths: b.lengths };
                Ok((f, b))
            }
            _ => Ok((f, b)),
        }
    }

    /// Per-direction backend inputs.
    pub fn backend_inputs(&self, g: &Graph<'_, T>, batch: &Batch<T>) -> Result<(Seq, Seq)> {
        let mode = self.spec.boundary_mode;
        let keep_b: Vec<bool> = match &batch.streams {
            Some(m) => m.iter().map(|s| s.boundaries).collect(),
            None => vec![true; batch.len()],
        };
        let removal = match mode {
            BoundaryMode::Indicator => BoundaryMode::Unused,
            m => m,
        };
        let with_indicator = |s: Seq| -> Result<Seq> {
            if mode != BoundaryMode::Indicator {
                return Ok(s);
            }
            let (t, _, _) = s.dims(g);
            let col = indicator(g, &batch.bounds, t, &keep_b);
            Ok(Seq { data: g.concat_last(&[s.data, col])?, lengths: s.lengths })
        };
        match self.spec.kind {
            ModelKind::Visual => {
                let v = self.visual_seq(g, batch)?;
                let v = with_indicator(augment_seq(g, &v, &batch.bounds, removal)?)?;
                Ok((v.clone(), v))
            }
            ModelKind::Audio => self.audio_seqs(g, batch, mode),
            ModelKind::Audiovisual => {
                let v = augment_seq(g, &self.visual_seq(g, batch)?, &batch.bounds, removal)?;
                let (af, ab) = self.audio_seqs(g, batch, removal)?;
                if af.lengths != v.lengths {
                    return Err(Error::Mismatch(format!(
                        "audio frontend emits {:?} frames, video has {:?}",
                        af.lengths, v.lengths
                    )));
                }
                let join = |a: Seq| -> Result<Seq> {
                    let s = Seq { data: g.concat_last(&[v.data, a.data])?, lengths: a.lengths };
                    with_indicator(s)
                };
                Ok((join(af)?, join(ab)?))
            }
        }
    }

    /// Logits `N×V`.
    pub fn forward(&self, g: &Graph<'_, T>, batch: &Batch<T>) -> Result<Var> {
        let (f, b) = self.backend_inputs(g, batch)?;
        match &self.backend {
            Backend::BiLstm(be) => be.forward(g, &f, &b),
            Backend::TConv(be) => be.forward(g, &f),
        }
    }

    /// Eval-mode posteriors, one row per sample.
    pub fn posteriors(&self, batch: &Batch<T>) -> Result<Vec<Vec<f64>>> {
        let g = Graph::with_store(&self.store, Mode::Eval, stream(0, "eval", 0));
        let logits = self.forward(&g, batch)?;
        let v = g.value(logits);
        v.check_finite("logits")?;
        let k = v.shape()[1];
        let p = crate::ops::softmax_rows(v.data(), k);
        Ok(p.chunks(k).map(|r| r.iter().map(|x| x.as_f64()).collect()).collect())
    }
}

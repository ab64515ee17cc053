//! Log-spectral features, WAV I/O and the pyramidal audio frontend.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::recurrent::{BiStack, LayerSpec, Seq, Subsample};
use crate::tensor::{Scalar, Tensor};

pub const SAMPLE_RATE: u32 = 16_000;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
/// 20 ms at 16 kHz.
pub const WINDOW: usize = 320;
pub const BINS: usize = WINDOW / 2 + 1;
pub const LOG_FLOOR: f64 = 1e-6;
/// Audio frames per video frame.
pub const FRAMES_PER_VIDEO_FRAME: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    /// Mono samples in [−1, 1].
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / self.samples.len() as f64
    }

    /// Round every sample onto the 16-bit PCM grid.
    pub fn quantize(&mut self) {
        for s in &mut self.samples {
            *s = pcm_to_f32(f32_to_pcm(*s));
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralSeq {
    /// `T×161`
    pub frames: Tensor<f32>,
    pub frame_rate: f32,
    pub normalized: bool,
}

impl SpectralSeq {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Frame count for `samples` at a 10 ms hop.
pub fn frame_count(samples: usize) -> usize {
    samples.div_ceil(HOP)
}

fn hamming() -> Vec<f64> {
    (0..WINDOW)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (WINDOW - 1) as f64).cos())
        .collect()
}

/// Reusable analysis state.
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Stft::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        Stft {
            fft: FftPlanner::new().plan_fft_forward(WINDOW),
            window: hamming(),
        }
    }

    /// Hamming-windowed magnitude spectra every 10 ms, `log(|X| + 1e-6)`.
    pub fn log_spectra(&self, wave: &Waveform) -> Result<SpectralSeq> {
        if wave.sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be {SAMPLE_RATE} Hz, got {}",
                wave.sample_rate
            )));
        }
        let n = wave.samples.len();
        if n < WINDOW {
            return Err(Error::InvalidArgument(format!(
                "waveform of {n} samples is shorter than one {WINDOW}-sample window"
            )));
        }
        let frames = frame_count(n);
        let mut out = Vec::with_capacity(frames * BINS);
        let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
        for f in 0..frames {
            let start = f * HOP;
            for (k, b) in buf.iter_mut().enumerate() {
                let s = wave.samples.get(start + k).copied().unwrap_or(0.0) as f64;
                *b = Complex::new(s * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            out.extend(buf[..BINS].iter().map(|c| (c.norm() + LOG_FLOOR).ln() as f32));
        }
        Ok(SpectralSeq {
            frames: Tensor::new([frames, BINS], out)?,
            frame_rate: 100.0,
            normalized: false,
        })
    }
}

pub fn stft_log_spectra(wave: &Waveform) -> Result<SpectralSeq> {
    Stft::new().log_spectra(wave)
}

/// Subtract the global mean and divide by the global standard deviation.
pub fn scalar_normalize<T: Scalar>(values: &mut [T]) -> Result<()> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Err(Error::Degenerate("cannot normalise an empty sequence".into()));
    }
    let mean = values.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = values.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::Degenerate("constant spectra have zero variance".into()));
    }
    let inv = 1.0 / (std + 1e-8);
    for v in values {
        *v = T::of((v.as_f64() - mean) * inv);
    }
    Ok(())
}

pub fn utterance_scalar_normalize(mut seq: SpectralSeq) -> Result<SpectralSeq> {
    if seq.normalized {
        return Err(Error::InvalidArgument("spectra are already normalised".into()));
    }
    scalar_normalize(seq.frames.data_mut())?;
    seq.normalized = true;
    Ok(seq)
}

/// Repeat each video-rate value for the audio frames it covers.
pub fn upsample_indicator<T: Copy>(video: &[T], factor: usize) -> Vec<T> {
    video.iter().flat_map(|&v| std::iter::repeat_n(v, factor)).collect()
}

/// Append one column to a `T×D` tensor.
pub fn append_column<T: Scalar>(x: &Tensor<T>, column: &[T]) -> Result<Tensor<T>> {
    if x.ndim() != 2 || column.len() != x.shape()[0] {
        return Err(Error::shape("rows", x.shape()[0], column.len()));
    }
    let d = x.shape()[1];
    let mut out = Vec::with_capacity(x.len() + column.len());
    for (row, &c) in x.data().chunks(d).zip(column) {
        out.extend_from_slice(row);
        out.push(c);
    }
    Tensor::new([x.shape()[0], d + 1], out)
}

fn f32_to_pcm(s: f32) -> i16 {
    (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn pcm_to_f32(v: i16) -> f32 {
    v as f32 / 32768.0
}

/// RIFF/PCM, 16-bit little-endian, mono, 16 kHz.
pub fn encode_wav(wave: &Waveform) -> Result<Vec<u8>> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::Wav(format!("only {SAMPLE_RATE} Hz is written, got {}", wave.sample_rate)));
    }
    let data_len = wave.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &wave.samples {
        out.extend_from_slice(&f32_to_pcm(s).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut format_ok = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + len > bytes.len() {
            return Err(Error::Wav(format!(
                "chunk {:?} at byte {pos} runs past the end of the file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                let (fmt, ch, rate, bits) = (u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14));
                if fmt != 1 {
                    return Err(Error::Wav(format!("format tag {fmt} is not PCM (1)")));
                }
                if ch != 1 {
                    return Err(Error::Wav(format!("{ch} channels; only mono is accepted")));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::Wav(format!("sample rate {rate} Hz; only {SAMPLE_RATE} Hz is accepted")));
                }
                if bits != 16 {
                    return Err(Error::Wav(format!("{bits}-bit samples; only 16-bit is accepted")));
                }
                format_ok = true;
            }
            b"data" => {
                if !format_ok {
                    return Err(Error::Wav("data chunk precedes fmt chunk".into()));
                }
                if len % 2 != 0 {
                    return Err(Error::Wav("odd data length for 16-bit samples".into()));
                }
                let samples = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|c| pcm_to_f32(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(Waveform::new(samples));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(Error::Wav("no data chunk".into()))
}

pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let bytes = encode_wav(wave)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Wav(m) => Error::Wav(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioFrontendConfig {
    pub hidden: usize,
    /// Append the audio-rate boundary indicator to the spectra.
    pub boundary_input: bool,
    pub subsample: Subsample,
    pub input_bn: bool,
    pub dropout: f64,
}

impl Default for AudioFrontendConfig {
    fn default() -> Self {
        AudioFrontendConfig {
            hidden: 256,
            boundary_input: true,
            subsample: Subsample::PairConcat,
            input_bn: true,
            dropout: 0.3,
        }
    }
}

impl AudioFrontendConfig {
    pub fn input_dim(&self) -> usize {
        BINS + self.boundary_input as usize
    }

    pub fn layers(&self) -> Result<[LayerSpec; 2]> {
        if self.subsample == Subsample::None {
            return Err(Error::Config("audio frontend must subsample (pair_concat or keep_even)".into()));
        }
        let last = match self.subsample {
            Subsample::PairConcat if self.hidden % 2 == 1 => {
                return Err(Error::Config(format!(
                    "pair-concat audio frontend needs an even hidden size, got {}",
                    self.hidden
                )))
            }
            Subsample::PairConcat => self.hidden / 2,
            _ => self.hidden,
        };
        let l = LayerSpec {
            hidden: self.hidden,
            input_bn: self.input_bn,
            input_dropout: self.dropout,
            subsample: self.subsample,
        };
        Ok([l, LayerSpec { hidden: last, ..l }])
    }
}

/// Two subsampling LSTM layers per direction: 100 fps in, 25 fps out,
/// `hidden` wide. Under pair-concat the second layer has `hidden / 2` units.
#[derive(Clone, Debug)]
pub struct AudioFrontend {
    pub config: AudioFrontendConfig,
    pub stacks: BiStack,
}

impl AudioFrontend {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &AudioFrontendConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let stacks = BiStack::new(store, name, config.input_dim(), &config.layers()?, rng)?;
        Ok(AudioFrontend {
            config: config.clone(),
            stacks,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.stacks.forward.output_size()
    }

    /// Per-direction outputs of `floor(floor(T/2)/2)` steps.
    pub fn forward<T: Scalar>(&self, g: &Graph<'_, T>, spectra: &Seq) -> Result<(Seq, Seq)> {
        let (t, _, _) = spectra.dims(g);
        if t < 4 || spectra.lengths.iter().any(|&l| l < 4) {
            return Err(Error::InvalidArgument(format!(
                "audio frontend needs at least 4 frames, got lengths {:?}",
                spectra.lengths
            )));
        }
        self.stacks.run_pair(g, spectra, spectra)
    }
}

//! Samples on disk, the synthetic wordbank and the noise protocol.

mod noise;
mod wordbank;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, write_wav, Waveform, SAMPLE_RATE};
use crate::backend::BoundarySpec;
use crate::error::{Error, Result};
use crate::tensor::tnsr::{Payload, Record};
use crate::tensor::{Scalar, Tensor};
use crate::visual::normalize_video;

pub use noise::*;
pub use wordbank::*;

pub const VIDEO_FPS: usize = 25;
pub const CLIP_FRAMES: usize = 29;
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE as usize / VIDEO_FPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub label: usize,
    pub word: String,
    pub boundary_start: usize,
    pub boundary_end: usize,
    pub split: Split,
    pub id: String,
}

/// One utterance: grey frames, mono audio, word interval and label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub word: String,
    pub label: usize,
    pub split: Split,
    pub boundaries: BoundarySpec,
    pub frame_count: usize,
    pub frame_size: usize,
    /// `T×1×H×W` pixels.
    pub frames: Vec<u8>,
    pub waveform: Waveform,
}

impl Sample {
    pub fn meta(&self) -> SampleMeta {
        SampleMeta {
            label: self.label,
            word: self.word.clone(),
            boundary_start: self.boundaries.start,
            boundary_end: self.boundaries.end,
            split: self.split,
            id: self.id.clone(),
        }
    }

    pub fn frame_shape(&self) -> [usize; 4] {
        [self.frame_count, 1, self.frame_size, self.frame_size]
    }

    pub fn validate(&self) -> Result<()> {
        let [t, _, h, w] = self.frame_shape();
        if self.frames.len() != t * h * w {
            return Err(Error::shape("frame pixels", t * h * w, self.frames.len()));
        }
        if self.waveform.samples.len() != t * SAMPLES_PER_FRAME {
            return Err(Error::Mismatch(format!(
                "{}: audio holds {} samples, expected {} for {t} frames",
                self.id,
                self.waveform.samples.len(),
                t * SAMPLES_PER_FRAME
            )));
        }
        self.boundaries.check(t)
    }

    /// Normalised `1×T×H×W` video.
    pub fn video<T: Scalar>(&self) -> Tensor<T> {
        let mut v: Vec<T> = self.frames.iter().map(|&p| T::of(p as f64)).collect();
        normalize_video(&mut v);
        Tensor::from_parts(vec![1, self.frame_count, self.frame_size, self.frame_size], v)
    }
}

pub fn store_sample(sample: &Sample, dir: &Path) -> Result<()> {
    sample.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Record::u8(sample.frame_shape().to_vec(), sample.frames.clone()).write(&dir.join("frames.tnsr"))?;
    write_wav(&dir.join("audio.wav"), &sample.waveform)?;
    let meta = serde_json::to_vec_pretty(&sample.meta())?;
    let path = dir.join("meta.json");
    std::fs::write(&path, meta).map_err(|e| Error::io(path, e))
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    let path = dir.join("meta.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: SampleMeta = serde_json::from_slice(&bytes)?;
    let record = Record::read(&dir.join("frames.tnsr"))?;
    let frames = match record.payload {
        Payload::U8(v) => v,
        other => {
            return Err(Error::Mismatch(format!(
                "{}: frames must be u8, found {:?}",
                dir.display(),
                other.dtype()
            )))
        }
    };
    let s = &record.shape;
    if s.len() != 4 || s[1] != 1 || s[2] != s[3] {
        return Err(Error::Mismatch(format!("{}: frame shape {s:?} is not [T,1,H,H]", dir.display())));
    }
    let sample = Sample {
        id: meta.id,
        word: meta.word,
        label: meta.label,
        split: meta.split,
        boundaries: BoundarySpec {
            start: meta.boundary_start,
            end: meta.boundary_end,
        },
        frame_count: s[0],
        frame_size: s[2],
        frames,
        waveform: read_wav(&dir.join("audio.wav"))?,
    };
    sample.validate()?;
    Ok(sample)
}

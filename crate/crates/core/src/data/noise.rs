use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::wordbank::tone_grid;
use crate::audio::{read_wav, write_wav, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseCategory {
    Domestic,
    Nature,
    Office,
    Public,
    Street,
    Transportation,
}

impl NoiseCategory {
    pub const ALL: [NoiseCategory; 6] = [
        NoiseCategory::Domestic,
        NoiseCategory::Nature,
        NoiseCategory::Office,
        NoiseCategory::Public,
        NoiseCategory::Street,
        NoiseCategory::Transportation,
    ];
    /// Categories used for training noise.
    pub const TRAIN: [NoiseCategory; 4] = [
        NoiseCategory::Domestic,
        NoiseCategory::Nature,
        NoiseCategory::Office,
        NoiseCategory::Public,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseCategory::Domestic => "domestic",
            NoiseCategory::Nature => "nature",
            NoiseCategory::Office => "office",
            NoiseCategory::Public => "public",
            NoiseCategory::Street => "street",
            NoiseCategory::Transportation => "transportation",
        }
    }
}

impl fmt::Display for NoiseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise category {s:?}")))
    }
}

/// Test SNR levels in dB; the clean set is added separately.
pub const TEST_SNRS: [f64; 7] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
pub const TRAIN_SNR_RANGE: (f64, f64) = (-12.0, 22.0);
pub const MAX_MIXTURES: usize = 3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseBank {
    pub sources: BTreeMap<NoiseCategory, Vec<Waveform>>,
}

fn one_pole(x: &[f64], a: f64) -> Vec<f64> {
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = a * y + (1.0 - a) * v;
            y
        })
        .collect()
}

fn modulate(x: &mut [f64], rate_hz: f64, depth: f64, phase: f64) {
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / SAMPLE_RATE as f64;
        *v *= 1.0 - depth * 0.5 * (1.0 + (2.0 * PI * rate_hz * t + phase).sin());
    }
}

fn babble(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let grid = tone_grid();
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    for _ in 0..6 {
        let mut pos = 0;
        let gain = rng.random_range(0.5..1.0);
        while pos < len {
            let dur = rng.random_range(960..2400).min(len - pos);
            let f = grid[rng.random_range(0..grid.len())] * rng.random_range(0.97..1.03);
            for j in 0..dur {
                let edge = j.min(dur - 1 - j) as f64;
                let env = (edge / 80.0).min(1.0);
                out[pos + j] += gain * env * (2.0 * PI * f * j as f64 / sr).sin();
            }
            pos += dur;
        }
    }
    out
}

fn synth_source(cat: NoiseCategory, len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut white = || -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(rng)).collect() };
    let mut x = match cat {
        NoiseCategory::Domestic => {
            let mut x = one_pole(&white(), 0.9);
            modulate(&mut x, 0.7, 0.5, 0.0);
            x
        }
        NoiseCategory::Nature => {
            let w = white();
            let mut x: Vec<f64> = w.windows(2).map(|p| p[1] - p[0]).chain([0.0]).collect();
            modulate(&mut x, 0.3, 0.8, 1.0);
            x
        }
        NoiseCategory::Office => {
            let w = white();
            let (lo, hi) = (one_pole(&w, 0.6), one_pole(&w, 0.95));
            lo.iter().zip(&hi).map(|(a, b)| a - b).collect()
        }
        NoiseCategory::Public => babble(len, rng),
        NoiseCategory::Street => {
            let mut x = one_pole(&white(), 0.995);
            modulate(&mut x, 0.2, 0.6, 2.0);
            x
        }
        NoiseCategory::Transportation => {
            let x = one_pole(&white(), 0.99);
            let f0 = rng.random_range(80.0..120.0);
            x.iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    v + 0.05 * (1..=4).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum::<f64>()
                })
                .collect()
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
    x.iter_mut().for_each(|v| *v *= 0.1 / rms);
    x.into_iter().map(|v| v as f32).collect()
}

impl NoiseBank {
    /// Coloured-noise bank with `per_category` sources of `seconds` each.
    pub fn synthetic(seed: u64, per_category: usize, seconds: f64) -> Result<Self> {
        if per_category == 0 || seconds <= 0.0 {
            return Err(Error::Config("noise bank needs at least one non-empty source".into()));
        }
        let len = (seconds * SAMPLE_RATE as f64).round() as usize;
        let mut sources = BTreeMap::new();
        for (ci, cat) in NoiseCategory::ALL.into_iter().enumerate() {
            let waves = (0..per_category)
                .map(|k| {
                    let mut rng = stream(seed, "noise-source", (ci * 1000 + k) as u64);
                    let mut w = Waveform::new(synth_source(cat, len, &mut rng));
                    w.quantize();
                    w
                })
                .collect();
            sources.insert(cat, waves);
        }
        Ok(NoiseBank { sources })
    }

    /// Reads `root/<category>/*.wav`, in file-name order.
    pub fn load_dir(root: &Path) -> Result<Self> {
        let mut sources = BTreeMap::new();
        for cat in NoiseCategory::ALL {
            let dir = root.join(cat.name());
            if !dir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = std::fs::read_dir(&dir)
                .map_err(|e| Error::io(&dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "wav"))
                .collect();
            files.sort();
            let waves = files.iter().map(|p| read_wav(p)).collect::<Result<Vec<_>>>()?;
            if !waves.is_empty() {
                sources.insert(cat, waves);
            }
        }
        Ok(NoiseBank { sources })
    }

    pub fn write_dir(&self, root: &Path) -> Result<()> {
        for (cat, waves) in &self.sources {
            let dir = root.join(cat.name());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (k, w) in waves.iter().enumerate() {
                write_wav(&dir.join(format!("{k:03}.wav")), w)?;
            }
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<NoiseCategory> {
        self.sources.keys().copied().collect()
    }

    pub fn source(&self, cat: NoiseCategory, index: usize) -> Result<&Waveform> {
        self.sources
            .get(&cat)
            .and_then(|v| v.get(index))
            .ok_or_else(|| Error::Mismatch(format!("noise bank has no {cat} source {index}")))
    }

    fn draw_source(&self, cat: NoiseCategory, len: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize)> {
        let waves = self
            .sources
            .get(&cat)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::Config(format!("noise bank has no {cat} sources")))?;
        let k = rng.random_range(0..waves.len());
        let room = waves[k].samples.len().checked_sub(len).ok_or_else(|| {
            Error::Config(format!("{cat} source {k} is shorter than {len} samples"))
        })?;
        Ok((k, rng.random_range(0..=room)))
    }

    /// Sum of the sources named by `spec`, or `None` for a clean draw.
    pub fn realize(&self, spec: &NoiseSpec, len: usize) -> Result<Option<Waveform>> {
        if spec.mixture_count == 0 {
            return Ok(None);
        }
        let mut acc = vec![0.0f64; len];
        for i in 0..spec.mixture_count {
            let w = self.source(spec.categories[i], spec.sources[i])?;
            let seg = w.samples.get(spec.offsets[i]..spec.offsets[i] + len).ok_or_else(|| {
                Error::Mismatch(format!("noise offset {} out of range", spec.offsets[i]))
            })?;
            acc.iter_mut().zip(seg).for_each(|(a, &s)| *a += s as f64);
        }
        Ok(Some(Waveform::new(acc.into_iter().map(|v| v as f32).collect())))
    }
}

/// Gain that puts `noise_power` at `snr_db` below `signal_power`.
pub fn snr_gain(signal_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

pub fn measured_snr(signal: &Waveform, noise: &Waveform) -> f64 {
    10.0 * (signal.power() / noise.power()).log10()
}

/// The noise exactly as it is added by [`mix_at_snr`].
pub fn scaled_noise(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if signal.samples.len() != noise.samples.len() || signal.sample_rate != noise.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "signal ({} @ {} Hz) and noise ({} @ {} Hz) differ in length or rate",
            signal.samples.len(),
            signal.sample_rate,
            noise.samples.len(),
            noise.sample_rate
        )));
    }
    let ps = signal.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(Error::Degenerate("signal has zero power".into()));
    }
    if pn <= 0.0 {
        return Err(Error::Degenerate(format!("noise has zero power at finite SNR {snr_db} dB")));
    }
    let g = snr_gain(ps, pn, snr_db);
    let mut out = Waveform {
        samples: noise.samples.iter().map(|&s| (s as f64 * g) as f32).collect(),
        sample_rate: noise.sample_rate,
    };
    // one correction step absorbs the f32 rounding of the scaled samples
    let fix = snr_gain(ps, out.power(), snr_db);
    out.samples = noise.samples.iter().map(|&s| (s as f64 * g * fix) as f32).collect();
    Ok(out)
}

/// `signal + g·noise` with `g` chosen so the mixture sits at `snr_db`;
/// `f64::INFINITY` returns the signal untouched.
pub fn mix_at_snr(signal: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidArgument(format!("snr {snr_db} dB")));
    }
    let n = scaled_noise(signal, noise, snr_db)?;
    Ok(Waveform {
        samples: signal.samples.iter().zip(&n.samples).map(|(a, b)| a + b).collect(),
        sample_rate: signal.sample_rate,
    })
}

/// One training-noise draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mixture_count: usize,
    pub categories: Vec<NoiseCategory>,
    pub sources: Vec<usize>,
    pub offsets: Vec<usize>,
    pub snr_db: f64,
}

pub fn sample_train_noise(bank: &NoiseBank, len: usize, rng: &mut ChaCha8Rng) -> Result<NoiseSpec> {
    let cats: Vec<NoiseCategory> = NoiseCategory::TRAIN
        .into_iter()
        .filter(|c| bank.sources.get(c).is_some_and(|v| !v.is_empty()))
        .collect();
    if cats.is_empty() {
        return Err(Error::Config("noise bank holds no training categories".into()));
    }
    let mixture_count = rng.random_range(0..=MAX_MIXTURES);
    let snr_db = rng.random_range(TRAIN_SNR_RANGE.0..TRAIN_SNR_RANGE.1);
    let mut spec = NoiseSpec {
        mixture_count,
        categories: Vec::new(),
        sources: Vec::new(),
        offsets: Vec::new(),
        snr_db,
    };
    for _ in 0..mixture_count {
        let cat = cats[rng.random_range(0..cats.len())];
        let (k, off) = bank.draw_source(cat, len, rng)?;
        spec.categories.push(cat);
        spec.sources.push(k);
        spec.offsets.push(off);
    }
    Ok(spec)
}

/// Apply a training draw to a clean waveform.
pub fn apply_noise(bank: &NoiseBank, clean: &Waveform, spec: &NoiseSpec) -> Result<Waveform> {
    match bank.realize(spec, clean.samples.len())? {
        None => Ok(clean.clone()),
        Some(n) => mix_at_snr(clean, &n, spec.snr_db),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyEntry {
    pub id: String,
    pub category: NoiseCategory,
    pub source: usize,
    pub offset: usize,
}

/// A fixed noisy copy of the test split at one SNR (`None` is clean).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyTestSet {
    pub snr_db: Option<f64>,
    pub entries: Vec<NoisyEntry>,
}

impl NoisyTestSet {
    pub fn label(&self) -> String {
        match self.snr_db {
            Some(s) => format!("{s}"),
            None => "clean".into(),
        }
    }

    pub fn entry(&self, id: &str) -> Result<&NoisyEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Mismatch(format!("noisy set {} has no sample {id}", self.label())))
    }

    /// The noisy waveform of sample `id`.
    pub fn apply(&self, bank: &NoiseBank, id: &str, clean: &Waveform) -> Result<Waveform> {
        let Some(snr) = self.snr_db else {
            return Ok(clean.clone());
        };
        let e = self.entry(id)?;
        let len = clean.samples.len();
        let src = bank.source(e.category, e.source)?;
        let seg = src
            .samples
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Mismatch(format!("noise offset {} out of range", e.offset)))?;
        mix_at_snr(clean, &Waveform::new(seg.to_vec()), snr)
    }
}

/// Seven noisy sets and one clean set over `test_ids`; each sample gets a
/// single source, with categories balanced across samples.
pub fn build_test_noise_sets(
    bank: &NoiseBank,
    test_ids: &[String],
    len: usize,
    seed: u64,
) -> Result<Vec<NoisyTestSet>> {
    for cat in NoiseCategory::ALL {
        if bank.sources.get(&cat).is_none_or(|v| v.is_empty()) {
            return Err(Error::Config(format!("test noise needs {cat} sources")));
        }
    }
    let mut sets = Vec::with_capacity(TEST_SNRS.len() + 1);
    for (si, &snr) in TEST_SNRS.iter().enumerate() {
        let mut rng = stream(seed, "test-noise", si as u64);
        let mut order: Vec<usize> = (0..test_ids.len()).collect();
        order.shuffle(&mut rng);
        let mut entries = vec![None; test_ids.len()];
        for (rank, &i) in order.iter().enumerate() {
            let category = NoiseCategory::ALL[rank % NoiseCategory::ALL.len()];
            let (source, offset) = bank.draw_source(category, len, &mut rng)?;
            entries[i] = Some(NoisyEntry {
                id: test_ids[i].clone(),
                category,
                source,
                offset,
            });
        }
        sets.push(NoisyTestSet {
            snr_db: Some(snr),
            entries: entries.into_iter().map(Option::unwrap).collect(),
        });
    }
    sets.push(NoisyTestSet {
        snr_db: None,
        entries: Vec::new(),
    });
    Ok(sets)
}

pub fn write_test_noise_sets(dir: &Path, sets: &[NoisyTestSet]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in sets {
        let path = dir.join(format!("snr_{}.json", s.label()));
        std::fs::write(&path, serde_json::to_vec_pretty(s)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn read_test_noise_sets(dir: &Path) -> Result<Vec<NoisyTestSet>> {
    let mut sets = Vec::new();
    for label in TEST_SNRS.iter().map(|s| format!("{s}")).chain(["clean".to_string()]) {
        let path = dir.join(format!("snr_{label}.json"));
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        sets.push(serde_json::from_slice(&bytes)?);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn closed_form_gain() {
        assert!((snr_gain(1.0, 4.0, 10.0) - (1.0f64 / 40.0).sqrt()).abs() < 1e-15);
        assert_eq!(snr_gain(2.0, 2.0, 0.0), 1.0);
    }

    #[test]
    fn clean_sentinel_is_bitwise() {
        let s = Waveform::new(vec![0.1, -0.2, 0.3]);
        let n = Waveform::new(vec![0.0; 3]);
        assert_eq!(mix_at_snr(&s, &n, f64::INFINITY).unwrap(), s);
        assert!(mix_at_snr(&s, &n, 5.0).is_err());
    }

    #[test]
    fn synthetic_bank_layout() {
        let bank = NoiseBank::synthetic(1, 3, 0.5).unwrap();
        assert_eq!(bank.categories(), NoiseCategory::ALL.to_vec());
        for waves in bank.sources.values() {
            assert_eq!(waves.len(), 3);
            assert!(waves.iter().all(|w| w.samples.len() == 8000 && w.power() > 0.0));
        }
    }

    #[test]
    fn train_draws_use_train_categories() {
        let bank = NoiseBank::synthetic(2, 3, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_train_noise(&bank, 18_560, &mut rng).unwrap();
            assert!(s.categories.iter().all(|c| NoiseCategory::TRAIN.contains(c)));
            assert!((-12.0..22.0).contains(&s.snr_db));
        }
    }
}

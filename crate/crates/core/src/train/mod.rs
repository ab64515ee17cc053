//! Optimisation, evaluation and error analysis.

mod eval;
mod optim;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::autograd::{Graph, Mode};
use crate::backend::{BoundaryMode, Vocabulary};
use crate::data::{apply_noise, sample_train_noise, NoiseBank, Sample, Split, Wordbank};
use crate::error::{Error, Result};
use crate::integration::{assemble_model, multimodal_mask_sample, Batch, Model, ModelKind, ModelSpec, MultimodalDropConfig};
use crate::rng::stream;
use crate::tensor::Scalar;

pub use eval::*;
pub use optim::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam: AdamConfig,
    pub scheduler: SchedulerConfig,
    /// Add training noise to the audio of audio-bearing models.
    pub noise: bool,
    pub multimodal: MultimodalDropConfig,
    pub seed: u64,
    /// Stop once the eval-mode training MCR is at or below this value.
    pub stop_at_train_mcr: Option<f64>,
    /// Log the eval-mode training MCR every epoch.
    pub track_train_mcr: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            adam: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            noise: true,
            multimodal: MultimodalDropConfig::default(),
            seed: 0,
            stop_at_train_mcr: None,
            track_train_mcr: false,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch sizes and max_epochs must be positive".into()));
        }
        self.adam.validate()?;
        PlateauScheduler::new(self.scheduler.clone())?;
        self.multimodal.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mcr: Option<f64>,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub train_mcr: Option<f64>,
    pub wall_s: f64,
}

/// SHA-256 over the log with the wall-clock field removed.
pub fn log_hash(records: &[LogRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        let mut v = serde_json::to_value(r).expect("log record serialises");
        v.as_object_mut().map(|o| o.remove("wall_s"));
        h.update(v.to_string().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    LearningRateExhausted,
    TrainTargetReached,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<LogRecord>,
    pub optimizer: OptimizerState,
    pub scheduler: PlateauScheduler,
    pub stop: StopReason,
}

/// Samples and resources one training run draws on.
pub struct TrainData<'a> {
    pub train: Vec<&'a Sample>,
    pub val: Vec<&'a Sample>,
    pub vocab: &'a Vocabulary,
    pub noise: Option<&'a NoiseBank>,
}

impl<'a> TrainData<'a> {
    pub fn from_wordbank(wb: &'a Wordbank, noise: Option<&'a NoiseBank>) -> Self {
        TrainData {
            train: wb.split(Split::Train),
            val: wb.split(Split::Val),
            vocab: &wb.vocab,
            noise,
        }
    }
}

fn noisy_waves(bank: &NoiseBank, samples: &[&Sample], rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<Waveform>> {
    samples
        .iter()
        .map(|s| {
            let spec = sample_train_noise(bank, s.waveform.samples.len(), rng)?;
            apply_noise(bank, &s.waveform, &spec)
        })
        .collect()
}

pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &TrainData<'_>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if data.vocab.len() != model.spec.vocab_size {
        return Err(Error::Mismatch(format!(
            "vocabulary has {} words, model predicts {}",
            data.vocab.len(),
            model.spec.vocab_size
        )));
    }
    let kind = model.spec.kind;
    let noise = match (kind.uses_audio() && cfg.noise, data.noise) {
        (true, Some(b)) => Some(b),
        (true, None) => return Err(Error::Config("noise training needs a noise bank".into())),
        _ => None,
    };
    let mut opt = OptimizerState::new(&model.store, &cfg.adam);
    let mut sched = PlateauScheduler::new(cfg.scheduler.clone())?;
    let mut records = Vec::new();
    let start = Instant::now();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let good = model.store.clone();
        let mut order = data.train.clone();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        let mut noise_rng = stream(cfg.seed, "noise", epoch as u64);
        let mut mask_rng = stream(cfg.seed, "streams", epoch as u64);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let waves = match noise {
                Some(bank) => Some(noisy_waves(bank, chunk, &mut noise_rng)?),
                None => None,
            };
            let mut batch = Batch::<T>::from_samples(kind, chunk, waves.as_deref())?;
            if kind == ModelKind::Audiovisual && cfg.multimodal.enabled {
                batch.streams = Some(
                    (0..chunk.len())
                        .map(|_| multimodal_mask_sample(&cfg.multimodal, Mode::Train, &mut mask_rng))
                        .collect::<Result<_>>()?,
                );
            }
            let step = (|| {
                let g = Graph::with_store(&model.store, Mode::Train, stream(cfg.seed, "dropout", ((epoch as u64) << 24) | b as u64));
                let logits = model.forward(&g, &batch)?;
                let (loss, _) = g.softmax_cross_entropy(logits, &batch.labels)?;
                let lv = g.value(loss).data()[0].as_f64();
                if !lv.is_finite() {
                    return Err(Error::Numerical(format!("loss is {lv} at epoch {epoch}")));
                }
                let grads = g.backward(loss)?;
                Ok((lv, grads, g.take_buffer_updates()))
            })();
            let (lv, grads, updates) = match step {
                Ok(s) => s,
                Err(e) => {
                    model.store = good;
                    return Err(match e {
                        Error::NonFinite(m) => Error::Numerical(m),
                        other => other,
                    });
                }
            };
            if let Err(e) = adam_step(&mut model.store, &grads, &mut opt) {
                model.store = good;
                return Err(e);
            }
            model.store.apply_buffer_updates(updates);
            loss_sum += lv * chunk.len() as f64;
            seen += chunk.len();
        }
        let loss = loss_sum / seen as f64;
        let scorer = Scorer::Single(model);
        let val_mcr = if data.val.is_empty() {
            None
        } else {
            Some(scorer.evaluate(&data.val, None, data.vocab, cfg.eval_batch_size)?.mcr)
        };
        let train_mcr = if cfg.track_train_mcr || cfg.stop_at_train_mcr.is_some() {
            Some(scorer.evaluate(&data.train, None, data.vocab, cfg.eval_batch_size)?.mcr)
        } else {
            None
        };
        let record = LogRecord {
            epoch,
            loss,
            val_mcr,
            lr: opt.lr,
            train_mcr,
            wall_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} loss {loss:.4} val_mcr {:?} train_mcr {:?} lr {:.2e}",
            val_mcr,
            train_mcr,
            opt.lr
        );
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record)?;
            writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
        }
        records.push(record);
        opt.lr = sched.step(val_mcr.unwrap_or(loss), opt.lr);
        if let (Some(target), Some(m)) = (cfg.stop_at_train_mcr, train_mcr) {
            if m <= target {
                stop = StopReason::TrainTargetReached;
                break;
            }
        }
        if sched.exhausted {
            stop = StopReason::LearningRateExhausted;
            break;
        }
    }
    Ok(TrainOutcome {
        records,
        optimizer: opt,
        scheduler: sched,
        stop,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextWord {
    pub word: String,
    pub predictable: bool,
    pub mcr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub report: EvalReport,
    pub chance_mcr: f64,
    pub per_word: Vec<ContextWord>,
    /// Words recognised from context alone at MCR ≤ 50%.
    pub recognised: Vec<String>,
}

impl ContextReport {
    /// Pooled MCR over the predictable (`true`) or context-free words.
    pub fn group_mcr(&self, predictable: bool) -> Option<f64> {
        let (mut err, mut n) = (0, 0);
        for (i, w) in self.per_word.iter().enumerate() {
            if w.predictable == predictable {
                err += self.report.per_word_errors[i];
                n += self.report.per_word_counts[i];
            }
        }
        (n > 0).then(|| 100.0 * err as f64 / n as f64)
    }
}

/// Per-word table for a model trained and scored without in-boundary frames.
pub fn context_report(wb: &Wordbank, report: EvalReport) -> ContextReport {
    let v = wb.vocab.len();
    let per_word: Vec<ContextWord> = (0..v)
        .map(|i| ContextWord {
            word: wb.vocab.word(i).to_string(),
            predictable: wb.is_predictable(i),
            mcr: report.word_mcr(i).unwrap_or(f64::NAN),
        })
        .collect();
    let recognised = per_word.iter().filter(|w| w.mcr <= 50.0).map(|w| w.word.clone()).collect();
    ContextReport {
        report,
        chance_mcr: 100.0 * (1.0 - 1.0 / v as f64),
        per_word,
        recognised,
    }
}

/// Train with in-boundary frames removed and score the test split.
pub fn context_only_eval<T: Scalar>(wb: &Wordbank, spec: &ModelSpec, cfg: &TrainConfig) -> Result<(Model<T>, ContextReport)> {
    if wb.config.predictable_words == 0 {
        return Err(Error::Config("context-only evaluation needs context-predictable words".into()));
    }
    if spec.kind == ModelKind::Audio {
        return Err(Error::Config("context-only evaluation runs on the visual stream".into()));
    }
    let spec = ModelSpec {
        boundary_mode: BoundaryMode::RemoveInside,
        ..spec.clone()
    };
    let mut model = assemble_model::<T>(&spec, cfg.seed)?;
    train(&mut model, &TrainData::from_wordbank(wb, None), cfg, None)?;
    let report = Scorer::Single(&model).evaluate(&wb.split(Split::Test), None, &wb.vocab, cfg.eval_batch_size)?;
    Ok((model, context_report(wb, report)))
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::backend::Vocabulary;
use crate::data::{NoiseBank, NoiseCategory, NoisyTestSet, Sample, TEST_SNRS};
use crate::error::{Error, Result};
use crate::integration::{late_fuse_rows, Batch, FusionConfig, Model};
use crate::tensor::{argmax, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mcr: f64,
    pub total: usize,
    pub correct: usize,
    pub words: Vec<String>,
    pub per_word_counts: Vec<usize>,
    pub per_word_errors: Vec<usize>,
    /// `(target, estimate) → count`, every cell with a nonzero count.
    #[serde(with = "cells")]
    pub confusion: BTreeMap<(usize, usize), usize>,
    pub predictions: Vec<usize>,
}

mod cells {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(usize, usize), usize>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(&(t, e), &c)| [t, e, c]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(usize, usize), usize>, D::Error> {
        Ok(Vec::<[usize; 3]>::deserialize(d)?.into_iter().map(|[t, e, c]| ((t, e), c)).collect())
    }
}

impl EvalReport {
    pub fn word_mcr(&self, label: usize) -> Option<f64> {
        let n = self.per_word_counts[label];
        (n > 0).then(|| 100.0 * self.per_word_errors[label] as f64 / n as f64)
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mcr": self.mcr,
            "total": self.total,
            "correct": self.correct,
            "per_word": self.words.iter().enumerate().map(|(i, w)| serde_json::json!({
                "word": w,
                "count": self.per_word_counts[i],
                "errors": self.per_word_errors[i],
            })).collect::<Vec<_>>(),
            "confusion": self.confusion.iter().map(|(&(t, e), &c)| [t, e, c]).collect::<Vec<_>>(),
        })
    }
}

/// Argmax decisions against `labels`; ties go to the lowest class index.
pub fn evaluate_mcr(posteriors: &[Vec<f64>], labels: &[usize], vocab: &Vocabulary) -> Result<EvalReport> {
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    if posteriors.len() != labels.len() {
        return Err(Error::shape("evaluated samples", labels.len(), posteriors.len()));
    }
    let v = vocab.len();
    let mut counts = vec![0; v];
    let mut errors = vec![0; v];
    let mut confusion = BTreeMap::new();
    let mut predictions = Vec::with_capacity(labels.len());
    for (p, &l) in posteriors.iter().zip(labels) {
        if p.len() != v || l >= v {
            return Err(Error::shape("posterior classes", v, p.len()));
        }
        let e = argmax(p.iter().copied());
        counts[l] += 1;
        if e != l {
            errors[l] += 1;
        }
        *confusion.entry((l, e)).or_insert(0) += 1;
        predictions.push(e);
    }
    let total = labels.len();
    let correct = total - errors.iter().sum::<usize>();
    Ok(EvalReport {
        mcr: 100.0 * (1.0 - correct as f64 / total as f64),
        total,
        correct,
        words: vocab.words().to_vec(),
        per_word_counts: counts,
        per_word_errors: errors,
        confusion,
        predictions,
    })
}

/// Most frequent off-diagonal `(target, estimate, count)` cells.
pub fn confusion_pairs(report: &EvalReport, top_k: usize) -> Vec<(String, String, usize)> {
    let mut cells: Vec<((usize, usize), usize)> = report
        .confusion
        .iter()
        .filter(|((t, e), _)| t != e)
        .map(|(&k, &c)| (k, c))
        .collect();
    cells.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    cells
        .into_iter()
        .take(top_k)
        .map(|((t, e), c)| (report.words[t].clone(), report.words[e].clone(), c))
        .collect()
}

/// A single network or a late-fused visual/audio pair.
pub enum Scorer<'a, T: Scalar> {
    Single(&'a Model<T>),
    Fused {
        visual: &'a Model<T>,
        audio: &'a Model<T>,
        fusion: FusionConfig,
    },
}

fn model_posteriors<T: Scalar>(
    model: &Model<T>,
    samples: &[&Sample],
    waves: Option<&[Waveform]>,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for (k, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let w = waves.map(|w| &w[k * batch_size..k * batch_size + chunk.len()]);
        let batch = Batch::from_samples(model.spec.kind, chunk, w)?;
        out.extend(model.posteriors(&batch)?);
    }
    Ok(out)
}

impl<T: Scalar> Scorer<'_, T> {
    /// Posteriors for `samples`; `waves` replaces their audio when given.
    pub fn posteriors(&self, samples: &[&Sample], waves: Option<&[Waveform]>, batch_size: usize) -> Result<Vec<Vec<f64>>> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty evaluation set".into()));
        }
        match self {
            Scorer::Single(m) => model_posteriors(m, samples, waves, batch_size),
            Scorer::Fused { visual, audio, fusion } => {
                let pv = model_posteriors(visual, samples, None, batch_size)?;
                let pa = model_posteriors(audio, samples, waves, batch_size)?;
                late_fuse_rows(&pv, &pa, fusion)
            }
        }
    }

    pub fn evaluate(&self, samples: &[&Sample], waves: Option<&[Waveform]>, vocab: &Vocabulary, batch_size: usize) -> Result<EvalReport> {
        let p = self.posteriors(samples, waves, batch_size)?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        evaluate_mcr(&p, &labels, vocab)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr: String,
    pub mcr: f64,
    /// MCR per noise category at this SNR; empty for the clean row.
    pub per_category: BTreeMap<NoiseCategory, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Category MCR averaged over the noisy SNR levels.
    pub category_average: BTreeMap<NoiseCategory, f64>,
    pub reports: Vec<EvalReport>,
}

impl SweepReport {
    pub fn mcr_at(&self, snr: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.snr == snr).map(|r| r.mcr)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("snr,mcr");
        for c in NoiseCategory::ALL {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{:.4}", r.snr, r.mcr));
            for c in NoiseCategory::ALL {
                match r.per_category.get(&c) {
                    Some(v) => s.push_str(&format!(",{v:.4}")),
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn category_csv(&self) -> String {
        let mut s = String::from("category,mcr\n");
        for (c, v) in &self.category_average {
            s.push_str(&format!("{c},{v:.4}\n"));
        }
        s
    }
}

/// MCR of `scorer` on every fixed noisy test set, in the order
/// −10 … 20 dB then clean.
pub fn snr_sweep_report<T: Scalar>(
    scorer: &Scorer<'_, T>,
    sets: &[NoisyTestSet],
    bank: &NoiseBank,
    test: &[&Sample],
    vocab: &Vocabulary,
    batch_size: usize,
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut sums: BTreeMap<NoiseCategory, (f64, usize)> = BTreeMap::new();
    let wanted: Vec<Option<f64>> = TEST_SNRS.iter().map(|&s| Some(s)).chain([None]).collect();
    for snr in wanted {
        let set = sets
            .iter()
            .find(|s| s.snr_db == snr)
            .ok_or_else(|| Error::Mismatch(format!("missing noisy test set for {snr:?}")))?;
        let waves = test
            .iter()
            .map(|s| set.apply(bank, &s.id, &s.waveform))
            .collect::<Result<Vec<_>>>()?;
        let report = scorer.evaluate(test, Some(&waves), vocab, batch_size)?;
        let mut per_category = BTreeMap::new();
        if snr.is_some() {
            let mut cat: BTreeMap<NoiseCategory, (usize, usize)> = BTreeMap::new();
            for (s, &pred) in test.iter().zip(&report.predictions) {
                let e = cat.entry(set.entry(&s.id)?.category).or_default();
                e.0 += (pred != s.label) as usize;
                e.1 += 1;
            }
            for (c, (err, n)) in cat {
                let m = 100.0 * err as f64 / n as f64;
                per_category.insert(c, m);
                let acc = sums.entry(c).or_default();
                acc.0 += m;
                acc.1 += 1;
            }
        }
        rows.push(SweepRow {
            snr: set.label(),
            mcr: report.mcr,
            per_category,
        });
        reports.push(report);
    }
    Ok(SweepReport {
        rows,
        category_average: sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect(),
        reports,
    })
}

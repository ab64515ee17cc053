//! Checkpoint directories: `manifest.json`, one TNSR blob per parameter and
//! optional optimizer moments.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integration::{assemble_model, Model, ModelSpec};
use crate::tensor::tnsr::{Payload, Record};
use crate::tensor::{Scalar, Tensor};
use crate::train::{OptimizerState, PlateauScheduler};

pub const FORMAT: &str = "avword-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub params: Vec<ParamRecord>,
    pub optimizer: Option<OptimizerRecord>,
    pub scheduler: Option<PlateauScheduler>,
}

fn write_record(dir: &Path, file: &str, r: &Record) -> Result<()> {
    r.write(&dir.join(file))
}

fn f64_record(v: &[f64]) -> Record {
    Record {
        shape: vec![v.len().max(1)],
        payload: Payload::F64(if v.is_empty() { vec![0.0] } else { v.to_vec() }),
    }
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    model: &Model<T>,
    optimizer: Option<&OptimizerState>,
    scheduler: Option<&PlateauScheduler>,
) -> Result<()> {
    for sub in ["params", "optimizer"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut params = Vec::new();
    for (_, e) in model.store.entries() {
        let file = format!("params/{}.tnsr", e.name());
        write_record(dir, &file, &Record::from_tensor(e.value()))?;
        params.push(ParamRecord {
            name: e.name().to_string(),
            file,
            shape: e.value().shape().to_vec(),
            trainable: e.trainable(),
        });
    }
    if let Some(o) = optimizer {
        for (i, (m, v)) in o.m.iter().zip(&o.v).enumerate() {
            write_record(dir, &format!("optimizer/m_{i:04}.tnsr"), &f64_record(m))?;
            write_record(dir, &format!("optimizer/v_{i:04}.tnsr"), &f64_record(v))?;
        }
    }
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        spec: model.spec.clone(),
        params,
        optimizer: optimizer.map(|o| OptimizerRecord {
            step: o.step,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
        }),
        scheduler: scheduler.cloned(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_slice(&bytes)?;
    if m.format != FORMAT || m.version != FORMAT_VERSION {
        return Err(Error::Mismatch(format!(
            "{}: unsupported checkpoint {} v{}",
            dir.display(),
            m.format,
            m.version
        )));
    }
    Ok(m)
}

pub struct Loaded<T: Scalar> {
    pub model: Model<T>,
    pub optimizer: Option<OptimizerState>,
    pub scheduler: Option<PlateauScheduler>,
}

/// Rebuild the stored network and fill in every parameter; `expect`
/// guards against loading a different architecture.
pub fn load_checkpoint<T: Scalar>(dir: &Path, expect: Option<&ModelSpec>) -> Result<Loaded<T>> {
    let m = read_manifest(dir)?;
    if let Some(spec) = expect {
        if spec != &m.spec {
            return Err(Error::Mismatch(format!(
                "{}: checkpoint holds a {} model that differs from the requested spec",
                dir.display(),
                m.spec.kind
            )));
        }
    }
    let mut model = assemble_model::<T>(&m.spec, 0)?;
    if model.store.len() != m.params.len() {
        return Err(Error::Mismatch(format!(
            "checkpoint lists {} tensors, the model has {}",
            m.params.len(),
            model.store.len()
        )));
    }
    for p in &m.params {
        let id = model
            .store
            .id(&p.name)
            .ok_or_else(|| Error::Mismatch(format!("unknown parameter {} in checkpoint", p.name)))?;
        let t: Tensor<T> = Record::read(&dir.join(&p.file))?.to_tensor()?;
        model.store.set(id, t)?;
    }
    let optimizer = match &m.optimizer {
        None => None,
        Some(o) => {
            let mut st = OptimizerState::new(&model.store, &Default::default());
            st.step = o.step;
            st.lr = o.lr;
            st.beta1 = o.beta1;
            st.beta2 = o.beta2;
            st.epsilon = o.epsilon;
            for i in 0..st.m.len() {
                if st.m[i].is_empty() {
                    continue;
                }
                for (slot, prefix) in [(&mut st.m[i], "m"), (&mut st.v[i], "v")] {
                    let r = Record::read(&dir.join(format!("optimizer/{prefix}_{i:04}.tnsr")))?;
                    let Payload::F64(v) = r.payload else {
                        return Err(Error::Mismatch("optimizer moments must be f64".into()));
                    };
                    if v.len() != slot.len() {
                        return Err(Error::shape("optimizer moment", slot.len(), v.len()));
                    }
                    *slot = v;
                }
            }
            Some(st)
        }
    };
    Ok(Loaded {
        model,
        optimizer,
        scheduler: m.scheduler,
    })
}

//! Single-file checkpoint: a JSON manifest line followed by raw
//! little-endian f64 blobs (parameters, then Adam first and second moments,
//! in manifest order). The manifest carries everything needed to rebuild
//! the model and resume training bit-for-bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{CdsError, Result};
use crate::model::{Model, ModelFlags};
use crate::numerics::ParamSet;

const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// "pretrain", "stage1", "stage2", or "done".
    pub stage: String,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub config: Config,
    pub flags: ModelFlags,
    pub params: ParamSet<f64>,
    pub adam_t: u64,
    pub adam_m: BTreeMap<String, Vec<f64>>,
    pub adam_v: BTreeMap<String, Vec<f64>>,
    /// Epoch after which stage 1 ended, once known (fixed or via plateau).
    pub stage1_end: Option<usize>,
    /// Validation MSE per stage-1 epoch, kept for plateau detection on resume.
    pub stage1_val_mse: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    stage: String,
    epoch: usize,
    seed: u64,
    adam_t: u64,
    has_moments: bool,
    stage1_end: Option<usize>,
    stage1_val_mse: Vec<f64>,
    flags: ModelFlags,
    config: Config,
    params: Vec<ParamMeta>,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], cursor: &mut usize, len: usize, what: &str) -> Result<Vec<f64>> {
    let need = len * 8;
    if *cursor + need > bytes.len() {
        return Err(CdsError::Checkpoint(format!("truncated blob while reading {what}")));
    }
    let out = bytes[*cursor..*cursor + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *cursor += need;
    Ok(out)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let names = self.params.names();
        if self.adam_t > 0 {
            for n in &names {
                assert!(
                    self.adam_m.contains_key(n) && self.adam_v.contains_key(n),
                    "contract violation: missing optimizer moments for {n:?}"
                );
            }
        }
        // JSON cannot represent non-finite values; the trainer never records
        // them, so hitting one here is a bug.
        assert!(
            self.stage1_val_mse.iter().all(|v| v.is_finite()),
            "contract violation: non-finite validation history"
        );
        let manifest = Manifest {
            version: VERSION,
            stage: self.stage.clone(),
            epoch: self.epoch,
            seed: self.seed,
            adam_t: self.adam_t,
            has_moments: self.adam_t > 0,
            stage1_end: self.stage1_end,
            stage1_val_mse: self.stage1_val_mse.clone(),
            flags: self.flags.clone(),
            config: self.config.clone(),
            params: names
                .iter()
                .map(|n| ParamMeta { name: n.clone(), shape: self.params.get(n).shape().to_vec() })
                .collect(),
        };
        let mut bytes = serde_json::to_string(&manifest)
            .expect("manifest serialization cannot fail")
            .into_bytes();
        bytes.push(b'\n');
        for n in &names {
            push_f64s(&mut bytes, self.params.get(n).data());
        }
        if manifest.has_moments {
            for n in &names {
                push_f64s(&mut bytes, &self.adam_m[n]);
            }
            for n in &names {
                push_f64s(&mut bytes, &self.adam_v[n]);
            }
        }
        fs::write(path, bytes).map_err(|e| CdsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CdsError::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| CdsError::Checkpoint("missing manifest line".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| CdsError::Checkpoint(format!("bad manifest: {e}")))?;
        if manifest.version != VERSION {
            return Err(CdsError::Checkpoint(format!(
                "unsupported version {} (expected {VERSION})",
                manifest.version
            )));
        }
        manifest.config.validate()?;

        // The manifest must describe exactly the parameters the model
        // declares for this config and flag set.
        let model = Model::new(&manifest.config, manifest.flags.clone());
        let mut params = model.init_params::<f64>(manifest.seed);
        let expected = params.names();
        let got: Vec<String> = manifest.params.iter().map(|p| p.name.clone()).collect();
        for name in &got {
            if !params.contains(name) {
                return Err(CdsError::Checkpoint(format!("unknown parameter {name:?}")));
            }
        }
        for name in &expected {
            if !got.contains(name) {
                return Err(CdsError::Checkpoint(format!("missing parameter {name:?}")));
            }
        }
        for meta in &manifest.params {
            let shape = params.get(&meta.name).shape().to_vec();
            if meta.shape != shape {
                return Err(CdsError::Checkpoint(format!(
                    "shape mismatch for {:?}: stored {:?}, model wants {:?}",
                    meta.name, meta.shape, shape
                )));
            }
        }

        let mut cursor = nl + 1;
        for meta in &manifest.params {
            let len: usize = meta.shape.iter().product();
            let vals = read_f64s(&bytes, &mut cursor, len, &format!("parameter {:?}", meta.name))?;
            params.set(&meta.name, vals);
        }
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        if manifest.has_moments {
            for meta in &manifest.params {
                let len: usize = meta.shape.iter().product();
                let vals =
                    read_f64s(&bytes, &mut cursor, len, &format!("moment m {:?}", meta.name))?;
                adam_m.insert(meta.name.clone(), vals);
            }
            for meta in &manifest.params {
                let len: usize = meta.shape.iter().product();
                let vals =
                    read_f64s(&bytes, &mut cursor, len, &format!("moment v {:?}", meta.name))?;
                adam_v.insert(meta.name.clone(), vals);
            }
        }
        if cursor != bytes.len() {
            return Err(CdsError::Checkpoint(format!(
                "{} trailing bytes after the last blob",
                bytes.len() - cursor
            )));
        }
        Ok(Self {
            stage: manifest.stage,
            epoch: manifest.epoch,
            seed: manifest.seed,
            config: manifest.config,
            flags: manifest.flags,
            params,
            adam_t: manifest.adam_t,
            adam_m,
            adam_v,
            stage1_end: manifest.stage1_end,
            stage1_val_mse: manifest.stage1_val_mse,
        })
    }
}

//! Parameter checkpoints: a binary tensor container plus a JSON manifest.
//!
//! Container layout, all integers little-endian:
//! `b"FLWTNSR1"`, `u32` tensor count, then per tensor `u32` name length,
//! UTF-8 name, `u32` rank, `u64` per dimension, and the values as `f64`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Mat};
use crate::dataset::write_text;
use crate::error::{Error, Result};
use crate::model::{GavConfig, GavModel};
use crate::train::{HistoryEntry, TrainConfig, TrainState};

const MAGIC: &[u8; 8] = b"FLWTNSR1";
pub const FORMAT: &str = "flowlink-checkpoint-v1";
pub const TENSOR_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_tensors(path: &Path, tensors: &[(String, &Mat)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&2u32.to_le_bytes())?;
        put(&(m.nrows() as u64).to_le_bytes())?;
        put(&(m.ncols() as u64).to_le_bytes())?;
        for x in m.iter() {
            put(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Mat)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |what: &str| Error::Validation(format!("{}: {what}", path.display()));
    let mut read = |n: usize| -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Validation(format!("{}: truncated checkpoint", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Ok(buf)
    };
    if read(8)? != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let u32_at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let count = u32_at(read(4)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(read(4)?) as usize;
        let name = String::from_utf8(read(len)?).map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rank = u32_at(read(4)?) as usize;
        let dims = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read(8)?.try_into().expect("8 bytes")) as usize))
            .collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [r, c] => (r, c),
            [n] => (1, n),
            _ => return Err(corrupt(&format!("tensor {name} has unsupported rank {rank}"))),
        };
        let raw = read(rows * cols * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Array2::from_shape_vec((rows, cols), values).expect("size matches shape")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub model: GavConfig,
    pub train: Option<TrainConfig>,
    pub seed: u64,
    pub param_count: usize,
    pub step: u64,
    pub epoch: usize,
    pub batch_in_epoch: usize,
    pub adam_step: u64,
    pub best_val_auc: Option<f64>,
    pub best_step: Option<u64>,
    pub evals_since_best: usize,
    pub stopped_early: bool,
}

/// Files of one checkpoint directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPaths {
    pub tensors: PathBuf,
    pub manifest: PathBuf,
}

impl CheckpointPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            tensors: dir.join(TENSOR_FILE),
            manifest: dir.join(MANIFEST_FILE),
        }
    }
}

fn optimizer_tensors<'a>(model: &'a GavModel, adam: &'a AdamState) -> Vec<(String, &'a Mat)> {
    let mut tensors: Vec<(String, &Mat)> = model.store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    for (i, (_, p)) in model.store.iter().enumerate() {
        tensors.push((format!("adam.m.{}", p.name), &adam.m[i]));
        tensors.push((format!("adam.v.{}", p.name), &adam.v[i]));
    }
    tensors
}

/// Writes parameters, optimizer moments and manifest into `dir`.
pub fn save(dir: &Path, model: &GavModel, adam: Option<&AdamState>, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = CheckpointPaths::in_dir(dir);
    let tensors = match adam {
        Some(adam) => optimizer_tensors(model, adam),
        None => model.store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect(),
    };
    write_tensors(&paths.tensors, &tensors)?;
    write_text(&paths.manifest, &(serde_json::to_string_pretty(manifest)? + "\n"))
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = CheckpointPaths::in_dir(dir).manifest;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Validation(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    Ok(manifest)
}

/// Loads a model (and optimizer state if stored) from `dir`.
pub fn load(dir: &Path) -> Result<(GavModel, Option<AdamState>, Manifest)> {
    let manifest = load_manifest(dir)?;
    let mut model = GavModel::new(manifest.model.clone(), manifest.seed)?;
    let tensors = read_tensors(&CheckpointPaths::in_dir(dir).tensors)?;
    let lookup = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m);
    let mut adam = AdamState::new(&model.store, manifest.train.as_ref().map_or(1e-3, |t| t.lr));
    let mut has_adam = true;
    let ids: Vec<_> = model.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (i, (id, name)) in ids.iter().enumerate() {
        let value = lookup(name).ok_or_else(|| Error::Validation(format!("checkpoint lacks parameter {name}")))?;
        let slot = &mut model.store.get_mut(*id).value;
        if value.dim() != slot.dim() {
            return Err(Error::Shape(format!("parameter {name}: stored {:?}, expected {:?}", value.dim(), slot.dim())));
        }
        slot.assign(value);
        match (lookup(&format!("adam.m.{name}")), lookup(&format!("adam.v.{name}"))) {
            (Some(m), Some(v)) if m.dim() == slot.dim() && v.dim() == slot.dim() => {
                adam.m[i].assign(m);
                adam.v[i].assign(v);
            }
            _ => has_adam = false,
        }
    }
    if model.param_count() != manifest.param_count {
        return Err(Error::Validation(format!(
            "manifest records {} parameters, model has {}",
            manifest.param_count,
            model.param_count()
        )));
    }
    adam.t = manifest.adam_step;
    Ok((model, has_adam.then_some(adam), manifest))
}

/// Manifest describing a training state.
pub fn manifest_for(state: &TrainState, config: &TrainConfig) -> Manifest {
    Manifest {
        format: FORMAT.to_string(),
        model: state.model.config.clone(),
        train: Some(config.clone()),
        seed: config.seed,
        param_count: state.model.param_count(),
        step: state.step,
        epoch: state.epoch,
        batch_in_epoch: state.batch_in_epoch,
        adam_step: state.adam.t,
        best_val_auc: state.best_val_auc(),
        best_step: state.best.as_ref().map(|b| b.step),
        evals_since_best: state.evals_since_best,
        stopped_early: state.stopped_early,
    }
}

/// Directory names used by a training run.
pub const LAST_DIR: &str = "last";
pub const BEST_DIR: &str = "best";
pub const HISTORY_FILE: &str = "history.json";
pub const LOSSES_FILE: &str = "losses.json";

/// Persists the resumable state under `out/last`, the best model under
/// `out/best` and the validation history.
pub fn save_train_state(out: &Path, state: &TrainState, config: &TrainConfig) -> Result<()> {
    let manifest = manifest_for(state, config);
    save(&out.join(LAST_DIR), &state.model, Some(&state.adam), &manifest)?;
    if let Some(best) = &state.best {
        let best_manifest = Manifest {
            step: best.step,
            ..manifest.clone()
        };
        save(&out.join(BEST_DIR), &best.model, None, &best_manifest)?;
    }
    write_text(&out.join(HISTORY_FILE), &(serde_json::to_string_pretty(&state.history)? + "\n"))?;
    write_text(&out.join(LOSSES_FILE), &(serde_json::to_string(&state.losses)? + "\n"))
}

/// Restores a training state written by [`save_train_state`].
pub fn load_train_state(out: &Path) -> Result<TrainState> {
    let (model, adam, manifest) = load(&out.join(LAST_DIR))?;
    let adam = adam.ok_or_else(|| Error::Validation("resume checkpoint lacks optimizer state".into()))?;
    let read_json = |name: &str| -> Result<String> {
        let path = out.join(name);
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };
    let history: Vec<HistoryEntry> = serde_json::from_str(&read_json(HISTORY_FILE)?)?;
    let losses: Vec<f64> = serde_json::from_str(&read_json(LOSSES_FILE)?)?;
    let best = match (manifest.best_val_auc, manifest.best_step) {
        (Some(val_auc), Some(step)) => Some(crate::train::BestModel {
            model: load(&out.join(BEST_DIR))?.0,
            val_auc,
            step,
        }),
        _ => None,
    };
    Ok(TrainState {
        model,
        adam,
        step: manifest.step,
        epoch: manifest.epoch,
        batch_in_epoch: manifest.batch_in_epoch,
        best,
        evals_since_best: manifest.evals_since_best,
        history,
        losses,
        stopped_early: manifest.stopped_early,
    })
}
